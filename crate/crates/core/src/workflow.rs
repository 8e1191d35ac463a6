//! Multi-run orchestration: replicated simulate-and-fit studies, posterior
//! predictive draws, likelihood timing, and a particle-filter objective for
//! pseudo-marginal MCMC.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Model, Objective, ParamConfig};
use crate::error::{Error, Result};
use crate::estimators::{coordinate_ascent, log_prior, mean, sample_sd, Prior};
use crate::filter::{approx_loglik, ObservationModel};
use crate::model::CompartmentalSpec;
use crate::rand_kit::SeededRng;
use crate::simulator::simulate;
use crate::smc::{run_bpf, BpfOptions};

#[derive(Clone, Debug)]
pub struct ReplicateOptions {
    pub replicates: usize,
    pub horizon: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_cycles: usize,
    /// Worker threads for the replicate fan-out; `None` uses the global pool.
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReplicateFit {
    pub replicate: usize,
    pub estimate: Vec<f64>,
    pub loglik: f64,
    pub cycles: usize,
    pub total_observed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReplicateSummary {
    pub names: Vec<String>,
    pub truth: Vec<f64>,
    pub fits: Vec<ReplicateFit>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Replicates whose fit failed, with the reason.
    pub failures: Vec<(usize, String)>,
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Simulates `replicates` data sets from `truth` and fits the free
/// parameters of each by coordinate ascent on the approximate likelihood.
/// Replicate `r` uses child stream `r` of `seed`, so results do not depend
/// on the thread count.
pub fn replicate_mle(
    truth: &Model,
    params: &[ParamConfig],
    opts: &ReplicateOptions,
) -> Result<ReplicateSummary> {
    let space = truth.param_space(params)?;
    let names = space.names();
    let truth_values: Vec<f64> = names.iter().map(|n| truth.param(n).unwrap_or(f64::NAN)).collect();
    let spec = truth.spec()?;
    let obs = *truth.observation();
    let root = SeededRng::new(opts.seed);

    let fit_one = |r: usize| -> Result<ReplicateFit> {
        let mut rng = root.child(r as u64);
        let traj = simulate(&spec, &obs, opts.horizon, &mut rng)?;
        let objective = Objective::new(truth, params, &traj.y);
        let res = coordinate_ascent(|x| objective.loglik(x), &space, opts.tol, opts.max_cycles)?;
        Ok(ReplicateFit {
            replicate: r,
            estimate: res.params,
            loglik: res.value,
            cycles: res.cycles,
            total_observed: traj.y.iter().sum(),
        })
    };
    let results: Vec<Result<ReplicateFit>> =
        with_pool(opts.threads, || (0..opts.replicates).into_par_iter().map(fit_one).collect())?;

    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(f) => fits.push(f),
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                failures.push((r, e.to_string()));
            }
        }
    }
    let column = |k: usize| fits.iter().map(|f| f.estimate[k]).collect::<Vec<_>>();
    let means = (0..names.len()).map(|k| mean(&column(k))).collect();
    let sds = (0..names.len()).map(|k| sample_sd(&column(k))).collect();
    Ok(ReplicateSummary {
        names,
        truth: truth_values,
        fits,
        means,
        sds,
        failures,
    })
}

/// Mean absolute lag-1 increment `mean_t |y_t - y_{t-1}|`.
pub fn lag1_mean_abs_increment(ys: &[u64]) -> f64 {
    if ys.len() < 2 {
        return 0.0;
    }
    let s: f64 = ys.windows(2).map(|w| (w[1] as f64 - w[0] as f64).abs()).sum();
    s / (ys.len() - 1) as f64
}

/// Simulated series at `draws` posterior samples spaced evenly through
/// `samples`. Draw `k` uses child stream `k` of `rng`.
pub fn posterior_predictive(
    model: &Model,
    names: &[String],
    samples: &[Vec<f64>],
    draws: usize,
    horizon: usize,
    rng: &SeededRng,
) -> Result<Vec<Vec<u64>>> {
    if samples.is_empty() || draws == 0 {
        return Err(Error::Validation("posterior predictive needs samples and draws".into()));
    }
    (0..draws)
        .map(|k| {
            let idx = k * samples.len() / draws;
            let (spec, obs) = model.instantiate(names, &samples[idx])?;
            Ok(simulate(&spec, &obs, horizon, &mut rng.child(k as u64))?.y)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct TimingReport {
    pub lawpal_seconds: f64,
    pub bpf_seconds: f64,
    /// `bpf_seconds / lawpal_seconds`.
    pub ratio: f64,
    pub lawpal_evals: usize,
    pub bpf_evals: usize,
    pub particles: usize,
    pub lawpal_loglik: f64,
    pub bpf_loglik: f64,
}

/// Mean wall-clock time of one approximate-likelihood evaluation and one
/// sequential particle-filter evaluation on the same data.
pub fn time_likelihoods(
    spec: &CompartmentalSpec,
    obs: &ObservationModel,
    ys: &[u64],
    particles: usize,
    bpf_evals: usize,
    rng: &SeededRng,
) -> Result<TimingReport> {
    let lawpal_loglik = approx_loglik(spec, obs, ys)?;
    let start = Instant::now();
    let mut evals = 0usize;
    while evals < 10 || start.elapsed().as_secs_f64() < 0.2 {
        std::hint::black_box(approx_loglik(spec, obs, std::hint::black_box(ys))?);
        evals += 1;
    }
    let lawpal_seconds = start.elapsed().as_secs_f64() / evals as f64;

    let opts = BpfOptions::new(particles);
    let bpf_evals = bpf_evals.max(1);
    let start = Instant::now();
    let mut bpf_loglik = 0.0;
    for k in 0..bpf_evals {
        bpf_loglik = run_bpf(spec, obs, ys, &opts, &mut rng.child(k as u64))?.log_likelihood;
    }
    let bpf_seconds = start.elapsed().as_secs_f64() / bpf_evals as f64;
    Ok(TimingReport {
        lawpal_seconds,
        bpf_seconds,
        ratio: bpf_seconds / lawpal_seconds,
        lawpal_evals: evals,
        bpf_evals,
        particles,
        lawpal_loglik,
        bpf_loglik,
    })
}

/// Log-posterior with a particle-filter likelihood estimate. Evaluation `k`
/// uses child stream `k` of the seed, so a chain is reproducible.
pub struct PfObjective<'a> {
    model: &'a Model,
    names: Vec<String>,
    priors: Vec<Prior>,
    ys: &'a [u64],
    opts: BpfOptions,
    root: SeededRng,
    evals: u64,
}

impl<'a> PfObjective<'a> {
    pub fn new(model: &'a Model, params: &[ParamConfig], ys: &'a [u64], opts: BpfOptions, seed: u64) -> Self {
        Self {
            model,
            names: params.iter().map(|p| p.name.clone()).collect(),
            priors: params.iter().map(|p| p.prior.unwrap_or(Prior::Flat)).collect(),
            ys,
            opts,
            root: SeededRng::new(seed),
            evals: 0,
        }
    }

    pub fn log_post(&mut self, values: &[f64]) -> f64 {
        let lp: f64 = self.priors.iter().zip(values).map(|(p, v)| log_prior(p, *v)).sum();
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        let Ok((spec, obs)) = self.model.instantiate(&self.names, values) else {
            return f64::NEG_INFINITY;
        };
        let mut rng = self.root.child(self.evals);
        self.evals += 1;
        match run_bpf(&spec, &obs, self.ys, &self.opts, &mut rng) {
            Ok(out) => lp + out.log_likelihood,
            Err(_) => f64::NEG_INFINITY,
        }
    }

    pub fn evaluations(&self) -> u64 {
        self.evals
    }
}
