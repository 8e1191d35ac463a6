//! Bootstrap particle filter over the latent `(x_t, Z_t, q_t)` chain.
//!
//! The proposal is the model itself and the weight is the binomial
//! observation density, so the product of mean weights is an unbiased
//! estimate of `p(y_{1:T})`. Particles keep only the compartment counts and
//! the flow on the observed edge.
//!
//! Every particle draws from its own child stream keyed by `(step, index)`,
//! so a run is a deterministic function of the seed whether or not
//! propagation is parallel.

use rand::RngCore;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::ObservationModel;
use crate::model::CompartmentalSpec;
use crate::rand_kit::{log_binom_pmf, multinomial_into, SeededRng, TruncNormal};
use crate::simulator::{transition_step, StepScratch};

#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub x: Vec<u64>,
    pub z_edge: u64,
    pub q: f64,
    pub log_w: f64,
}

/// Draw for `q_t` shared across particles.
#[derive(Clone, Copy, Debug)]
pub enum ReportingLaw {
    Fixed(f64),
    TruncNormal(TruncNormal),
}

impl ReportingLaw {
    pub fn new(obs: &ObservationModel) -> Result<Self> {
        obs.validate()?;
        Ok(match *obs {
            ObservationModel::Fixed { q } => ReportingLaw::Fixed(q),
            ObservationModel::TruncNormal { mu_q, sigma2_q } => {
                ReportingLaw::TruncNormal(TruncNormal::unit(mu_q, sigma2_q)?)
            }
        })
    }

    fn draw(&self, rng: &mut SeededRng) -> f64 {
        match self {
            ReportingLaw::Fixed(q) => *q,
            ReportingLaw::TruncNormal(tn) => tn.sample(rng),
        }
    }
}

/// Work buffers reused across [`propagate_into`] calls.
pub struct PropagateScratch {
    step: StepScratch,
    z: Vec<u64>,
}

impl PropagateScratch {
    pub fn new(m: usize) -> Self {
        Self {
            step: StepScratch::new(m),
            z: vec![0; m * m],
        }
    }
}

/// Advances `particle` from `t - 1` to `t` under the model dynamics and
/// draws a fresh `q_t`. The weight is reset to zero.
pub fn propagate(
    rng: &mut SeededRng,
    particle: &Particle,
    spec: &CompartmentalSpec,
    law: &ReportingLaw,
    t: usize,
) -> Particle {
    let mut scratch = PropagateScratch::new(spec.m());
    let mut out = particle.clone();
    propagate_into(rng, particle, spec, law, t, &mut scratch, &mut out);
    out
}

pub fn propagate_into(
    rng: &mut SeededRng,
    particle: &Particle,
    spec: &CompartmentalSpec,
    law: &ReportingLaw,
    t: usize,
    scratch: &mut PropagateScratch,
    out: &mut Particle,
) {
    let m = spec.m();
    let edge = spec.obs_edge();
    out.x.resize(m, 0);
    transition_step(rng, spec, t, &particle.x, &mut scratch.step, &mut scratch.z, &mut out.x);
    out.z_edge = scratch.z[edge.from * m + edge.to];
    out.q = law.draw(rng);
    out.log_w = 0.0;
}

/// `log Binom(y; z_edge, q)`; `-inf` when `y > z_edge`.
pub fn weight(particle: &Particle, y: u64) -> f64 {
    log_binom_pmf(y, particle.z_edge, particle.q)
}

/// Effective sample size of unnormalized log weights.
pub fn effective_sample_size(log_weights: &[f64]) -> f64 {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    let (s, s2) = log_weights.iter().fold((0.0, 0.0), |(a, b), lw| {
        let w = (lw - max).exp();
        (a + w, b + w * w)
    });
    s * s / s2
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Systematic resampling: one uniform, `N` evenly spaced positions.
/// Fails when every weight is `-inf`; the step is filled in by the caller.
pub fn systematic_resample(rng: &mut SeededRng, log_weights: &[f64]) -> Result<Vec<usize>> {
    let n = log_weights.len();
    let lse = log_sum_exp(log_weights);
    if n == 0 || !lse.is_finite() {
        return Err(Error::ParticleDegeneracy { step: 0 });
    }
    let u0 = rng.uniform();
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut idx = 0;
    let last_positive = log_weights
        .iter()
        .rposition(|w| *w > f64::NEG_INFINITY)
        .unwrap_or(n - 1);
    for k in 0..n {
        let pos = (u0 + k as f64) / n as f64;
        while idx < last_positive {
            let next = cum + (log_weights[idx] - lse).exp();
            if pos < next {
                break;
            }
            cum = next;
            idx += 1;
        }
        out.push(idx);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct BpfOptions {
    pub particles: usize,
    /// Resample only when ESS < threshold · N. `None` resamples every step.
    pub ess_threshold: Option<f64>,
    /// Propagate particles on the rayon pool.
    pub parallel: bool,
}

impl BpfOptions {
    pub fn new(particles: usize) -> Self {
        Self {
            particles,
            ess_threshold: None,
            parallel: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PfOutput {
    pub log_likelihood: f64,
    /// ESS of the incremental weights before resampling, per step.
    pub ess_trace: Vec<f64>,
    /// `log p̂(y_t | y_{1:t-1})` per step.
    pub log_normalizers: Vec<f64>,
}

/// Bootstrap particle filter estimate of `log p(y_{1:T})`.
pub fn run_bpf(
    spec: &CompartmentalSpec,
    obs: &ObservationModel,
    ys: &[u64],
    opts: &BpfOptions,
    rng: &mut SeededRng,
) -> Result<PfOutput> {
    let n_part = opts.particles;
    if n_part < 2 {
        return Err(Error::Validation("particle filter needs at least 2 particles".into()));
    }
    if ys.is_empty() {
        return Err(Error::Validation("observation series is empty".into()));
    }
    let law = ReportingLaw::new(obs)?;
    let m = spec.m();
    let root = SeededRng::new(rng.next_u64());

    let init_rng = root.child(0);
    let mut particles: Vec<Particle> = (0..n_part)
        .map(|i| {
            let mut r = init_rng.child(i as u64);
            let mut x = vec![0; m];
            multinomial_into(&mut r, spec.n(), spec.pi0().as_slice(), &mut x);
            Particle {
                x,
                z_edge: 0,
                q: 0.0,
                log_w: 0.0,
            }
        })
        .collect();
    let mut next = particles.clone();
    // normalized log weights carried between steps
    let mut log_w_norm = vec![-(n_part as f64).ln(); n_part];
    let mut resample_rng = root.child(u64::MAX);

    let mut ess_trace = Vec::with_capacity(ys.len());
    let mut log_normalizers = Vec::with_capacity(ys.len());
    let mut total = 0.0;
    let mut inc = vec![0.0; n_part];
    let mut combined = vec![0.0; n_part];

    for (idx, &y) in ys.iter().enumerate() {
        let t = idx + 1;
        let step_rng = root.child(t as u64);
        let advance = |i: usize, src: &Particle, dst: &mut Particle, scratch: &mut PropagateScratch| {
            let mut r = step_rng.child(i as u64);
            propagate_into(&mut r, src, spec, &law, t, scratch, dst);
            dst.log_w = weight(dst, y);
        };
        if opts.parallel {
            next.par_iter_mut()
                .enumerate()
                .for_each_init(
                    || PropagateScratch::new(m),
                    |scratch, (i, dst)| advance(i, &particles[i], dst, scratch),
                );
        } else {
            let mut scratch = PropagateScratch::new(m);
            for (i, dst) in next.iter_mut().enumerate() {
                advance(i, &particles[i], dst, &mut scratch);
            }
        }
        std::mem::swap(&mut particles, &mut next);

        for (i, p) in particles.iter().enumerate() {
            inc[i] = p.log_w;
            combined[i] = log_w_norm[i] + p.log_w;
        }
        ess_trace.push(effective_sample_size(&inc));
        let log_z = log_sum_exp(&combined);
        if !log_z.is_finite() {
            return Err(Error::ParticleDegeneracy { step: t });
        }
        log_normalizers.push(log_z);
        total += log_z;

        let ess_now = effective_sample_size(&combined);
        let resample = match opts.ess_threshold {
            None => true,
            Some(th) => ess_now < th * n_part as f64,
        };
        if resample {
            let indices = systematic_resample(&mut resample_rng, &combined)
                .map_err(|_| Error::ParticleDegeneracy { step: t })?;
            for (dst, &src) in next.iter_mut().zip(&indices) {
                dst.clone_from(&particles[src]);
            }
            std::mem::swap(&mut particles, &mut next);
            log_w_norm.iter_mut().for_each(|w| *w = -(n_part as f64).ln());
        } else {
            for (w, c) in log_w_norm.iter_mut().zip(&combined) {
                *w = c - log_z;
            }
        }
    }
    Ok(PfOutput {
        log_likelihood: total,
        ess_trace,
        log_normalizers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Kernel, ObsEdge, ProbVector, StochMatrix};

    fn flip_spec(n: u64) -> CompartmentalSpec {
        CompartmentalSpec::new(
            n,
            ProbVector::new(vec![1.0, 0.0]).unwrap(),
            Kernel::Constant(StochMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap()),
            ObsEdge::new(1, 2).unwrap(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_kernel_propagation() {
        let spec = flip_spec(30);
        let law = ReportingLaw::new(&ObservationModel::Fixed { q: 0.3 }).unwrap();
        let p = Particle {
            x: vec![30, 0],
            z_edge: 0,
            q: 0.0,
            log_w: 0.0,
        };
        let mut r = SeededRng::new(1);
        let next = propagate(&mut r, &p, &spec, &law, 1);
        assert_eq!(next.z_edge, 30);
        assert_eq!(next.x, vec![0, 30]);
        assert_eq!(next.q, 0.3);
    }

    #[test]
    fn weight_cases() {
        let mut p = Particle {
            x: vec![0, 0],
            z_edge: 5,
            q: 0.0,
            log_w: 0.0,
        };
        assert_eq!(weight(&p, 0), 0.0);
        assert_eq!(weight(&p, 6), f64::NEG_INFINITY);
        p.z_edge = 100;
        p.q = 0.5;
        // C(100, 45) 0.5^100 from exact factorial ratios
        let log_c: f64 = (56..=100).map(|k| (k as f64).ln()).sum::<f64>()
            - (1..=45).map(|k| (k as f64).ln()).sum::<f64>();
        let expected = log_c + 100.0 * 0.5f64.ln();
        assert!((weight(&p, 45) - expected).abs() < 1e-10);
    }

    #[test]
    fn resample_uniform_and_degenerate() {
        let mut r = SeededRng::new(3);
        let idx = systematic_resample(&mut r, &[0.0; 8]).unwrap();
        assert_eq!(idx, (0..8).collect::<Vec<_>>());
        let one = systematic_resample(
            &mut r,
            &[f64::NEG_INFINITY, f64::NEG_INFINITY, -3.0, f64::NEG_INFINITY],
        )
        .unwrap();
        assert_eq!(one, vec![2; 4]);
        assert!(matches!(
            systematic_resample(&mut r, &[f64::NEG_INFINITY; 3]),
            Err(Error::ParticleDegeneracy { .. })
        ));
        for _ in 0..100 {
            let idx = systematic_resample(&mut r, &[0.75f64.ln(), 0.25f64.ln(), f64::NEG_INFINITY, f64::NEG_INFINITY]);
            let idx = idx.unwrap();
            let c0 = idx.iter().filter(|i| **i == 0).count();
            let c1 = idx.iter().filter(|i| **i == 1).count();
            assert_eq!((c0, c1), (3, 1));
        }
    }

    #[test]
    fn ess_bounds() {
        assert!((effective_sample_size(&[0.0; 10]) - 10.0).abs() < 1e-12);
        let ess = effective_sample_size(&[0.0, -1.0, -5.0, -0.3]);
        assert!(ess > 0.0 && ess <= 4.0);
    }

    #[test]
    fn deterministic_model_gives_exact_likelihood() {
        let spec = flip_spec(40);
        let obs = ObservationModel::Fixed { q: 0.3 };
        for n in [2, 17, 200] {
            let out = run_bpf(&spec, &obs, &[11], &BpfOptions::new(n), &mut SeededRng::new(9)).unwrap();
            assert!((out.log_likelihood - log_binom_pmf(11, 40, 0.3)).abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let spec = CompartmentalSpec::new(
            5000,
            ProbVector::new(vec![0.995, 0.005, 0.0]).unwrap(),
            Kernel::Sir { beta: 0.3, gamma: 0.2 },
            ObsEdge::new(1, 2).unwrap(),
            1.0,
        )
        .unwrap();
        let obs = ObservationModel::TruncNormal { mu_q: 0.5, sigma2_q: 0.1 };
        let ys = [5, 8, 12, 9, 15, 20];
        let mut opts = BpfOptions::new(300);
        let a = run_bpf(&spec, &obs, &ys, &opts, &mut SeededRng::new(4)).unwrap();
        opts.parallel = true;
        let b = run_bpf(&spec, &obs, &ys, &opts, &mut SeededRng::new(4)).unwrap();
        assert_eq!(a.log_likelihood, b.log_likelihood);
        assert_eq!(a.ess_trace, b.ess_trace);
        assert!(a.ess_trace.iter().all(|e| *e > 0.0 && *e <= 300.0));
    }

    #[test]
    fn impossible_data_reports_step() {
        let spec = flip_spec(10);
        let obs = ObservationModel::Fixed { q: 0.5 };
        let err = run_bpf(&spec, &obs, &[3, 2], &BpfOptions::new(10), &mut SeededRng::new(1)).unwrap_err();
        assert!(matches!(err, Error::ParticleDegeneracy { step: 2 }));
    }
}
