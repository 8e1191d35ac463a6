use std::path::Path;
use std::time::Instant;

use lawpal::config::EstimationConfig;
use lawpal::workflow::{replicate_mle, time_likelihoods, PfObjective, ReplicateOptions};
use lawpal::{
    coordinate_ascent, limit_recursion, load_config, load_series, run_bpf, run_filter, rwm_chain, save_series,
    tune_burn_step_var, BpfOptions, Chain, Error, IncidenceSeries, Model, Objective, ParamSpace, Result,
    RunConfig, RwmOptions, SeededRng,
};
use serde::Serialize;
use serde_json::json;

use crate::output::{indexed, num, pairs, write_json, CsvWriter};
use crate::Common;

/// Pilot tries before the burn-in variance is accepted as is.
const PILOT_TRIES: usize = 8;
/// Particle-filter evaluations timed by `bench`.
const BENCH_BPF_EVALS: usize = 5;

struct Ctx {
    cfg: RunConfig,
    model: Model,
    seed: u64,
}

fn context(c: &Common) -> Result<Ctx> {
    let mut cfg = load_config(&c.config)?;
    let ex = &mut cfg.execution;
    if let Some(v) = c.seed {
        ex.seed = v;
    }
    if let Some(v) = c.particles {
        ex.particles = v;
    }
    if let Some(v) = c.iters {
        ex.iters = v;
    }
    if let Some(v) = c.burnin {
        ex.burnin = v;
    }
    if let Some(v) = c.thin {
        ex.thin = v;
    }
    if let Some(v) = c.replicates {
        ex.replicates = v;
    }
    if c.threads.is_some() {
        ex.threads = c.threads;
    }
    cfg.validate()?;
    let model = Model::from_config(&cfg)?;
    std::fs::create_dir_all(&c.out)?;
    Ok(Ctx {
        seed: cfg.execution.seed,
        cfg,
        model,
    })
}

fn data(c: &Common, command: &str) -> Result<Vec<u64>> {
    match &c.data {
        Some(p) => Ok(load_series(p)?.y),
        None => Err(Error::Validation(format!("{command} needs --data"))),
    }
}

fn horizon(ctx: &Ctx, command: &str) -> Result<usize> {
    ctx.cfg
        .execution
        .horizon
        .ok_or_else(|| Error::Validation(format!("{command} needs execution.horizon in the config")))
}

fn free_params(ctx: &Ctx, command: &str) -> Result<ParamSpace> {
    if ctx.cfg.estimation.params.is_empty() {
        return Err(Error::Validation(format!("{command} needs estimation.params in the config")));
    }
    ctx.model.param_space(&ctx.cfg.estimation.params)
}

pub fn simulate(c: &Common) -> Result<()> {
    let ctx = context(c)?;
    let spec = ctx.model.spec()?;
    let t_max = horizon(&ctx, "simulate")?;
    let traj = lawpal::simulate(&spec, ctx.model.observation(), t_max, &mut SeededRng::new(ctx.seed))?;
    let m = spec.m();

    let mut header = vec!["t".to_string()];
    header.extend(indexed("x", m));
    header.extend(["q".to_string(), "y".to_string()]);
    header.extend(pairs("z", m));
    let mut w = CsvWriter::create(&c.out.join("trajectory.csv"), &header)?;
    for t in 0..=t_max {
        let mut row = vec![t.to_string()];
        row.extend(traj.x[t].iter().map(|v| v.to_string()));
        if t == 0 {
            row.extend(std::iter::repeat_n(String::new(), 2 + m * m));
        } else {
            row.push(num(traj.q[t - 1]));
            row.push(traj.y[t - 1].to_string());
            row.extend(traj.z[t - 1].iter().map(|v| v.to_string()));
        }
        w.row(&row)?;
    }
    w.finish()?;
    save_series(&c.out.join("incidence.csv"), &IncidenceSeries::new(traj.y.clone()))?;
    println!("simulated {t_max} steps, {} observed cases", traj.y.iter().sum::<u64>());
    Ok(())
}

pub fn filter(c: &Common, scalar_only: bool) -> Result<()> {
    let ctx = context(c)?;
    let command = if scalar_only { "loglik" } else { "filter" };
    let ys = data(c, command)?;
    let spec = ctx.model.spec()?;
    let out = run_filter(&spec, ctx.model.observation(), &ys)?;
    let m = spec.m();
    let edge = spec.obs_edge();

    let mut header: Vec<String> = ["t", "Lambda_ij_pred", "q_bar", "s2", "ll_inc"].map(String::from).to_vec();
    header.extend(indexed("lambda_filt", m));
    let mut w = CsvWriter::create(&c.out.join("filter.csv"), &header)?;
    for (k, s) in out.steps.iter().enumerate() {
        let mut row = vec![
            (k + 1).to_string(),
            num(s.lambda_pred[(edge.from, edge.to)]),
            num(s.q_bar),
            num(s.s2),
            num(s.ll_inc),
        ];
        row.extend(s.lambda_filt.iter().map(|v| num(*v)));
        w.row(&row)?;
    }
    w.finish()?;

    let flagged = out.flagged_steps();
    let clamped: Vec<usize> = out
        .steps
        .iter()
        .enumerate()
        .filter(|(_, s)| s.clamped)
        .map(|(k, _)| k + 1)
        .collect();
    write_json(
        &c.out.join(format!("{command}.json")),
        &json!({
            "total_ll": finite_or_string(out.total_ll),
            "steps": ys.len(),
            "flagged_steps": flagged,
            "clamped_steps": clamped,
            "observation": ctx.model.observation(),
        }),
    )?;
    if !flagged.is_empty() {
        return Err(Error::NonFinite(format!(
            "log-likelihood is -inf: observed counts impossible under the predicted flow at steps {flagged:?}"
        )));
    }
    println!("{}", num(out.total_ll));
    Ok(())
}

fn finite_or_string(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(v.to_string())
    }
}

fn bpf_options(ctx: &Ctx) -> BpfOptions {
    let mut opts = BpfOptions::new(ctx.cfg.execution.particles);
    opts.ess_threshold = ctx.cfg.execution.ess_threshold;
    opts
}

pub fn pf_loglik(c: &Common) -> Result<()> {
    let ctx = context(c)?;
    let ys = data(c, "pf-loglik")?;
    let spec = ctx.model.spec()?;
    let opts = bpf_options(&ctx);
    let start = Instant::now();
    let out = run_bpf(&spec, ctx.model.observation(), &ys, &opts, &mut SeededRng::new(ctx.seed))?;
    let seconds = start.elapsed().as_secs_f64();

    let header = ["t", "ess", "log_normalizer"].map(String::from);
    let mut w = CsvWriter::create(&c.out.join("pf_ess.csv"), &header)?;
    for (k, (e, l)) in out.ess_trace.iter().zip(&out.log_normalizers).enumerate() {
        w.row(&[(k + 1).to_string(), num(*e), num(*l)])?;
    }
    w.finish()?;
    write_json(
        &c.out.join("pf_loglik.json"),
        &json!({
            "log_likelihood": out.log_likelihood,
            "particles": opts.particles,
            "seed": ctx.seed,
            "seconds": seconds,
        }),
    )?;
    println!("{}", num(out.log_likelihood));
    Ok(())
}

#[derive(Serialize)]
struct MleFit<'a> {
    names: &'a [String],
    estimate: &'a [f64],
    loglik: f64,
    cycles: usize,
}

pub fn fit_mle(c: &Common) -> Result<()> {
    let ctx = context(c)?;
    let space = free_params(&ctx, "fit-mle")?;
    let names = space.names();
    let est = &ctx.cfg.estimation;

    if c.data.is_some() {
        if c.replicates.is_some() {
            return Err(Error::Validation("fit-mle takes either --data or --replicates, not both".into()));
        }
        let ys = data(c, "fit-mle")?;
        let obj = Objective::new(&ctx.model, &est.params, &ys);
        let res = coordinate_ascent(|x| obj.loglik(x), &space, est.tol, est.max_cycles)?;
        let mut w = CsvWriter::create(&c.out.join("mle_trace.csv"), &["cycle".into(), "loglik".into()])?;
        for (k, v) in res.trace.iter().enumerate() {
            w.row(&[(k + 1).to_string(), num(*v)])?;
        }
        w.finish()?;
        write_json(
            &c.out.join("mle.json"),
            &MleFit {
                names: &names,
                estimate: &res.params,
                loglik: res.value,
                cycles: res.cycles,
            },
        )?;
        for (n, v) in names.iter().zip(&res.params) {
            println!("{n:>12} {}", num(*v));
        }
        return Ok(());
    }

    let opts = ReplicateOptions {
        replicates: ctx.cfg.execution.replicates,
        horizon: horizon(&ctx, "fit-mle")?,
        seed: ctx.seed,
        tol: est.tol,
        max_cycles: est.max_cycles,
        threads: ctx.cfg.execution.threads,
    };
    let summary = replicate_mle(&ctx.model, &est.params, &opts)?;
    let mut header = vec!["replicate".to_string()];
    header.extend(names.iter().cloned());
    header.extend(["loglik", "cycles", "total_observed"].map(String::from));
    let mut w = CsvWriter::create(&c.out.join("mle_replicates.csv"), &header)?;
    for f in &summary.fits {
        let mut row = vec![f.replicate.to_string()];
        row.extend(f.estimate.iter().map(|v| num(*v)));
        row.extend([num(f.loglik), f.cycles.to_string(), f.total_observed.to_string()]);
        w.row(&row)?;
    }
    w.finish()?;
    write_json(&c.out.join("mle_summary.json"), &summary)?;
    println!("{:>12} {:>10} {:>10} {:>10}", "parameter", "truth", "mean", "sd");
    for k in 0..names.len() {
        println!(
            "{:>12} {:>10.4} {:>10.4} {:>10.4}",
            names[k], summary.truth[k], summary.means[k], summary.sds[k]
        );
    }
    if !summary.failures.is_empty() {
        eprintln!("{} of {} replicates failed", summary.failures.len(), opts.replicates);
    }
    Ok(())
}

fn rwm_options(ctx: &Ctx, burn_step_var: f64) -> RwmOptions {
    let ex = &ctx.cfg.execution;
    RwmOptions {
        burn_iters: ex.burnin,
        burn_step_var,
        main_iters: ex.iters,
        thin: ex.thin,
        adapt_rounds: ctx.cfg.estimation.adapt_rounds,
    }
}

/// Optional mode start and pilot tuning, driven by the estimation block.
/// `deterministic` is the log posterior used for both; for particle runs it
/// is the approximate one.
fn prepare_chain<F: FnMut(&[f64]) -> f64>(
    mut deterministic: F,
    space: ParamSpace,
    est: &EstimationConfig,
    burn_iters: usize,
    root: &SeededRng,
) -> Result<(ParamSpace, f64)> {
    let space = if est.start_at_mode {
        let mode = coordinate_ascent(&mut deterministic, &space, est.tol, est.max_cycles)?;
        log::info!("chain starts at the mode {:?} (log posterior {})", mode.params, mode.value);
        space.with_init(&mode.params)?
    } else {
        space
    };
    let var = match est.pilot_min_accept {
        Some(a) => {
            let (v, rate) = tune_burn_step_var(
                &mut deterministic,
                &space,
                est.burn_step_var,
                burn_iters,
                a,
                PILOT_TRIES,
                &root.child(1),
            )?;
            log::info!("burn-in variance {v:e} (pilot acceptance {rate:.3})");
            v
        }
        None => est.burn_step_var,
    };
    Ok((space, var))
}

fn write_chain(out: &Path, chain: &Chain, thin: usize, burn_step_var: f64, extra: serde_json::Value) -> Result<()> {
    let mut header = vec!["iter".to_string()];
    header.extend(chain.names.iter().cloned());
    header.push("log_post".into());
    let mut w = CsvWriter::create(&out.join("chain.csv"), &header)?;
    for (k, (s, lp)) in chain.samples.iter().zip(&chain.log_post).enumerate() {
        let mut row = vec![((k + 1) * thin).to_string()];
        row.extend(s.iter().map(|v| num(*v)));
        row.push(num(*lp));
        w.row(&row)?;
    }
    w.finish()?;
    write_json(
        &out.join("chain_summary.json"),
        &json!({
            "summary": chain.summary(),
            "proposal_cov": chain.proposal_cov,
            "burn_step_var": burn_step_var,
            "run": extra,
        }),
    )?;
    let s = chain.summary();
    println!("acceptance {:.3} (burn-in {:.3})", s.acceptance_rate, s.burn_acceptance_rate);
    for k in 0..s.names.len() {
        println!("{:>12} {:>12.6} {:>12.6}", s.names[k], s.means[k], s.sds[k]);
    }
    Ok(())
}

pub fn fit_mh(c: &Common) -> Result<()> {
    let ctx = context(c)?;
    let space = free_params(&ctx, "fit-mh")?;
    let ys = data(c, "fit-mh")?;
    let est = &ctx.cfg.estimation;
    let obj = Objective::new(&ctx.model, &est.params, &ys);
    let root = SeededRng::new(ctx.seed);
    let (space, var) = prepare_chain(|x| obj.log_post(x), space, est, ctx.cfg.execution.burnin, &root)?;
    let chain = rwm_chain(|x| obj.log_post(x), &space, &rwm_options(&ctx, var), &mut root.child(0))?;
    write_chain(
        &c.out,
        &chain,
        ctx.cfg.execution.thin,
        var,
        json!({ "likelihood": "approximate", "seed": ctx.seed, "start": space.init() }),
    )
}

pub fn fit_pmmh(c: &Common) -> Result<()> {
    let ctx = context(c)?;
    let space = free_params(&ctx, "fit-pmmh")?;
    let ys = data(c, "fit-pmmh")?;
    let est = &ctx.cfg.estimation;
    let approx = Objective::new(&ctx.model, &est.params, &ys);
    let root = SeededRng::new(ctx.seed);
    let (space, var) = prepare_chain(|x| approx.log_post(x), space, est, ctx.cfg.execution.burnin, &root)?;
    let mut pf = PfObjective::new(&ctx.model, &est.params, &ys, bpf_options(&ctx), root.child(2).seed());
    let chain = rwm_chain(|x| pf.log_post(x), &space, &rwm_options(&ctx, var), &mut root.child(0))?;
    write_chain(
        &c.out,
        &chain,
        ctx.cfg.execution.thin,
        var,
        json!({
            "likelihood": "particle",
            "particles": ctx.cfg.execution.particles,
            "pf_evaluations": pf.evaluations(),
            "seed": ctx.seed,
            "start": space.init(),
        }),
    )
}

pub fn limit(c: &Common) -> Result<()> {
    let ctx = context(c)?;
    let spec = ctx.model.spec()?;
    let t_max = horizon(&ctx, "limit")?;
    let states = limit_recursion(&spec, t_max)?;
    let m = spec.m();
    let mut header = vec!["t".to_string()];
    header.extend(indexed("nu", m));
    header.extend(pairs("N", m));
    let mut w = CsvWriter::create(&c.out.join("limit.csv"), &header)?;
    let mut row = vec!["0".to_string()];
    row.extend(spec.pi0().as_slice().iter().map(|v| num(*v)));
    row.extend(std::iter::repeat_n(String::new(), m * m));
    w.row(&row)?;
    for (k, s) in states.iter().enumerate() {
        let mut row = vec![(k + 1).to_string()];
        row.extend(s.nu.iter().map(|v| num(*v)));
        row.extend(s.flows.as_slice().iter().map(|v| num(*v)));
        w.row(&row)?;
    }
    w.finish()?;
    println!("limit written for {t_max} steps");
    Ok(())
}

pub fn bench(c: &Common) -> Result<()> {
    let ctx = context(c)?;
    let spec = ctx.model.spec()?;
    let root = SeededRng::new(ctx.seed);
    let ys = match &c.data {
        Some(p) => load_series(p)?.y,
        None => lawpal::simulate(&spec, ctx.model.observation(), horizon(&ctx, "bench")?, &mut root.child(0))?.y,
    };
    let rep = time_likelihoods(
        &spec,
        ctx.model.observation(),
        &ys,
        ctx.cfg.execution.particles,
        BENCH_BPF_EVALS,
        &root.child(1),
    )?;
    write_json(&c.out.join("bench.json"), &json!({ "timing": rep, "steps": ys.len(), "seed": ctx.seed }))?;
    println!(
        "approximate likelihood {:.3e} s, particle filter (N={}) {:.3e} s, ratio {:.1}",
        rep.lawpal_seconds, rep.particles, rep.bpf_seconds, rep.ratio
    );
    Ok(())
}
