//! Laplace-within-Poisson assumed-density filter.
//!
//! The latent flows are carried as independent Poisson intensities. Each step
//! predicts `Λ_t` from the filtered compartment intensities, integrates the
//! reporting probability out of the observed edge with a closed-form Laplace
//! approximation, and moment-matches the flow posterior back to a Poisson
//! matrix. The fixed-`q` variant (PAL) skips the Laplace step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{eta_normalize_into, CompartmentalSpec, ObsEdge, SquareMatrix};
use crate::rand_kit::{log_gamma, log_poisson_pmf, TruncNormal};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Law of the per-step reporting probability `q_t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservationModel {
    /// `q_t = q` for every step (equi-dispersed).
    Fixed { q: f64 },
    /// `q_t ~ N_[0,1](mu_q, sigma2_q)` independently (over-dispersed).
    TruncNormal { mu_q: f64, sigma2_q: f64 },
}

impl ObservationModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ObservationModel::Fixed { q } if !(0.0..=1.0).contains(&q) => {
                Err(Error::Validation(format!("fixed reporting probability {q} outside [0, 1]")))
            }
            ObservationModel::TruncNormal { mu_q, sigma2_q } => {
                if !(0.0..=1.0).contains(&mu_q) {
                    return Err(Error::Validation(format!("mu_q = {mu_q} outside [0, 1]")));
                }
                if !(sigma2_q > 0.0 && sigma2_q.is_finite()) {
                    return Err(Error::Validation(format!("sigma2_q = {sigma2_q} must be positive")));
                }
                Ok(())
            }
            ObservationModel::Fixed { .. } => Ok(()),
        }
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        match (self, name) {
            (ObservationModel::Fixed { q }, "q") | (ObservationModel::Fixed { q }, "mu_q") => Some(*q),
            (ObservationModel::TruncNormal { mu_q, .. }, "mu_q") => Some(*mu_q),
            (ObservationModel::TruncNormal { sigma2_q, .. }, "sigma2_q") => Some(*sigma2_q),
            _ => None,
        }
    }

    /// Sets `mu_q` / `sigma2_q`. For the fixed model, `mu_q` and `q` are aliases.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        match (self, name) {
            (ObservationModel::Fixed { q }, "q") | (ObservationModel::Fixed { q }, "mu_q") => *q = value,
            (ObservationModel::TruncNormal { mu_q, .. }, "mu_q") => *mu_q = value,
            (ObservationModel::TruncNormal { sigma2_q, .. }, "sigma2_q") => *sigma2_q = value,
            (_, other) => {
                return Err(Error::Validation(format!(
                    "observation model has no parameter '{other}'"
                )))
            }
        }
        Ok(())
    }
}

/// Filter state after assimilating `y_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterStep {
    /// Predicted flow intensities `Λ_t`.
    pub lambda_pred: SquareMatrix,
    /// Mode of `q_t | y_{1:t}` (or the fixed `q`).
    pub q_bar: f64,
    /// Laplace variance of `q_t | y_{1:t}`; zero for the fixed model.
    pub s2: f64,
    /// Filtered flow intensities `Λ̄_t`.
    pub lambda_filt_flows: SquareMatrix,
    /// Filtered compartment intensities `λ̄_t = 1ᵀ Λ̄_t`.
    pub lambda_filt: Vec<f64>,
    /// Approximate `log p(y_t | y_{1:t-1})`.
    pub ll_inc: f64,
    /// The unconstrained mode exceeded 1 and was clamped.
    pub clamped: bool,
    /// `y_t > 0` on an edge with zero predicted flow.
    pub impossible: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutput {
    pub steps: Vec<FilterStep>,
    pub total_ll: f64,
}

impl FilterOutput {
    /// Indices (1-based) of steps whose increment is `-inf`.
    pub fn flagged_steps(&self) -> Vec<usize> {
        self.steps
            .iter()
            .enumerate()
            .filter(|(_, s)| s.impossible)
            .map(|(i, _)| i + 1)
            .collect()
    }
}

/// `Λ_t = (λ̄_{t-1} ⊗ 1) ∘ K_{t, η(λ̄_{t-1})}`.
pub fn predict_step(spec: &CompartmentalSpec, t: usize, lambda_prev: &[f64]) -> Result<SquareMatrix> {
    let m = spec.m();
    if lambda_prev.len() != m {
        return Err(Error::Validation(format!(
            "intensity vector has length {}, model has {m} compartments",
            lambda_prev.len()
        )));
    }
    let mut eta = vec![0.0; m];
    let mut kernel = SquareMatrix::zeros(m);
    let mut out = SquareMatrix::zeros(m);
    predict_into(spec, t, lambda_prev, &mut eta, &mut kernel, &mut out)?;
    Ok(out)
}

fn predict_into(
    spec: &CompartmentalSpec,
    t: usize,
    lambda_prev: &[f64],
    eta: &mut [f64],
    kernel: &mut SquareMatrix,
    out: &mut SquareMatrix,
) -> Result<()> {
    eta_normalize_into(lambda_prev, eta)?;
    spec.kernel_at(t, eta, kernel);
    for (k, lam) in lambda_prev.iter().enumerate() {
        for (o, p) in out.row_mut(k).iter_mut().zip(kernel.row(k)) {
            *o = lam * p;
        }
    }
    Ok(())
}

/// Mode of `q ↦ y log(qΛ) − qΛ − (q − μ)²/(2σ²)`: the non-negative root of
/// `q² + (Λσ² − μ)q − yσ² = 0`, clamped to `[0, 1]`. The flag reports clamping.
pub fn laplace_qbar(lambda_ij: f64, y: u64, mu_q: f64, sigma2_q: f64) -> (f64, bool) {
    let b = mu_q - lambda_ij * sigma2_q;
    let c = y as f64 * sigma2_q;
    let disc = (b * b + 4.0 * c).sqrt();
    // avoid cancellation when b < 0
    let root = if b >= 0.0 {
        0.5 * (b + disc)
    } else if c == 0.0 {
        0.0
    } else {
        2.0 * c / (disc - b)
    };
    if root > 1.0 {
        (1.0, true)
    } else {
        (root.max(0.0), false)
    }
}

/// Inverse negative curvature at the mode, `(y/q̄² + 1/σ²)⁻¹`, with `0/0 = 0`.
pub fn laplace_s2(q_bar: f64, y: u64, sigma2_q: f64) -> f64 {
    if y == 0 {
        return sigma2_q;
    }
    assert!(q_bar > 0.0, "positive count with zero mode");
    1.0 / (y as f64 / (q_bar * q_bar) + 1.0 / sigma2_q)
}

/// Laplace log-marginal of one observation:
/// `y log(q̄Λ) − q̄Λ − log y! + log φ(q̄) + ½ log(2π s²)`.
/// Returns `-inf` when `y > 0` and `Λ = 0`.
pub fn ll_increment(lambda_ij: f64, y: u64, q_bar: f64, s2: f64, prior: &TruncNormal) -> f64 {
    let rate = q_bar * lambda_ij;
    if y > 0 && lambda_ij == 0.0 {
        return f64::NEG_INFINITY;
    }
    let yf = y as f64;
    let data = if y == 0 { -rate } else { yf * rate.ln() - rate };
    data - log_gamma(yf + 1.0) + prior.logpdf(q_bar) + 0.5 * (LN_2PI + s2.ln())
}

/// Moment-matched update: `Λ̄` equals `Λ` except `Λ̄^{(i,j)} = y + (1 − q̄)Λ^{(i,j)}`.
pub fn update_step(
    lambda_pred: &SquareMatrix,
    y: u64,
    q_bar: f64,
    edge: ObsEdge,
) -> (SquareMatrix, Vec<f64>) {
    let mut filt = lambda_pred.clone();
    let cell = &mut filt[(edge.from, edge.to)];
    *cell = y as f64 + (1.0 - q_bar) * *cell;
    let lambda = filt.col_sums();
    (filt, lambda)
}

/// What the pass records per step.
trait StepSink {
    fn record(&mut self, step: StepView<'_>);
}

struct StepView<'a> {
    lambda_pred: &'a SquareMatrix,
    filt: &'a SquareMatrix,
    lambda: &'a [f64],
    q_bar: f64,
    s2: f64,
    ll_inc: f64,
    clamped: bool,
    impossible: bool,
}

struct Collect(Vec<FilterStep>);

impl StepSink for Collect {
    fn record(&mut self, s: StepView<'_>) {
        self.0.push(FilterStep {
            lambda_pred: s.lambda_pred.clone(),
            q_bar: s.q_bar,
            s2: s.s2,
            lambda_filt_flows: s.filt.clone(),
            lambda_filt: s.lambda.to_vec(),
            ll_inc: s.ll_inc,
            clamped: s.clamped,
            impossible: s.impossible,
        });
    }
}

struct Discard;

impl StepSink for Discard {
    fn record(&mut self, _: StepView<'_>) {}
}

enum Reporting {
    Laplace { mu_q: f64, sigma2_q: f64, prior: TruncNormal },
    Fixed(f64),
}

impl Reporting {
    fn new(obs: &ObservationModel) -> Result<Self> {
        obs.validate()?;
        Ok(match *obs {
            ObservationModel::Fixed { q } => Reporting::Fixed(q),
            ObservationModel::TruncNormal { mu_q, sigma2_q } => Reporting::Laplace {
                mu_q,
                sigma2_q,
                prior: TruncNormal::unit(mu_q, sigma2_q)?,
            },
        })
    }
}

fn filter_pass(
    spec: &CompartmentalSpec,
    reporting: &Reporting,
    ys: &[u64],
    sink: &mut impl StepSink,
) -> Result<f64> {
    if ys.is_empty() {
        return Err(Error::Validation("observation series is empty".into()));
    }
    let m = spec.m();
    let edge = spec.obs_edge();
    let n = spec.n() as f64;
    let mut lambda: Vec<f64> = spec.pi0().as_slice().iter().map(|p| n * p).collect();
    let mut eta = vec![0.0; m];
    let mut kernel = SquareMatrix::zeros(m);
    let mut pred = SquareMatrix::zeros(m);
    let mut filt = SquareMatrix::zeros(m);
    let mut total = 0.0;
    for (idx, &y) in ys.iter().enumerate() {
        let t = idx + 1;
        predict_into(spec, t, &lambda, &mut eta, &mut kernel, &mut pred)?;
        let lam_ij = pred[(edge.from, edge.to)];
        let (q_bar, s2, ll_inc, clamped) = match reporting {
            Reporting::Laplace { mu_q, sigma2_q, prior } => {
                let (q_bar, clamped) = laplace_qbar(lam_ij, y, *mu_q, *sigma2_q);
                if clamped {
                    log::debug!("step {t}: reporting mode clamped to 1 (y = {y}, Λ = {lam_ij})");
                }
                let s2 = laplace_s2(q_bar, y, *sigma2_q);
                (q_bar, s2, ll_increment(lam_ij, y, q_bar, s2, prior), clamped)
            }
            Reporting::Fixed(q) => (*q, 0.0, log_poisson_pmf(y, q * lam_ij), false),
        };
        let impossible = ll_inc == f64::NEG_INFINITY;
        filt.clone_from(&pred);
        filt[(edge.from, edge.to)] = y as f64 + (1.0 - q_bar) * lam_ij;
        filt.col_sums_into(&mut lambda);
        total += ll_inc;
        sink.record(StepView {
            lambda_pred: &pred,
            filt: &filt,
            lambda: &lambda,
            q_bar,
            s2,
            ll_inc,
            clamped,
            impossible,
        });
    }
    Ok(total)
}

/// Runs the over-dispersed filter. `obs` must be the truncated-normal variant.
pub fn run_lawpal(spec: &CompartmentalSpec, obs: &ObservationModel, ys: &[u64]) -> Result<FilterOutput> {
    if !matches!(obs, ObservationModel::TruncNormal { .. }) {
        return Err(Error::Validation("LawPAL needs a truncated-normal observation model".into()));
    }
    run_filter(spec, obs, ys)
}

/// Runs the equi-dispersed filter. `obs` must be the fixed variant.
pub fn run_pal(spec: &CompartmentalSpec, obs: &ObservationModel, ys: &[u64]) -> Result<FilterOutput> {
    if !matches!(obs, ObservationModel::Fixed { .. }) {
        return Err(Error::Validation("PAL needs a fixed observation model".into()));
    }
    run_filter(spec, obs, ys)
}

/// LawPAL or PAL according to the observation model.
pub fn run_filter(spec: &CompartmentalSpec, obs: &ObservationModel, ys: &[u64]) -> Result<FilterOutput> {
    let reporting = Reporting::new(obs)?;
    let mut sink = Collect(Vec::with_capacity(ys.len()));
    let total_ll = filter_pass(spec, &reporting, ys, &mut sink)?;
    let out = FilterOutput {
        steps: sink.0,
        total_ll,
    };
    let flagged = out.flagged_steps();
    if !flagged.is_empty() {
        log::warn!("impossible observations under the approximation at steps {flagged:?}");
    }
    Ok(out)
}

/// Total approximate log-likelihood without keeping per-step state.
pub fn approx_loglik(spec: &CompartmentalSpec, obs: &ObservationModel, ys: &[u64]) -> Result<f64> {
    let reporting = Reporting::new(obs)?;
    filter_pass(spec, &reporting, ys, &mut Discard)
}
