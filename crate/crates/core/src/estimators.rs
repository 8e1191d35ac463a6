//! Estimation on top of any log-likelihood: coordinate-ascent maximization
//! with golden-section line searches, and a two-phase random-walk
//! Metropolis sampler whose second phase uses the scaled burn-in covariance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rand_kit::{log_gamma, SeededRng, TruncNormal};

/// Coordinate map between the natural parameter and the search/proposal scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    Identity,
    Log,
}

impl Transform {
    pub fn forward(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
        }
    }

    pub fn inverse(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
        }
    }

    /// `log |dx/du|` at `u`.
    pub fn log_jacobian(self, u: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log => u,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub transform: Transform,
    pub init: f64,
}

impl ParamSpec {
    pub fn new(name: &str, lo: f64, hi: f64, transform: Transform, init: f64) -> Result<Self> {
        let p = Self {
            name: name.to_string(),
            lo,
            hi,
            transform,
            init,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if self.lo.is_nan() || self.hi.is_nan() || !(self.lo < self.hi) {
            return Err(Error::Validation(format!(
                "parameter {}: bounds [{}, {}] are empty",
                self.name, self.lo, self.hi
            )));
        }
        if !self.contains(self.init) {
            return Err(Error::Validation(format!(
                "parameter {}: initial value {} outside [{}, {}]",
                self.name, self.init, self.lo, self.hi
            )));
        }
        if self.transform == Transform::Log && self.lo < 0.0 {
            return Err(Error::Validation(format!(
                "parameter {}: log scale needs a non-negative lower bound",
                self.name
            )));
        }
        if self.transform == Transform::Log && self.init <= 0.0 {
            return Err(Error::Validation(format!(
                "parameter {}: log scale needs a positive initial value",
                self.name
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Ordered set of free parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSpace {
    params: Vec<ParamSpec>,
}

impl ParamSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Validation("no free parameters".into()));
        }
        for (i, p) in params.iter().enumerate() {
            p.validate()?;
            if params[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Validation(format!("parameter {} listed twice", p.name)));
            }
        }
        Ok(Self { params })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn init(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.init).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.params.iter().zip(x).all(|(p, v)| p.contains(*v))
    }

    /// Same space with the initial values replaced.
    pub fn with_init(&self, init: &[f64]) -> Result<Self> {
        let params = self
            .params
            .iter()
            .zip(init)
            .map(|(p, v)| ParamSpec { init: *v, ..p.clone() })
            .collect();
        Self::new(params)
    }

    fn to_unconstrained(&self, x: &[f64]) -> Vec<f64> {
        self.params.iter().zip(x).map(|(p, v)| p.transform.forward(*v)).collect()
    }

    fn to_natural(&self, u: &[f64]) -> Vec<f64> {
        self.params.iter().zip(u).map(|(p, v)| p.transform.inverse(*v)).collect()
    }

    fn log_jacobian(&self, u: &[f64]) -> f64 {
        self.params.iter().zip(u).map(|(p, v)| p.transform.log_jacobian(*v)).sum()
    }
}

/// Prior families used by the bundled workflows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Prior {
    /// Normal with mean `mu` and variance `sigma2` restricted to `[lo, hi]`
    /// (missing bounds are infinite).
    TruncNormal {
        mu: f64,
        sigma2: f64,
        #[serde(default)]
        lo: Option<f64>,
        #[serde(default)]
        hi: Option<f64>,
    },
    Beta { a: f64, b: f64 },
    Exponential { rate: f64 },
    /// Flat (improper on unbounded spaces).
    Flat,
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Prior::TruncNormal { mu, sigma2, lo, hi } => TruncNormal::new(
                mu,
                sigma2,
                lo.unwrap_or(f64::NEG_INFINITY),
                hi.unwrap_or(f64::INFINITY),
            )
            .map(|_| ()),
            Prior::Beta { a, b } if a > 0.0 && b > 0.0 => Ok(()),
            Prior::Exponential { rate } if rate > 0.0 => Ok(()),
            Prior::Flat => Ok(()),
            other => Err(Error::Validation(format!("invalid prior parameters {other:?}"))),
        }
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Log density of `prior` at `value`; `-inf` outside the support.
pub fn log_prior(prior: &Prior, value: f64) -> f64 {
    match *prior {
        Prior::TruncNormal { mu, sigma2, lo, hi } => TruncNormal::new(
            mu,
            sigma2,
            lo.unwrap_or(f64::NEG_INFINITY),
            hi.unwrap_or(f64::INFINITY),
        )
        .map(|tn| tn.logpdf(value))
        .unwrap_or(f64::NEG_INFINITY),
        Prior::Beta { a, b } => {
            if !(0.0..=1.0).contains(&value) {
                return f64::NEG_INFINITY;
            }
            let log_beta = log_gamma(a) + log_gamma(b) - log_gamma(a + b);
            xlogy(a - 1.0, value) + xlogy(b - 1.0, 1.0 - value) - log_beta
        }
        Prior::Exponential { rate } => {
            if value < 0.0 {
                f64::NEG_INFINITY
            } else {
                rate.ln() - rate * value
            }
        }
        Prior::Flat => 0.0,
    }
}

/// Maximum iterations of a single golden-section search.
pub const GOLDEN_MAX_ITERS: usize = 60;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section maximization of `f` on `[a, b]`. Stops when the bracket is
/// narrower than `tol` or after `max_iters` reductions.
pub fn golden_section_max<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    tol: f64,
    max_iters: usize,
) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..max_iters {
        if (b - a).abs() < tol {
            break;
        }
        // -inf compares as the worse point, so rejected values shrink away
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[derive(Clone, Debug)]
pub struct AscentResult {
    pub params: Vec<f64>,
    pub value: f64,
    pub cycles: usize,
    /// Objective after each full cycle.
    pub trace: Vec<f64>,
}

/// Cyclic coordinate ascent. Each coordinate is line-searched over its
/// bounds (on its transformed scale); a move is kept only if it improves the
/// objective. Stops when a full cycle gains less than `tol`.
pub fn coordinate_ascent<F: FnMut(&[f64]) -> f64>(
    mut objective: F,
    space: &ParamSpace,
    tol: f64,
    max_cycles: usize,
) -> Result<AscentResult> {
    let mut x = space.init();
    let mut best = objective(&x);
    if !best.is_finite() {
        return Err(Error::NonFinite(format!(
            "objective is {best} at the initial point {x:?}"
        )));
    }
    let mut trace = Vec::new();
    let mut cycles = 0;
    while cycles < max_cycles {
        cycles += 1;
        let start = best;
        for (k, p) in space.params().iter().enumerate() {
            let tr = p.transform;
            let mut eval = |u: f64| {
                let v = tr.inverse(u);
                if !p.contains(v) {
                    return f64::NEG_INFINITY;
                }
                let mut trial = x.clone();
                trial[k] = v;
                let r = objective(&trial);
                if r.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    r
                }
            };
            let u0 = tr.forward(x[k]);
            let (ua, ub) = search_bracket(&mut eval, tr.forward(p.lo), tr.forward(p.hi), u0);
            let (mut u_best, mut f_best) = golden_section_max(&mut eval, ua, ub, tol, GOLDEN_MAX_ITERS);
            for end in [ua, ub] {
                let fe = eval(end);
                if fe > f_best {
                    (u_best, f_best) = (end, fe);
                }
            }
            if f_best > best {
                x[k] = tr.inverse(u_best).clamp(p.lo, p.hi);
                best = f_best;
            }
        }
        trace.push(best);
        debug_assert!(best >= start);
        if best - start < tol {
            break;
        }
    }
    Ok(AscentResult {
        params: x,
        value: best,
        cycles,
        trace,
    })
}

/// Finite search interval on the transformed scale. Infinite ends are
/// replaced by stepping out from `u0` while the objective keeps improving.
fn search_bracket<F: FnMut(f64) -> f64>(f: &mut F, lo: f64, hi: f64, u0: f64) -> (f64, f64) {
    let mut expand = |dir: f64| {
        let mut w = 1.0f64.max(u0.abs());
        let mut prev = f(u0);
        for _ in 0..50 {
            let v = f(u0 + dir * w);
            if !(v > prev) {
                return u0 + dir * w;
            }
            prev = v;
            w *= 2.0;
        }
        u0 + dir * w
    };
    let a = if lo.is_finite() { lo } else { expand(-1.0) };
    let b = if hi.is_finite() { hi } else { expand(1.0) };
    (a, b)
}

/// Metropolis acceptance probability for a symmetric proposal.
pub fn acceptance_probability(log_target_current: f64, log_target_proposed: f64) -> f64 {
    let delta = log_target_proposed - log_target_current;
    if delta.is_nan() {
        0.0
    } else {
        delta.exp().min(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RwmOptions {
    /// Phase-1 iterations with independent coordinate proposals.
    pub burn_iters: usize,
    /// Phase-1 proposal variance per coordinate (transformed scale).
    pub burn_step_var: f64,
    /// Phase-2 iterations with the adapted joint proposal.
    pub main_iters: usize,
    /// Keep every `thin`-th phase-2 state.
    pub thin: usize,
    /// Extra adaptation rounds between the phases. Each runs `burn_iters`
    /// steps from the current joint proposal and replaces `Σ̂` with the
    /// covariance of those steps. Zero gives the plain two-phase sampler.
    pub adapt_rounds: usize,
}

impl Default for RwmOptions {
    fn default() -> Self {
        Self {
            burn_iters: 2000,
            burn_step_var: 0.01,
            main_iters: 10_000,
            thin: 1,
            adapt_rounds: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Chain {
    pub names: Vec<String>,
    /// Kept phase-2 states on the natural scale.
    pub samples: Vec<Vec<f64>>,
    /// Log-posterior (natural scale, no Jacobian) at each kept state.
    pub log_post: Vec<f64>,
    pub acceptance_rate: f64,
    pub burn_acceptance_rate: f64,
    /// Phase-2 proposal covariance on the transformed scale.
    pub proposal_cov: Vec<Vec<f64>>,
}

impl Chain {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[k]).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| mean(&self.column(k))).collect()
    }

    pub fn sds(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| sample_sd(&self.column(k))).collect()
    }

    pub fn summary(&self) -> ChainSummary {
        ChainSummary {
            names: self.names.clone(),
            means: self.means(),
            sds: self.sds(),
            acceptance_rate: self.acceptance_rate,
            burn_acceptance_rate: self.burn_acceptance_rate,
            kept: self.samples.len(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainSummary {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub acceptance_rate: f64,
    pub burn_acceptance_rate: f64,
    pub kept: usize,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn sample_covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mu = vec![0.0; d];
    for r in rows {
        for (m, v) in mu.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (r[i] - mu[i]) * (r[j] - mu[j]);
            }
        }
    }
    cov / (n - 1.0)
}

fn proposal_factor(cov: &DMatrix<f64>, burn_step_var: f64) -> DMatrix<f64> {
    let d = cov.nrows();
    if let Some(ch) = cov.clone().cholesky() {
        return ch.l();
    }
    log::warn!("burn-in covariance is singular; regularizing the diagonal");
    let mut reg = cov.clone();
    for i in 0..d {
        reg[(i, i)] += 1e-8 * cov[(i, i)] + 1e-12;
    }
    if let Some(ch) = reg.cholesky() {
        return ch.l();
    }
    log::warn!("regularized covariance still singular; using the burn-in step variance");
    DMatrix::from_diagonal_element(d, d, burn_step_var.sqrt())
}

/// Two-phase random-walk Metropolis on the transformed scale of `space`.
///
/// Phase 1 runs `burn_iters` steps with independent Gaussian coordinate
/// proposals of variance `burn_step_var`. Phase 2 proposes from
/// `N(0, (2.38²/d) Σ̂)` with `Σ̂` the burn-in sample covariance, optionally
/// refreshed by `adapt_rounds` intermediate runs. Proposals
/// outside the bounds are rejected. `log_post` may be noisy (pseudo-marginal):
/// it is evaluated once per proposal and the current value is reused.
pub fn rwm_chain<F: FnMut(&[f64]) -> f64>(
    mut log_post: F,
    space: &ParamSpace,
    opts: &RwmOptions,
    rng: &mut SeededRng,
) -> Result<Chain> {
    if !(opts.burn_step_var > 0.0) {
        return Err(Error::Validation("burn-in step variance must be positive".into()));
    }
    let thin = opts.thin.max(1);
    let d = space.len();
    let mut x = space.init();
    let mut u = space.to_unconstrained(&x);
    let mut lp = log_post(&x);
    if !lp.is_finite() {
        return Err(Error::NonFinite(format!(
            "log posterior is {lp} at the initial point {x:?}"
        )));
    }
    let mut target = lp + space.log_jacobian(&u);

    let mut step = |delta: &[f64],
                    u: &mut Vec<f64>,
                    x: &mut Vec<f64>,
                    lp: &mut f64,
                    target: &mut f64,
                    rng: &mut SeededRng|
     -> bool {
        let u_new: Vec<f64> = u.iter().zip(delta).map(|(a, b)| a + b).collect();
        let x_new = space.to_natural(&u_new);
        // the uniform is drawn unconditionally to keep streams aligned
        let log_u = rng.uniform_open().ln();
        if !space.contains(&x_new) {
            return false;
        }
        let lp_new = log_post(&x_new);
        let t_new = lp_new + space.log_jacobian(&u_new);
        if t_new.is_nan() || !(log_u < t_new - *target) {
            return false;
        }
        *u = u_new;
        *x = x_new;
        *lp = lp_new;
        *target = t_new;
        true
    };

    let burn_sd = opts.burn_step_var.sqrt();
    let mut burn = Vec::with_capacity(opts.burn_iters);
    let mut burn_accept = 0usize;
    let mut delta = vec![0.0; d];
    for _ in 0..opts.burn_iters {
        for v in delta.iter_mut() {
            *v = burn_sd * rng.standard_normal();
        }
        if step(&delta, &mut u, &mut x, &mut lp, &mut target, rng) {
            burn_accept += 1;
        }
        burn.push(u.clone());
    }

    let scale = 2.38 * 2.38 / d as f64;
    // a burn-in with at most d accepted moves cannot give a full-rank estimate
    let mut cov = if burn_accept > d {
        sample_covariance(&burn) * scale
    } else {
        log::warn!(
            "burn-in accepted {burn_accept} of {} proposals; using the burn-in step variance",
            opts.burn_iters
        );
        DMatrix::from_diagonal_element(d, d, opts.burn_step_var * scale)
    };
    let mut factor = proposal_factor(&cov, opts.burn_step_var);

    let mut z = DVector::zeros(d);
    for round in 0..opts.adapt_rounds {
        let mut states = Vec::with_capacity(opts.burn_iters);
        let mut acc = 0usize;
        for _ in 0..opts.burn_iters {
            for v in z.iter_mut() {
                *v = rng.standard_normal();
            }
            let dz = &factor * &z;
            if step(dz.as_slice(), &mut u, &mut x, &mut lp, &mut target, rng) {
                acc += 1;
            }
            states.push(u.clone());
        }
        log::debug!("adaptation round {}: acceptance {acc}/{}", round + 1, opts.burn_iters);
        if acc > d {
            cov = sample_covariance(&states) * scale;
            factor = proposal_factor(&cov, opts.burn_step_var);
        } else {
            log::warn!("adaptation round {} accepted {acc} proposals; keeping the previous covariance", round + 1);
        }
    }

    let mut samples = Vec::with_capacity(opts.main_iters / thin + 1);
    let mut lps = Vec::with_capacity(opts.main_iters / thin + 1);
    let mut accepted = 0usize;
    for it in 0..opts.main_iters {
        for v in z.iter_mut() {
            *v = rng.standard_normal();
        }
        let dz = &factor * &z;
        if step(dz.as_slice(), &mut u, &mut x, &mut lp, &mut target, rng) {
            accepted += 1;
        }
        if (it + 1) % thin == 0 {
            samples.push(x.clone());
            lps.push(lp);
        }
    }

    let rate = |a: usize, n: usize| if n == 0 { 0.0 } else { a as f64 / n as f64 };
    Ok(Chain {
        names: space.names(),
        samples,
        log_post: lps,
        acceptance_rate: rate(accepted, opts.main_iters),
        burn_acceptance_rate: rate(burn_accept, opts.burn_iters),
        proposal_cov: (0..d).map(|i| (0..d).map(|j| cov[(i, j)]).collect()).collect(),
    })
}

/// Shrinks the burn-in step variance by factors of 10, starting from
/// `start_var`, until a pilot burn-in of `burn_iters` steps accepts at least
/// `min_accept` of its proposals. Returns the variance and the pilot
/// acceptance rate; after `max_tries` pilots the last variance is returned.
pub fn tune_burn_step_var<F: FnMut(&[f64]) -> f64>(
    mut log_post: F,
    space: &ParamSpace,
    start_var: f64,
    burn_iters: usize,
    min_accept: f64,
    max_tries: usize,
    rng: &SeededRng,
) -> Result<(f64, f64)> {
    let mut var = start_var;
    let mut rate = 0.0;
    for k in 0..max_tries.max(1) {
        let opts = RwmOptions {
            burn_iters,
            burn_step_var: var,
            main_iters: 0,
            thin: 1,
            adapt_rounds: 0,
        };
        rate = rwm_chain(&mut log_post, space, &opts, &mut rng.child(k as u64))?.burn_acceptance_rate;
        log::debug!("pilot burn-in variance {var:e}: acceptance {rate:.3}");
        if rate >= min_accept || k + 1 == max_tries {
            break;
        }
        var /= 10.0;
    }
    Ok((var, rate))
}
