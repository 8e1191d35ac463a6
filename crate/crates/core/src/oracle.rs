//! Brute-force reference computations for tests and benchmarks: adaptive
//! Gauss–Legendre quadrature over the reporting probability, grid
//! maximization of the joint density of `(y, q)`, and exact likelihood
//! enumeration on toy models. Slow by design; nothing here is used by the
//! filters.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::filter::ObservationModel;
use crate::model::{eta_normalize, CompartmentalSpec, SquareMatrix};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

struct Integrator<'a> {
    logf: &'a dyn Fn(f64) -> f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    scale: f64,
    tol: f64,
}

impl Integrator<'_> {
    fn panel(&self, a: f64, b: f64) -> f64 {
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        let mut acc = f64::NEG_INFINITY;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let v = (self.logf)(mid + half * x);
            if v > f64::NEG_INFINITY {
                acc = log_add(acc, v + (w * half).ln());
            }
        }
        acc
    }

    fn adapt(&self, a: f64, b: f64, whole: f64, depth: usize) -> f64 {
        let m = 0.5 * (a + b);
        let left = self.panel(a, m);
        let right = self.panel(m, b);
        let split = log_add(left, right);
        let diff = ((whole - self.scale).exp() - (split - self.scale).exp()).abs();
        if depth >= 40 || diff <= self.tol || (b - a) < 1e-15 {
            return split;
        }
        log_add(
            self.adapt(a, m, left, depth + 1),
            self.adapt(m, b, right, depth + 1),
        )
    }
}

/// Log of `∫_0^1 exp(logf(q)) dq` by adaptive composite Gauss–Legendre.
///
/// `hints` are extra panel breakpoints placed where the integrand may be
/// sharply peaked. Panels are refined until halving changes a panel's
/// contribution by less than `1e-14` of the integrand's peak value.
pub fn log_integrate_unit(logf: &dyn Fn(f64) -> f64, hints: &[f64], order: usize) -> f64 {
    let mut breaks: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    breaks.extend(hints.iter().filter(|h| h.is_finite()).map(|h| h.clamp(0.0, 1.0)));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

    // peak scale from a dense scan plus the breakpoints
    let mut scale = f64::NEG_INFINITY;
    for k in 0..=4000 {
        scale = scale.max(logf(k as f64 / 4000.0));
    }
    for b in &breaks {
        scale = scale.max(logf(*b));
    }
    if scale == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let (nodes, weights) = gauss_legendre(order);
    let integ = Integrator {
        logf,
        nodes,
        weights,
        scale,
        tol: 1e-14,
    };
    let mut total = f64::NEG_INFINITY;
    for w in breaks.windows(2) {
        let whole = integ.panel(w[0], w[1]);
        total = log_add(total, integ.adapt(w[0], w[1], whole, 0));
    }
    total
}

/// Default Gauss–Legendre order per panel (10 base panels, so at least 200 nodes).
pub const DEFAULT_ORDER: usize = 20;

fn untruncated_log_normal(q: f64, mu: f64, sigma2: f64) -> f64 {
    -0.5 * (q - mu) * (q - mu) / sigma2 - 0.5 * sigma2.ln() - LN_SQRT_2PI
}

fn lgamma(x: f64) -> f64 {
    libm::lgamma(x)
}

fn log_pois(y: u64, rate: f64) -> f64 {
    if rate == 0.0 {
        return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let yf = y as f64;
    let lead = if y == 0 { 0.0 } else { yf * rate.ln() };
    lead - rate - lgamma(yf + 1.0)
}

fn log_binom(y: u64, n: u64, p: f64) -> f64 {
    if y > n {
        return f64::NEG_INFINITY;
    }
    let (yf, nf) = (y as f64, n as f64);
    let a = if y == 0 { 0.0 } else { yf * p.ln() };
    let b = if y == n { 0.0 } else { (nf - yf) * (1.0 - p).ln() };
    lgamma(nf + 1.0) - lgamma(yf + 1.0) - lgamma(nf - yf + 1.0) + a + b
}

/// Breakpoints around the prior location and the data mode.
fn hints(lambda: f64, y: u64, mu: f64, sigma2: f64) -> Vec<f64> {
    let s = sigma2.sqrt();
    let mut h: Vec<f64> = [-8.0, -4.0, -1.0, 0.0, 1.0, 4.0, 8.0]
        .iter()
        .map(|k| mu + k * s)
        .collect();
    if lambda > 0.0 {
        let mode = y as f64 / lambda;
        let w = (y.max(1) as f64).sqrt() / lambda;
        h.extend([-8.0, -4.0, -1.0, 0.0, 1.0, 4.0, 8.0].iter().map(|k| mode + k * w));
    }
    h
}

/// `log ∫_0^1 N(q; mu, sigma2)` computed by quadrature.
fn log_prior_mass(mu: f64, sigma2: f64, order: usize) -> f64 {
    let f = |q: f64| untruncated_log_normal(q, mu, sigma2);
    log_integrate_unit(&f, &hints(0.0, 0, mu, sigma2), order)
}

fn check_inputs(lambda: f64, mu: f64, sigma2: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) || !(0.0..=1.0).contains(&mu) || !(sigma2 > 0.0) {
        return Err(Error::Domain(format!(
            "oracle inputs out of range: Lambda={lambda}, mu={mu}, sigma2={sigma2}"
        )));
    }
    Ok(())
}

/// `log ∫_0^1 Pois(y; q Λ) N_[0,1](q; mu, sigma2) dq`, with `order` nodes per panel.
pub fn quad_marginal_with_order(lambda: f64, y: u64, mu: f64, sigma2: f64, order: usize) -> Result<f64> {
    check_inputs(lambda, mu, sigma2)?;
    let log_z = log_prior_mass(mu, sigma2, order);
    let f = |q: f64| log_pois(y, q * lambda) + untruncated_log_normal(q, mu, sigma2);
    Ok(log_integrate_unit(&f, &hints(lambda, y, mu, sigma2), order) - log_z)
}

/// Exact single-step log marginal of an observation given a Poisson flow
/// intensity `lambda` and a truncated-normal reporting probability.
pub fn quad_marginal(lambda: f64, y: u64, mu: f64, sigma2: f64) -> Result<f64> {
    quad_marginal_with_order(lambda, y, mu, sigma2, DEFAULT_ORDER)
}

/// Posterior mean of `q` given `y` under the same model as [`quad_marginal`].
pub fn quad_posterior_mean_q(lambda: f64, y: u64, mu: f64, sigma2: f64) -> Result<f64> {
    check_inputs(lambda, mu, sigma2)?;
    let h = hints(lambda, y, mu, sigma2);
    let f = |q: f64| log_pois(y, q * lambda) + untruncated_log_normal(q, mu, sigma2);
    let qf = |q: f64| q.ln() + f(q);
    let den = log_integrate_unit(&f, &h, DEFAULT_ORDER);
    if den == f64::NEG_INFINITY {
        return Err(Error::NonFinite("posterior of q has no mass".into()));
    }
    Ok((log_integrate_unit(&qf, &h, DEFAULT_ORDER) - den).exp().clamp(0.0, 1.0))
}

/// `y log q - Λ q - (q - mu)^2 / (2 sigma2)`, with `0 log 0 = 0`.
pub fn joint_log_density(q: f64, lambda: f64, y: u64, mu: f64, sigma2: f64) -> f64 {
    let lead = if y == 0 { 0.0 } else { y as f64 * q.ln() };
    lead - lambda * q - (q - mu) * (q - mu) / (2.0 * sigma2)
}

/// Maximizer of [`joint_log_density`] over the grid `{step, 2 step, ..., 1}`,
/// refined by ternary search on the neighbouring cells.
pub fn grid_argmax(lambda: f64, y: u64, mu: f64, sigma2: f64, grid_step: f64) -> f64 {
    let g = |q: f64| joint_log_density(q, lambda, y, mu, sigma2);
    let cells = (1.0 / grid_step).round() as usize;
    let mut best = (1.0, g(1.0));
    for k in 1..=cells {
        let q = (k as f64 * grid_step).min(1.0);
        let v = g(q);
        if v > best.1 {
            best = (q, v);
        }
    }
    let (mut a, mut b) = ((best.0 - grid_step).max(0.0), (best.0 + grid_step).min(1.0));
    for _ in 0..200 {
        let c = a + (b - a) / 3.0;
        let d = b - (b - a) / 3.0;
        if g(c) < g(d) {
            a = c;
        } else {
            b = d;
        }
    }
    let q = 0.5 * (a + b);
    if g(q) >= best.1 {
        q
    } else {
        best.0
    }
}

/// Default cap on the number of transition configurations visited by
/// [`enumerate_loglik`].
pub const DEFAULT_ENUMERATION_BUDGET: u128 = 500_000_000;

fn binomial_coeff(n: u128, k: u128) -> u128 {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// All ways of splitting `total` over `cells` (indices with positive
/// probability), each with its multinomial log-probability.
fn compositions(total: u64, probs: &[f64]) -> Vec<(Vec<u64>, f64)> {
    let support: Vec<usize> = (0..probs.len()).filter(|&k| probs[k] > 0.0).collect();
    let mut out = Vec::new();
    if support.is_empty() {
        if total == 0 {
            out.push((vec![0; probs.len()], 0.0));
        }
        return out;
    }
    let mut counts = vec![0u64; probs.len()];
    fn rec(
        idx: usize,
        remaining: u64,
        support: &[usize],
        probs: &[f64],
        counts: &mut Vec<u64>,
        log_p: f64,
        out: &mut Vec<(Vec<u64>, f64)>,
    ) {
        let cell = support[idx];
        if idx + 1 == support.len() {
            counts[cell] = remaining;
            let lp = log_p + remaining as f64 * probs[cell].ln() - lgamma(remaining as f64 + 1.0);
            out.push((counts.clone(), lp));
            counts[cell] = 0;
            return;
        }
        for c in 0..=remaining {
            counts[cell] = c;
            let lp = log_p + c as f64 * probs[cell].ln() - lgamma(c as f64 + 1.0);
            rec(idx + 1, remaining - c, support, probs, counts, lp, out);
        }
        counts[cell] = 0;
    }
    let base = lgamma(total as f64 + 1.0);
    rec(0, total, &support, probs, &mut counts, base, &mut out);
    out
}

/// Upper bound on the number of configurations [`enumerate_loglik`] visits.
pub fn enumeration_size(spec: &CompartmentalSpec, horizon: usize) -> u128 {
    let m = spec.m();
    let n = spec.n() as u128;
    let eta = vec![1.0 / m as f64; m];
    let mut k = SquareMatrix::zeros(m);
    spec.kernel_at(1, &eta, &mut k);
    let support: u128 = k.as_slice().iter().filter(|v| **v > 0.0).count().max(1) as u128;
    let states = binomial_coeff(n + m as u128 - 1, m as u128 - 1);
    let configs = binomial_coeff(n + support - 1, support - 1);
    states.saturating_mul(configs).saturating_mul(horizon.max(1) as u128)
}

/// Exact `log p(y_{1:T})` by a forward sum over compartment counts, summing
/// every transition-count configuration and integrating each `q_t`.
/// Refuses when [`enumeration_size`] exceeds `budget`.
pub fn enumerate_loglik(
    spec: &CompartmentalSpec,
    obs: &ObservationModel,
    ys: &[u64],
    budget: u128,
) -> Result<f64> {
    obs.validate()?;
    let estimate = enumeration_size(spec, ys.len());
    if estimate > budget {
        return Err(Error::EnumerationBudget { estimate, budget });
    }
    let m = spec.m();
    let edge = spec.obs_edge();

    let log_z = match obs {
        ObservationModel::TruncNormal { mu_q, sigma2_q } => log_prior_mass(*mu_q, *sigma2_q, DEFAULT_ORDER),
        ObservationModel::Fixed { .. } => 0.0,
    };
    let obs_log_prob = |y: u64, z: u64| -> f64 {
        match obs {
            ObservationModel::Fixed { q } => log_binom(y, z, *q),
            ObservationModel::TruncNormal { mu_q, sigma2_q } => {
                if y > z {
                    return f64::NEG_INFINITY;
                }
                let f = |q: f64| log_binom(y, z, q) + untruncated_log_normal(q, *mu_q, *sigma2_q);
                let mode = if z > 0 { y as f64 / z as f64 } else { *mu_q };
                let mut h = hints(0.0, 0, *mu_q, *sigma2_q);
                h.push(mode);
                log_integrate_unit(&f, &h, DEFAULT_ORDER) - log_z
            }
        }
    };

    let mut alpha: HashMap<Vec<u64>, f64> = compositions(spec.n(), spec.pi0().as_slice())
        .into_iter()
        .map(|(x, lp)| (x, lp.exp()))
        .collect();
    let mut loglik = 0.0;
    let mut kernel = SquareMatrix::zeros(m);
    for (step, &y) in ys.iter().enumerate() {
        let t = step + 1;
        let mut obs_cache: HashMap<u64, f64> = HashMap::new();
        let mut next: HashMap<Vec<u64>, f64> = HashMap::new();
        for (x, w) in &alpha {
            let xf: Vec<f64> = x.iter().map(|v| *v as f64).collect();
            let eta = eta_normalize(&xf)?;
            spec.kernel_at(t, &eta, &mut kernel);
            let rows: Vec<Vec<(Vec<u64>, f64)>> =
                (0..m).map(|i| compositions(x[i], kernel.row(i))).collect();
            // odometer over the Cartesian product of row configurations
            let mut idx = vec![0usize; m];
            'outer: loop {
                let mut lp = 0.0;
                let mut x_next = vec![0u64; m];
                for i in 0..m {
                    let (row, p) = &rows[i][idx[i]];
                    lp += p;
                    for (xn, c) in x_next.iter_mut().zip(row) {
                        *xn += c;
                    }
                }
                let z_edge = rows[edge.from][idx[edge.from]].0[edge.to];
                let lo = *obs_cache.entry(z_edge).or_insert_with(|| obs_log_prob(y, z_edge));
                let contrib = w * (lp + lo).exp();
                if contrib > 0.0 {
                    *next.entry(x_next).or_insert(0.0) += contrib;
                }
                for i in 0..m {
                    idx[i] += 1;
                    if idx[i] < rows[i].len() {
                        continue 'outer;
                    }
                    idx[i] = 0;
                }
                break;
            }
        }
        let total: f64 = next.values().sum();
        if !(total > 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        loglik += total.ln();
        for v in next.values_mut() {
            *v /= total;
        }
        alpha = next;
    }
    Ok(loglik)
}
