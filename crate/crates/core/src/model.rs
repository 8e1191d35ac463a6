//! Compartmental model definitions.
//!
//! A model is a population of `n` individuals spread over `m` compartments.
//! Each step every individual in compartment `k` moves to compartment `l`
//! with probability `K[k][l]`, where the row-stochastic kernel `K` may depend
//! on the time index and on the current population proportions `eta`.
//!
//! Compartments are 1-based in configuration files and in [`ObsEdge::new`];
//! everything stored here is 0-based.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Index, IndexMut};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rand_kit::SeededRng;

/// Tolerance on row sums of a transition kernel.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Tolerance on the total mass of a probability vector.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Dense `m x m` matrix stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::Validation("matrix must have at least one row".into()));
        }
        let mut data = Vec::with_capacity(dim * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Validation(format!(
                    "row {} has {} entries, expected {dim}",
                    i + 1,
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { dim, data })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.dim;
        &mut self.data[i * d..(i + 1) * d]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.col_sums_into(&mut out);
        out
    }

    pub fn col_sums_into(&self, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.dim {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &SquareMatrix) -> f64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Checks that every entry is in `[0, 1]` and every row sums to one.
    pub fn check_row_stochastic(&self, tol: f64) -> Result<()> {
        for i in 0..self.dim {
            let row = self.row(i);
            if let Some(j) = row
                .iter()
                .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
            {
                return Err(Error::Validation(format!(
                    "kernel entry ({}, {}) = {} is not a probability",
                    i + 1,
                    j + 1,
                    row[j]
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > tol {
                return Err(Error::Validation(format!(
                    "kernel row {} sums to {s}, not 1",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for SquareMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.dim + j]
    }
}

/// A validated row-stochastic matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct StochMatrix(SquareMatrix);

impl StochMatrix {
    pub fn new(matrix: SquareMatrix) -> Result<Self> {
        matrix.check_row_stochastic(ROW_SUM_TOL)?;
        Ok(Self(matrix))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(SquareMatrix::from_rows(rows)?)
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }

    pub fn into_inner(self) -> SquareMatrix {
        self.0
    }
}

impl std::ops::Deref for StochMatrix {
    type Target = SquareMatrix;
    fn deref(&self) -> &SquareMatrix {
        &self.0
    }
}

/// A validated probability vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Validation("probability vector is empty".into()));
        }
        if let Some(v) = entries
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::Validation(format!(
                "probability vector entry {v} outside [0, 1]"
            )));
        }
        let s: f64 = entries.iter().sum();
        if (s - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Validation(format!(
                "probability vector sums to {s}, not 1"
            )));
        }
        Ok(Self(entries))
    }

    /// Normalizes non-negative weights; rejects an all-zero vector.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let eta = eta_normalize(weights)?;
        if eta.iter().all(|v| *v == 0.0) {
            return Err(Error::Validation("weights sum to zero".into()));
        }
        Ok(Self(eta))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Normalization map: `x / sum(x)`, or the zero vector when `sum(x) == 0`.
pub fn eta_normalize(x: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    eta_normalize_into(x, &mut out)?;
    Ok(out)
}

pub(crate) fn eta_normalize_into(x: &[f64], out: &mut [f64]) -> Result<()> {
    if let Some(v) = x.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("negative or NaN entry {v} in eta")));
    }
    let total: f64 = x.iter().sum();
    if total > 0.0 {
        for (o, v) in out.iter_mut().zip(x) {
            *o = v / total;
        }
    } else {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    Ok(())
}

type KernelFn = dyn Fn(usize, &[f64], f64, &mut SquareMatrix) + Send + Sync;

/// A user-supplied kernel `(t, eta, h) -> K`, registered through [`KernelRegistry`].
#[derive(Clone)]
pub struct CustomKernel {
    name: String,
    dim: usize,
    func: Arc<KernelFn>,
}

impl CustomKernel {
    pub fn name(&self) -> &str {
        &self.name
    }
}

impl fmt::Debug for CustomKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomKernel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish()
    }
}

/// Named user kernels. Registration probes the kernel and rejects it unless
/// every probe returns a row-stochastic matrix.
#[derive(Clone, Debug, Default)]
pub struct KernelRegistry {
    kernels: BTreeMap<String, CustomKernel>,
}

impl KernelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, name: &str, dim: usize, func: F) -> Result<()>
    where
        F: Fn(usize, &[f64], f64, &mut SquareMatrix) + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::Validation("kernel dimension must be positive".into()));
        }
        let kernel = CustomKernel {
            name: name.to_string(),
            dim,
            func: Arc::new(func),
        };
        validate_kernel(&Kernel::Custom(kernel.clone()), 1.0)
            .map_err(|e| Error::Validation(format!("kernel '{name}': {e}")))?;
        self.kernels.insert(name.to_string(), kernel);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&CustomKernel> {
        self.kernels.get(name)
    }
}

/// Probes a kernel at random and degenerate `eta` over a range of time indices.
pub fn validate_kernel(kernel: &Kernel, h: f64) -> Result<()> {
    let m = kernel.dim();
    let mut rng = SeededRng::new(0x6b65_726e_656c);
    let mut out = SquareMatrix::zeros(m);
    let mut etas: Vec<Vec<f64>> = vec![vec![0.0; m]];
    for k in 0..m {
        let mut e = vec![0.0; m];
        e[k] = 1.0;
        etas.push(e);
    }
    for _ in 0..32 {
        let w: Vec<f64> = (0..m).map(|_| rng.uniform_open()).collect();
        etas.push(eta_normalize(&w)?);
    }
    for t in 0..64 {
        for eta in &etas {
            kernel.fill(t, eta, h, &mut out);
            out.check_row_stochastic(ROW_SUM_TOL)?;
        }
    }
    Ok(())
}

/// Transition kernels. Parameters are rates; the step size `h` is supplied at
/// evaluation time.
#[derive(Clone, Debug)]
pub enum Kernel {
    /// Susceptible-Infected-Removed, `m = 3`.
    Sir { beta: f64, gamma: f64 },
    /// Susceptible-Exposed-Infected-Removed, `m = 4`.
    Seir { beta: f64, rho: f64, gamma: f64 },
    /// SEIR with a logistic drop of the transmission rate after `t_star + d`.
    SeirControl {
        beta: f64,
        rho: f64,
        gamma: f64,
        alpha: f64,
        b: f64,
        d: f64,
        t_star: u32,
    },
    /// A fixed matrix, independent of `t` and `eta`.
    Constant(StochMatrix),
    Custom(CustomKernel),
}

#[inline]
fn leave_prob(rate: f64) -> f64 {
    // 1 - exp(-rate), accurate for small rates
    -(-rate).exp_m1()
}

impl Kernel {
    pub fn dim(&self) -> usize {
        match self {
            Kernel::Sir { .. } => 3,
            Kernel::Seir { .. } | Kernel::SeirControl { .. } => 4,
            Kernel::Constant(k) => k.dim(),
            Kernel::Custom(k) => k.dim,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Kernel::Sir { .. } => "SIR",
            Kernel::Seir { .. } => "SEIR",
            Kernel::SeirControl { .. } => "SEIRControl",
            Kernel::Constant(_) => "Constant",
            Kernel::Custom(k) => &k.name,
        }
    }

    /// Time-varying transmission rate of [`Kernel::SeirControl`];
    /// the plain `beta` for the other epidemic kernels.
    pub fn transmission_rate(&self, t: usize) -> Option<f64> {
        match *self {
            Kernel::Sir { beta, .. } | Kernel::Seir { beta, .. } => Some(beta),
            Kernel::SeirControl {
                beta,
                alpha,
                b,
                d,
                t_star,
                ..
            } => {
                let arg = b * (t as f64 - f64::from(t_star) - d);
                // 1 / (1 + e^arg), written to stay finite for large |arg|
                let logistic = if arg > 0.0 {
                    let e = (-arg).exp();
                    e / (1.0 + e)
                } else {
                    1.0 / (1.0 + arg.exp())
                };
                Some(beta * (alpha + (1.0 - alpha) * logistic))
            }
            _ => None,
        }
    }

    /// Writes `K_{t, eta}` into `out`. `out` must be `dim x dim`.
    pub fn fill(&self, t: usize, eta: &[f64], h: f64, out: &mut SquareMatrix) {
        debug_assert_eq!(out.dim(), self.dim());
        match self {
            Kernel::Sir { beta, gamma } => {
                out.fill(0.0);
                let inf = leave_prob(h * beta * eta[1]);
                out[(0, 0)] = 1.0 - inf;
                out[(0, 1)] = inf;
                let rec = leave_prob(h * gamma);
                out[(1, 1)] = 1.0 - rec;
                out[(1, 2)] = rec;
                out[(2, 2)] = 1.0;
            }
            Kernel::Seir { rho, gamma, .. } | Kernel::SeirControl { rho, gamma, .. } => {
                let beta_t = self.transmission_rate(t).unwrap_or(0.0);
                out.fill(0.0);
                let inf = leave_prob(h * beta_t * eta[2]);
                out[(0, 0)] = 1.0 - inf;
                out[(0, 1)] = inf;
                let onset = leave_prob(h * rho);
                out[(1, 1)] = 1.0 - onset;
                out[(1, 2)] = onset;
                let rec = leave_prob(h * gamma);
                out[(2, 2)] = 1.0 - rec;
                out[(2, 3)] = rec;
                out[(3, 3)] = 1.0;
            }
            Kernel::Constant(k) => out.clone_from(k.matrix()),
            Kernel::Custom(k) => (k.func)(t, eta, h, out),
        }
    }

    /// Evaluates and validates `K_{t, eta}`.
    pub fn eval(&self, t: usize, eta: &[f64], h: f64) -> Result<StochMatrix> {
        if eta.len() != self.dim() {
            return Err(Error::Validation(format!(
                "eta has length {}, kernel has dimension {}",
                eta.len(),
                self.dim()
            )));
        }
        let mut out = SquareMatrix::zeros(self.dim());
        self.fill(t, eta, h, &mut out);
        StochMatrix::new(out)
    }

    /// Constant `c` with `max|K_eta - K_eta'| <= c * max|eta - eta'|`, where known.
    pub fn lipschitz_bound(&self, h: f64) -> Option<f64> {
        match *self {
            Kernel::Sir { beta, .. } | Kernel::Seir { beta, .. } => Some(h * beta),
            // beta_t <= beta whenever alpha is in [0, 1]
            Kernel::SeirControl { beta, .. } => Some(h * beta),
            Kernel::Constant(_) => Some(0.0),
            Kernel::Custom(_) => None,
        }
    }

    /// Names of the scalar parameters this kernel exposes.
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Kernel::Sir { .. } => &["beta", "gamma"],
            Kernel::Seir { .. } => &["beta", "rho", "gamma"],
            Kernel::SeirControl { .. } => &["beta", "rho", "gamma", "alpha", "b", "d"],
            Kernel::Constant(_) | Kernel::Custom(_) => &[],
        }
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        match (self, name) {
            (Kernel::Sir { beta, .. }, "beta")
            | (Kernel::Seir { beta, .. }, "beta")
            | (Kernel::SeirControl { beta, .. }, "beta") => Some(*beta),
            (Kernel::Sir { gamma, .. }, "gamma")
            | (Kernel::Seir { gamma, .. }, "gamma")
            | (Kernel::SeirControl { gamma, .. }, "gamma") => Some(*gamma),
            (Kernel::Seir { rho, .. }, "rho") | (Kernel::SeirControl { rho, .. }, "rho") => {
                Some(*rho)
            }
            (Kernel::SeirControl { alpha, .. }, "alpha") => Some(*alpha),
            (Kernel::SeirControl { b, .. }, "b") => Some(*b),
            (Kernel::SeirControl { d, .. }, "d") => Some(*d),
            _ => None,
        }
    }

    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match (self, name) {
            (Kernel::Sir { beta, .. }, "beta")
            | (Kernel::Seir { beta, .. }, "beta")
            | (Kernel::SeirControl { beta, .. }, "beta") => beta,
            (Kernel::Sir { gamma, .. }, "gamma")
            | (Kernel::Seir { gamma, .. }, "gamma")
            | (Kernel::SeirControl { gamma, .. }, "gamma") => gamma,
            (Kernel::Seir { rho, .. }, "rho") | (Kernel::SeirControl { rho, .. }, "rho") => rho,
            (Kernel::SeirControl { alpha, .. }, "alpha") => alpha,
            (Kernel::SeirControl { b, .. }, "b") => b,
            (Kernel::SeirControl { d, .. }, "d") => d,
            (k, _) => {
                return Err(Error::Validation(format!(
                    "kernel {} has no parameter '{name}'",
                    k.name()
                )))
            }
        };
        *slot = value;
        Ok(())
    }

    /// Rate parameters must be non-negative and `alpha` must lie in `[0, 1]`.
    pub fn check_params(&self) -> Result<()> {
        for name in self.param_names() {
            let v = self.param(name).unwrap_or(0.0);
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation(format!(
                    "kernel parameter {name} = {v} must be finite and non-negative"
                )));
            }
        }
        if let Kernel::SeirControl { alpha, .. } = self {
            if *alpha > 1.0 {
                return Err(Error::Validation(format!("alpha = {alpha} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// The observed transition `(from, to)`, 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObsEdge {
    pub from: usize,
    pub to: usize,
}

impl ObsEdge {
    /// Builds an edge from 1-based compartment labels.
    pub fn new(from: usize, to: usize) -> Result<Self> {
        if from == 0 || to == 0 {
            return Err(Error::Validation(
                "observed edge uses 1-based compartment labels".into(),
            ));
        }
        Ok(Self {
            from: from - 1,
            to: to - 1,
        })
    }

    /// 1-based labels, as written in configuration.
    pub fn labels(&self) -> (usize, usize) {
        (self.from + 1, self.to + 1)
    }
}

/// A fully specified latent compartmental model with one observed edge.
#[derive(Clone, Debug)]
pub struct CompartmentalSpec {
    n: u64,
    pi0: ProbVector,
    kernel: Kernel,
    obs_edge: ObsEdge,
    h: f64,
}

impl CompartmentalSpec {
    pub fn new(n: u64, pi0: ProbVector, kernel: Kernel, obs_edge: ObsEdge, h: f64) -> Result<Self> {
        let m = kernel.dim();
        if n == 0 {
            return Err(Error::Validation("population size must be positive".into()));
        }
        if pi0.len() != m {
            return Err(Error::Validation(format!(
                "pi0 has length {}, kernel {} has {m} compartments",
                pi0.len(),
                kernel.name()
            )));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Validation(format!("step size h = {h} must be positive")));
        }
        if obs_edge.from >= m || obs_edge.to >= m {
            let (i, j) = obs_edge.labels();
            return Err(Error::Validation(format!(
                "observed edge ({i}, {j}) outside 1..={m}"
            )));
        }
        kernel.check_params()?;
        let spec = Self {
            n,
            pi0,
            kernel,
            obs_edge,
            h,
        };
        if spec.edge_structurally_zero() {
            let (i, j) = obs_edge.labels();
            log::warn!(
                "observed edge ({i}, {j}) has zero transition probability in kernel {}",
                spec.kernel.name()
            );
        }
        Ok(spec)
    }

    fn edge_structurally_zero(&self) -> bool {
        let m = self.m();
        let uniform = vec![1.0 / m as f64; m];
        let mut out = SquareMatrix::zeros(m);
        let ObsEdge { from, to } = self.obs_edge;
        [uniform.as_slice(), self.pi0.as_slice()].iter().all(|eta| {
            (1..4).all(|t| {
                self.kernel.fill(t, eta, self.h, &mut out);
                out[(from, to)] == 0.0
            })
        })
    }

    pub fn m(&self) -> usize {
        self.kernel.dim()
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn pi0(&self) -> &ProbVector {
        &self.pi0
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn obs_edge(&self) -> ObsEdge {
        self.obs_edge
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// `K_{t, eta}` for this model's step size.
    pub fn kernel_at(&self, t: usize, eta: &[f64], out: &mut SquareMatrix) {
        self.kernel.fill(t, eta, self.h, out)
    }
}

/// Large-population limit at one time step: proportions `nu` and flows `flows`.
#[derive(Clone, Debug, PartialEq)]
pub struct LimitState {
    pub nu: Vec<f64>,
    pub flows: SquareMatrix,
}

/// Deterministic limit: `N_t = (nu_{t-1} ⊗ 1) ∘ K_{t, eta(nu_{t-1})}`,
/// `nu_t = 1ᵀ N_t`, starting from `nu_0 = pi0`. Returns `t = 1..=horizon`.
pub fn limit_recursion(spec: &CompartmentalSpec, horizon: usize) -> Result<Vec<LimitState>> {
    if horizon == 0 {
        return Err(Error::Validation("horizon must be at least 1".into()));
    }
    let m = spec.m();
    let mut nu = spec.pi0().as_slice().to_vec();
    let mut eta = vec![0.0; m];
    let mut kernel = SquareMatrix::zeros(m);
    let mut out = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        eta_normalize_into(&nu, &mut eta)?;
        spec.kernel_at(t, &eta, &mut kernel);
        let mut flows = SquareMatrix::zeros(m);
        for k in 0..m {
            for (f, p) in flows.row_mut(k).iter_mut().zip(kernel.row(k)) {
                *f = nu[k] * p;
            }
        }
        nu = flows.col_sums();
        out.push(LimitState {
            nu: nu.clone(),
            flows,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sir(beta: f64, gamma: f64) -> Kernel {
        Kernel::Sir { beta, gamma }
    }

    #[test]
    fn eta_examples() {
        assert_eq!(eta_normalize(&[2.0, 2.0, 0.0, 0.0]).unwrap(), vec![0.5, 0.5, 0.0, 0.0]);
        assert_eq!(eta_normalize(&[0.0, 0.0, 0.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(eta_normalize(&[1.0, 3.0]).unwrap(), vec![0.25, 0.75]);
        assert!(matches!(eta_normalize(&[1.0, -1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn prob_vector_rejects_bad_mass() {
        assert!(ProbVector::new(vec![0.99, 0.0, 0.1, 0.0]).is_err());
        assert!(ProbVector::new(vec![0.99, 0.0, 0.01, 0.0]).is_ok());
        assert!(ProbVector::new(vec![1.2, -0.2]).is_err());
    }

    #[test]
    fn sir_kernel_rows() {
        let k = sir(5.0, 0.1).eval(0, &[1.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(k.row(0), &[1.0, 0.0, 0.0]);
        let k = sir(0.3, 0.0).eval(0, &[0.5, 0.5, 0.0], 1.0).unwrap();
        assert_eq!(k.row(1), &[0.0, 1.0, 0.0]);
        let k = sir(0.15, 0.1).eval(0, &[0.9, 0.1, 0.0], 1.0).unwrap();
        assert!((k[(0, 1)] - (1.0 - (-0.015f64).exp())).abs() < 1e-15);
        assert!((k[(1, 2)] - (1.0 - (-0.1f64).exp())).abs() < 1e-15);
        assert_eq!(k.row(2), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn seir_control_limits() {
        let k = Kernel::SeirControl {
            beta: 2.0,
            rho: 0.2,
            gamma: 0.3,
            alpha: 0.1,
            b: 50.0,
            d: 3.0,
            t_star: 23,
        };
        assert!((k.transmission_rate(200).unwrap() - 0.2).abs() < 1e-12);
        assert!((k.transmission_rate(0).unwrap() - 2.0).abs() < 1e-12);
        // midpoint of the logistic
        assert!((k.transmission_rate(26).unwrap() - 2.0 * (0.1 + 0.45)).abs() < 1e-12);
    }

    #[test]
    fn seir_control_with_full_alpha_is_seir() {
        let control = Kernel::SeirControl {
            beta: 0.8,
            rho: 0.1,
            gamma: 0.2,
            alpha: 1.0,
            b: 0.7,
            d: 2.0,
            t_star: 10,
        };
        let plain = Kernel::Seir {
            beta: 0.8,
            rho: 0.1,
            gamma: 0.2,
        };
        let eta = [0.7, 0.1, 0.15, 0.05];
        for t in 0..40 {
            let a = control.eval(t, &eta, 1.0).unwrap();
            let b = plain.eval(t, &eta, 1.0).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-15);
        }
    }

    #[test]
    fn limit_recursion_deterministic_flow() {
        let k = Kernel::Constant(StochMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap());
        let spec = CompartmentalSpec::new(
            10,
            ProbVector::new(vec![1.0, 0.0]).unwrap(),
            k,
            ObsEdge::new(1, 2).unwrap(),
            1.0,
        )
        .unwrap();
        let lim = limit_recursion(&spec, 3).unwrap();
        assert_eq!(lim[0].nu, vec![0.0, 1.0]);
        assert_eq!(lim[0].flows.rows(), vec![vec![0.0, 1.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn limit_recursion_no_transmission() {
        let spec = CompartmentalSpec::new(
            1000,
            ProbVector::new(vec![0.995, 0.005, 0.0]).unwrap(),
            sir(0.0, 0.1),
            ObsEdge::new(1, 2).unwrap(),
            1.0,
        )
        .unwrap();
        for s in limit_recursion(&spec, 100).unwrap() {
            assert_eq!(s.nu[0], 0.995);
        }
    }

    #[test]
    fn limit_recursion_conserves_mass() {
        let spec = CompartmentalSpec::new(
            1000,
            ProbVector::new(vec![0.99, 0.0, 0.01, 0.0]).unwrap(),
            Kernel::Seir {
                beta: 0.8,
                rho: 0.1,
                gamma: 0.2,
            },
            ObsEdge::new(1, 2).unwrap(),
            1.0,
        )
        .unwrap();
        for s in limit_recursion(&spec, 10_000).unwrap() {
            assert!((s.nu.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            let cs = s.flows.col_sums();
            for (a, b) in cs.iter().zip(&s.nu) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn spec_validation() {
        let pi = ProbVector::new(vec![0.9, 0.1, 0.0]).unwrap();
        let edge = ObsEdge::new(1, 2).unwrap();
        assert!(CompartmentalSpec::new(0, pi.clone(), sir(0.1, 0.1), edge, 1.0).is_err());
        assert!(CompartmentalSpec::new(10, pi.clone(), sir(-0.1, 0.1), edge, 1.0).is_err());
        assert!(CompartmentalSpec::new(10, pi.clone(), sir(0.1, 0.1), edge, 0.0).is_err());
        assert!(
            CompartmentalSpec::new(10, pi.clone(), sir(0.1, 0.1), ObsEdge::new(1, 4).unwrap(), 1.0)
                .is_err()
        );
        assert!(ObsEdge::new(0, 1).is_err());
        assert!(CompartmentalSpec::new(10, pi, sir(0.1, 0.1), edge, 1.0).is_ok());
    }

    #[test]
    fn registry_validates_kernels() {
        let mut reg = KernelRegistry::new();
        let ok = reg.register("two-state", 2, |_, eta, h, out| {
            let p = -(-h * eta[1]).exp_m1();
            out[(0, 0)] = 1.0 - p;
            out[(0, 1)] = p;
            out[(1, 0)] = 0.0;
            out[(1, 1)] = 1.0;
        });
        assert!(ok.is_ok());
        assert!(reg.get("two-state").is_some());
        let bad = reg.register("leaky", 2, |_, _, _, out| {
            out[(0, 0)] = 0.5;
            out[(0, 1)] = 0.4;
            out[(1, 0)] = 0.0;
            out[(1, 1)] = 1.0;
        });
        assert!(bad.is_err());
        assert!(reg.get("leaky").is_none());
    }

    #[test]
    fn param_access() {
        let mut k = Kernel::Seir {
            beta: 0.8,
            rho: 0.1,
            gamma: 0.2,
        };
        assert_eq!(k.param("rho"), Some(0.1));
        k.set_param("gamma", 0.4).unwrap();
        assert_eq!(k.param("gamma"), Some(0.4));
        assert!(k.set_param("alpha", 0.4).is_err());
    }
}
