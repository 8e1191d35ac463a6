//! Forward simulation of the latent compartmental process and its
//! binomially thinned incidence observations.
//!
//! Draw order per seed: `x_0` by conditional binomials; then for each step the
//! rows of `Z_t` in compartment order (empty compartments draw nothing), then
//! `q_t`, then `y_t`.

use crate::error::{Error, Result};
use crate::filter::ObservationModel;
use crate::model::{eta_normalize_into, CompartmentalSpec, SquareMatrix};
use crate::rand_kit::{binomial_unchecked, multinomial_into, SeededRng, TruncNormal};

/// One simulated path. `x[t]` for `t = 0..=T`; `z`, `q`, `y` are indexed by
/// `t - 1` for `t = 1..=T`. Each `z[t - 1]` is the row-major `m x m` flow matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub m: usize,
    pub x: Vec<Vec<u64>>,
    pub z: Vec<Vec<u64>>,
    pub q: Vec<f64>,
    pub y: Vec<u64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.y.len()
    }

    /// `Z_t^{(i,j)}` with 0-based compartments and `t` in `1..=T`.
    pub fn flow(&self, t: usize, i: usize, j: usize) -> u64 {
        self.z[t - 1][i * self.m + j]
    }
}

enum QSource<'a> {
    Model(&'a ObservationModel, Option<TruncNormal>),
    Path(&'a [f64]),
}

/// Per-step work buffers for [`transition_step`].
pub(crate) struct StepScratch {
    kernel: SquareMatrix,
    eta: Vec<f64>,
    xf: Vec<f64>,
}

impl StepScratch {
    pub(crate) fn new(m: usize) -> Self {
        Self {
            kernel: SquareMatrix::zeros(m),
            eta: vec![0.0; m],
            xf: vec![0.0; m],
        }
    }
}

/// Draws the transition counts of one step. `z` is row-major `m x m`; the
/// new state is written to `x_next`.
pub(crate) fn transition_step(
    rng: &mut SeededRng,
    spec: &CompartmentalSpec,
    t: usize,
    x_prev: &[u64],
    scratch: &mut StepScratch,
    z: &mut [u64],
    x_next: &mut [u64],
) {
    let m = spec.m();
    for (f, v) in scratch.xf.iter_mut().zip(x_prev) {
        *f = *v as f64;
    }
    // counts are non-negative, so normalization cannot fail
    let _ = eta_normalize_into(&scratch.xf, &mut scratch.eta);
    spec.kernel_at(t, &scratch.eta, &mut scratch.kernel);
    x_next.iter_mut().for_each(|v| *v = 0);
    for i in 0..m {
        let row = &mut z[i * m..(i + 1) * m];
        if x_prev[i] == 0 {
            row.iter_mut().for_each(|v| *v = 0);
            continue;
        }
        multinomial_into(rng, x_prev[i], scratch.kernel.row(i), row);
        for (xn, c) in x_next.iter_mut().zip(row.iter()) {
            *xn += c;
        }
    }
}

fn run(
    spec: &CompartmentalSpec,
    source: QSource<'_>,
    horizon: usize,
    rng: &mut SeededRng,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::Validation("horizon must be at least 1".into()));
    }
    let m = spec.m();
    let edge = spec.obs_edge();
    let mut x0 = vec![0u64; m];
    multinomial_into(rng, spec.n(), spec.pi0().as_slice(), &mut x0);

    let mut traj = Trajectory {
        m,
        x: Vec::with_capacity(horizon + 1),
        z: Vec::with_capacity(horizon),
        q: Vec::with_capacity(horizon),
        y: Vec::with_capacity(horizon),
    };
    traj.x.push(x0);
    let mut scratch = StepScratch::new(m);
    for t in 1..=horizon {
        let mut z = vec![0u64; m * m];
        let mut x_next = vec![0u64; m];
        transition_step(
            rng,
            spec,
            t,
            &traj.x[t - 1],
            &mut scratch,
            &mut z,
            &mut x_next,
        );
        let q = match &source {
            QSource::Model(ObservationModel::Fixed { q }, _) => *q,
            QSource::Model(_, Some(tn)) => tn.sample(rng),
            QSource::Model(_, None) => unreachable!("trunc-normal law prepared up front"),
            QSource::Path(path) => path[t - 1],
        };
        let flow = z[edge.from * m + edge.to];
        let y = binomial_unchecked(rng, flow, q);
        traj.z.push(z);
        traj.x.push(x_next);
        traj.q.push(q);
        traj.y.push(y);
    }
    Ok(traj)
}

/// Simulates `x_{0:T}`, `Z_{1:T}`, `q_{1:T}` and `y_{1:T}`.
pub fn simulate(
    spec: &CompartmentalSpec,
    obs: &ObservationModel,
    horizon: usize,
    rng: &mut SeededRng,
) -> Result<Trajectory> {
    obs.validate()?;
    let tn = match obs {
        ObservationModel::TruncNormal { mu_q, sigma2_q } => Some(TruncNormal::unit(*mu_q, *sigma2_q)?),
        ObservationModel::Fixed { .. } => None,
    };
    run(spec, QSource::Model(obs, tn), horizon, rng)
}

/// As [`simulate`], with the reporting probabilities taken from `q_path`.
pub fn simulate_with_fixed_q_path(
    spec: &CompartmentalSpec,
    q_path: &[f64],
    horizon: usize,
    rng: &mut SeededRng,
) -> Result<Trajectory> {
    if q_path.len() != horizon {
        return Err(Error::Validation(format!(
            "q path has length {}, horizon is {horizon}",
            q_path.len()
        )));
    }
    if let Some(q) = q_path.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(Error::Validation(format!("q path entry {q} outside [0, 1]")));
    }
    run(spec, QSource::Path(q_path), horizon, rng)
}
