//! JSON run configuration and the parameter binding used by the estimators.
//!
//! ```json
//! {
//!   "model": {
//!     "kernel": { "type": "sir", "beta": 0.15, "gamma": 0.1 },
//!     "n": 100000,
//!     "pi0": [0.995, 0.005, 0.0],
//!     "h": 1.0,
//!     "obs_edge": [1, 2]
//!   },
//!   "observation": { "type": "trunc_normal", "mu_q": 0.5, "sigma2_q": 0.1 },
//!   "estimation": {
//!     "params": [
//!       { "name": "beta", "lo": 0.0001, "hi": 2.0, "init": 0.3 },
//!       { "name": "sigma2_q", "lo": 1e-6, "hi": 10.0, "transform": "log", "init": 0.05 }
//!     ]
//!   },
//!   "execution": { "seed": 1, "horizon": 150 }
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{log_prior, ParamSpace, ParamSpec, Prior, Transform};
use crate::filter::{approx_loglik, ObservationModel};
use crate::model::{CompartmentalSpec, Kernel, ObsEdge, ProbVector, StochMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Sir {
        beta: f64,
        gamma: f64,
    },
    Seir {
        beta: f64,
        rho: f64,
        gamma: f64,
    },
    SeirControl {
        beta: f64,
        rho: f64,
        gamma: f64,
        alpha: f64,
        b: f64,
        d: f64,
        t_star: u32,
    },
    Constant {
        matrix: Vec<Vec<f64>>,
    },
}

impl KernelConfig {
    pub fn build(&self) -> Result<Kernel> {
        let k = match self.clone() {
            KernelConfig::Sir { beta, gamma } => Kernel::Sir { beta, gamma },
            KernelConfig::Seir { beta, rho, gamma } => Kernel::Seir { beta, rho, gamma },
            KernelConfig::SeirControl {
                beta,
                rho,
                gamma,
                alpha,
                b,
                d,
                t_star,
            } => Kernel::SeirControl {
                beta,
                rho,
                gamma,
                alpha,
                b,
                d,
                t_star,
            },
            KernelConfig::Constant { matrix } => Kernel::Constant(StochMatrix::from_rows(&matrix)?),
        };
        k.check_params()?;
        Ok(k)
    }
}

/// Initial infected (`i0`) and exposed (`e0`) counts; the rest start susceptible.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub i0: f64,
    #[serde(default)]
    pub e0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kernel: KernelConfig,
    /// Population size; must be a positive integer (exponent notation allowed).
    pub n: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Seeds>,
    #[serde(default = "default_h")]
    pub h: f64,
    /// 1-based `[from, to]`.
    pub obs_edge: [usize; 2],
}

fn default_h() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamConfig {
    pub name: String,
    pub lo: f64,
    /// Missing means unbounded above.
    #[serde(default)]
    pub hi: Option<f64>,
    #[serde(default)]
    pub transform: Transform,
    /// Missing means the model's configured value.
    #[serde(default)]
    pub init: Option<f64>,
    #[serde(default)]
    pub prior: Option<Prior>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    #[serde(default)]
    pub params: Vec<ParamConfig>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_cycles")]
    pub max_cycles: usize,
    #[serde(default = "default_burn_step_var")]
    pub burn_step_var: f64,
    /// Covariance re-estimation rounds between burn-in and the kept chain.
    #[serde(default)]
    pub adapt_rounds: usize,
    /// When set, the burn-in variance is divided by 10 until a pilot burn-in
    /// accepts at least this fraction of proposals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot_min_accept: Option<f64>,
    /// Start the chain at the coordinate-ascent mode of the log posterior.
    #[serde(default)]
    pub start_at_mode: bool,
}

fn default_tol() -> f64 {
    1e-6
}
fn default_max_cycles() -> usize {
    100
}
fn default_burn_step_var() -> f64 {
    0.01
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            params: Vec::new(),
            tol: default_tol(),
            max_cycles: default_max_cycles(),
            burn_step_var: default_burn_step_var(),
            adapt_rounds: 0,
            pilot_min_accept: None,
            start_at_mode: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default = "default_burnin")]
    pub burnin: usize,
    #[serde(default = "one")]
    pub thin: usize,
    /// Simulation horizon.
    #[serde(default)]
    pub horizon: Option<usize>,
    /// Resample only when ESS falls below this fraction of the particle count.
    #[serde(default)]
    pub ess_threshold: Option<f64>,
}

fn default_seed() -> u64 {
    1
}
fn one() -> usize {
    1
}
fn default_particles() -> usize {
    1000
}
fn default_iters() -> usize {
    10_000
}
fn default_burnin() -> usize {
    2000
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            replicates: 1,
            threads: None,
            particles: default_particles(),
            iters: default_iters(),
            burnin: default_burnin(),
            thin: 1,
            horizon: None,
            ess_threshold: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub observation: ObservationModel,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub execution: ExecutionConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks every invariant by building the model and the estimation space.
    pub fn validate(&self) -> Result<()> {
        let model = Model::from_config(self)?;
        if !self.estimation.params.is_empty() {
            model.param_space(&self.estimation.params)?;
        }
        for p in &self.estimation.params {
            if let Some(prior) = &p.prior {
                prior.validate()?;
            }
        }
        if !(self.estimation.tol > 0.0) {
            return Err(Error::Validation("estimation.tol must be positive".into()));
        }
        if !(self.estimation.burn_step_var > 0.0) {
            return Err(Error::Validation("estimation.burn_step_var must be positive".into()));
        }
        if let Some(a) = self.estimation.pilot_min_accept {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::Validation(format!("estimation.pilot_min_accept {a} outside (0, 1)")));
            }
        }
        let ex = &self.execution;
        if ex.replicates == 0 || ex.thin == 0 || ex.particles < 2 {
            return Err(Error::Validation(
                "execution: replicates and thin must be >= 1, particles >= 2".into(),
            ));
        }
        if ex.threads == Some(0) || ex.horizon == Some(0) {
            return Err(Error::Validation("execution: threads and horizon must be >= 1".into()));
        }
        if let Some(r) = ex.ess_threshold {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Validation(format!("ess_threshold {r} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Reads and validates a JSON run configuration. Unknown keys are rejected.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    RunConfig::from_json(&text)
}

#[derive(Clone, Debug, PartialEq)]
enum Initial {
    Pi0(Vec<f64>),
    Seeds(Seeds),
}

/// A model with named, settable parameters: kernel rates, reporting
/// parameters and (when configured by seeds) `i0` / `e0`.
#[derive(Clone, Debug)]
pub struct Model {
    kernel: Kernel,
    n: u64,
    initial: Initial,
    h: f64,
    edge: ObsEdge,
    obs: ObservationModel,
}

impl Model {
    pub fn new(
        kernel: Kernel,
        n: u64,
        pi0: Vec<f64>,
        h: f64,
        edge: ObsEdge,
        obs: ObservationModel,
    ) -> Result<Self> {
        let m = Self {
            kernel,
            n,
            initial: Initial::Pi0(pi0),
            h,
            edge,
            obs,
        };
        m.spec()?;
        m.obs.validate()?;
        Ok(m)
    }

    pub fn with_seeds(
        kernel: Kernel,
        n: u64,
        seeds: Seeds,
        h: f64,
        edge: ObsEdge,
        obs: ObservationModel,
    ) -> Result<Self> {
        let m = Self {
            kernel,
            n,
            initial: Initial::Seeds(seeds),
            h,
            edge,
            obs,
        };
        m.spec()?;
        m.obs.validate()?;
        Ok(m)
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let mc = &cfg.model;
        if !(mc.n >= 1.0 && mc.n.fract() == 0.0 && mc.n <= 9.007_199_254_740_992e15) {
            return Err(Error::Validation(format!(
                "model.n = {} must be a positive integer",
                mc.n
            )));
        }
        let n = mc.n as u64;
        let kernel = mc.kernel.build()?;
        let edge = ObsEdge::new(mc.obs_edge[0], mc.obs_edge[1])?;
        match (&mc.pi0, &mc.seeds) {
            (Some(pi0), None) => Self::new(kernel, n, pi0.clone(), mc.h, edge, cfg.observation),
            (None, Some(seeds)) => Self::with_seeds(kernel, n, *seeds, mc.h, edge, cfg.observation),
            _ => Err(Error::Validation(
                "model needs exactly one of 'pi0' and 'seeds'".into(),
            )),
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn observation(&self) -> &ObservationModel {
        &self.obs
    }

    pub fn set_observation(&mut self, obs: ObservationModel) -> Result<()> {
        obs.validate()?;
        self.obs = obs;
        Ok(())
    }

    fn pi0(&self) -> Result<ProbVector> {
        match &self.initial {
            Initial::Pi0(p) => ProbVector::new(p.clone()),
            Initial::Seeds(s) => {
                let nf = self.n as f64;
                if s.i0 < 0.0 || s.e0 < 0.0 || s.i0 + s.e0 > nf {
                    return Err(Error::Validation(format!(
                        "seeds i0={}, e0={} incompatible with n={}",
                        s.i0, s.e0, self.n
                    )));
                }
                let v = match self.kernel {
                    Kernel::Sir { .. } => {
                        if s.e0 != 0.0 {
                            return Err(Error::Validation("SIR has no exposed compartment for e0".into()));
                        }
                        vec![nf - s.i0, s.i0, 0.0]
                    }
                    Kernel::Seir { .. } | Kernel::SeirControl { .. } => {
                        vec![nf - s.i0 - s.e0, s.e0, s.i0, 0.0]
                    }
                    _ => {
                        return Err(Error::Validation(format!(
                            "seeds are not defined for kernel {}",
                            self.kernel.name()
                        )))
                    }
                };
                ProbVector::from_weights(&v)
            }
        }
    }

    pub fn spec(&self) -> Result<CompartmentalSpec> {
        CompartmentalSpec::new(self.n, self.pi0()?, self.kernel.clone(), self.edge, self.h)
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        match (&self.initial, name) {
            (Initial::Seeds(s), "i0") => Some(s.i0),
            (Initial::Seeds(s), "e0") => Some(s.e0),
            _ => self.kernel.param(name).or_else(|| self.obs.param(name)),
        }
    }

    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        match (&mut self.initial, name) {
            (Initial::Seeds(s), "i0") => s.i0 = value,
            (Initial::Seeds(s), "e0") => s.e0 = value,
            _ if self.kernel.param(name).is_some() => self.kernel.set_param(name, value)?,
            _ if self.obs.param(name).is_some() => self.obs.set_param(name, value)?,
            _ => {
                return Err(Error::Validation(format!(
                    "unknown parameter '{name}' for kernel {} with {} observations",
                    self.kernel.name(),
                    match self.obs {
                        ObservationModel::Fixed { .. } => "fixed",
                        ObservationModel::TruncNormal { .. } => "trunc_normal",
                    }
                )))
            }
        }
        Ok(())
    }

    /// Copy with `names[k] = values[k]` applied.
    pub fn with_values(&self, names: &[String], values: &[f64]) -> Result<Self> {
        let mut m = self.clone();
        for (n, v) in names.iter().zip(values) {
            m.set_param(n, *v)?;
        }
        Ok(m)
    }

    /// Builds the model and observation law at the given parameter values.
    pub fn instantiate(&self, names: &[String], values: &[f64]) -> Result<(CompartmentalSpec, ObservationModel)> {
        let m = self.with_values(names, values)?;
        m.kernel.check_params()?;
        m.obs.validate()?;
        Ok((m.spec()?, m.obs))
    }

    pub fn param_space(&self, params: &[ParamConfig]) -> Result<ParamSpace> {
        let specs = params
            .iter()
            .map(|p| {
                let current = self.param(&p.name).ok_or_else(|| {
                    Error::Validation(format!("parameter '{}' does not exist in this model", p.name))
                })?;
                ParamSpec::new(
                    &p.name,
                    p.lo,
                    p.hi.unwrap_or(f64::INFINITY),
                    p.transform,
                    p.init.unwrap_or(current),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        ParamSpace::new(specs)
    }
}

/// Approximate log-likelihood and log-posterior as functions of the free
/// parameters. Parameter values that fail model validation map to `-inf`.
#[derive(Clone, Debug)]
pub struct Objective<'a> {
    pub model: &'a Model,
    pub names: Vec<String>,
    pub priors: Vec<Prior>,
    pub ys: &'a [u64],
}

impl<'a> Objective<'a> {
    pub fn new(model: &'a Model, params: &[ParamConfig], ys: &'a [u64]) -> Self {
        Self {
            model,
            names: params.iter().map(|p| p.name.clone()).collect(),
            priors: params.iter().map(|p| p.prior.unwrap_or(Prior::Flat)).collect(),
            ys,
        }
    }

    pub fn loglik(&self, values: &[f64]) -> f64 {
        match self.model.instantiate(&self.names, values) {
            Ok((spec, obs)) => approx_loglik(&spec, &obs, self.ys).unwrap_or(f64::NEG_INFINITY),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    pub fn log_prior(&self, values: &[f64]) -> f64 {
        self.priors.iter().zip(values).map(|(p, v)| log_prior(p, *v)).sum()
    }

    pub fn log_post(&self, values: &[f64]) -> f64 {
        let lp = self.log_prior(values);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + self.loglik(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIR: &str = r#"{
        "model": {
            "kernel": { "type": "sir", "beta": 0.15, "gamma": 0.1 },
            "n": 1e5,
            "pi0": [0.995, 0.005, 0.0],
            "obs_edge": [1, 2]
        },
        "observation": { "type": "trunc_normal", "mu_q": 0.5, "sigma2_q": 0.1 },
        "estimation": {
            "params": [
                { "name": "beta", "lo": 0.0001, "hi": 2.0, "init": 0.3 },
                { "name": "sigma2_q", "lo": 1e-6, "hi": 10.0, "transform": "log",
                  "prior": { "type": "exponential", "rate": 0.1 } }
            ]
        }
    }"#;

    #[test]
    fn parses_and_binds() {
        let cfg = RunConfig::from_json(SIR).unwrap();
        let model = Model::from_config(&cfg).unwrap();
        assert_eq!(model.spec().unwrap().n(), 100_000);
        let space = model.param_space(&cfg.estimation.params).unwrap();
        assert_eq!(space.init(), vec![0.3, 0.1]);
        let (spec, obs) = model
            .instantiate(&space.names(), &[0.2, 0.05])
            .unwrap();
        assert_eq!(spec.kernel().param("beta"), Some(0.2));
        assert_eq!(obs.param("sigma2_q"), Some(0.05));
        assert_eq!(cfg.execution.particles, 1000);
    }

    #[test]
    fn rejects_unknown_keys_and_params() {
        let bad = SIR.replace("\"obs_edge\"", "\"colour\": 1, \"obs_edge\"");
        assert!(matches!(RunConfig::from_json(&bad), Err(Error::Validation(_))));
        let bad = SIR.replace("\"name\": \"beta\"", "\"name\": \"rho\"");
        assert!(RunConfig::from_json(&bad).is_err());
        let bad = SIR.replace("0.995, 0.005", "0.9, 0.005");
        assert!(RunConfig::from_json(&bad).is_err());
        let bad = SIR.replace("1e5", "1.5");
        assert!(RunConfig::from_json(&bad).is_err());
    }

    #[test]
    fn seeds_for_seir() {
        let json = r#"{
            "model": {
                "kernel": { "type": "seir_control", "beta": 1.5, "rho": 0.2, "gamma": 0.3,
                            "alpha": 0.1, "b": 0.3, "d": 3.0, "t_star": 23 },
                "n": 1000,
                "seeds": { "i0": 20, "e0": 10 },
                "obs_edge": [2, 3]
            },
            "observation": { "type": "fixed", "q": 0.6 }
        }"#;
        let cfg = RunConfig::from_json(json).unwrap();
        let model = Model::from_config(&cfg).unwrap();
        assert_eq!(model.spec().unwrap().pi0().as_slice(), &[0.97, 0.01, 0.02, 0.0]);
        let (spec, obs) = model
            .instantiate(&["e0".into(), "mu_q".into()], &[30.0, 0.4])
            .unwrap();
        assert_eq!(spec.pi0().as_slice()[1], 0.03);
        assert_eq!(obs, ObservationModel::Fixed { q: 0.4 });
    }

    #[test]
    fn objective_maps_invalid_values_to_neg_inf() {
        let cfg = RunConfig::from_json(SIR).unwrap();
        let model = Model::from_config(&cfg).unwrap();
        let ys = [3u64, 5, 8];
        let obj = Objective::new(&model, &cfg.estimation.params, &ys);
        assert!(obj.loglik(&[0.2, 0.1]).is_finite());
        assert_eq!(obj.loglik(&[-1.0, 0.1]), f64::NEG_INFINITY);
        assert_eq!(obj.log_post(&[0.2, -0.1]), f64::NEG_INFINITY);
    }

    #[test]
    fn config_round_trips() {
        let cfg = RunConfig::from_json(SIR).unwrap();
        let again = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }
}
