//! Approximate likelihoods, filtering and inference for stochastic
//! compartmental epidemic models observed through under-reported,
//! over-dispersed incidence counts.

pub mod config;
pub mod error;
pub mod estimators;
pub mod filter;
pub mod model;
#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
pub mod rand_kit;
pub mod series;
pub mod simulator;
pub mod smc;
pub mod workflow;

pub use error::{Error, Result};
pub use estimators::{
    coordinate_ascent, log_prior, rwm_chain, tune_burn_step_var, AscentResult, Chain, ParamSpace, ParamSpec, Prior,
    RwmOptions, Transform,
};
pub use filter::{approx_loglik, run_filter, run_lawpal, run_pal, FilterOutput, FilterStep, ObservationModel};
pub use model::{
    limit_recursion, CompartmentalSpec, CustomKernel, Kernel, KernelRegistry, LimitState, ObsEdge,
    ProbVector, SquareMatrix, StochMatrix,
};
pub use rand_kit::SeededRng;
pub use simulator::{simulate, simulate_with_fixed_q_path, Trajectory};
pub use smc::{run_bpf, BpfOptions, PfOutput};
pub use config::{load_config, Model, Objective, RunConfig};
pub use series::{load_series, save_series, IncidenceSeries};
