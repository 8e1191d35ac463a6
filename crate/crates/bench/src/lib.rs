//! Fixtures shared by the criterion benches.

use lawpal::{simulate, CompartmentalSpec, Kernel, ObsEdge, ObservationModel, ProbVector, SeededRng};

/// SIR with 10^5 individuals, observed on S -> I with a truncated-normal
/// reporting rate, plus one simulated series of length `horizon`.
pub fn sir_fixture(horizon: usize) -> (CompartmentalSpec, ObservationModel, Vec<u64>) {
    let spec = CompartmentalSpec::new(
        100_000,
        ProbVector::new(vec![0.99, 0.01, 0.0]).unwrap(),
        Kernel::Sir { beta: 0.5, gamma: 0.25 },
        ObsEdge::new(1, 2).unwrap(),
        1.0,
    )
    .unwrap();
    let obs = ObservationModel::TruncNormal { mu_q: 0.5, sigma2_q: 0.01 };
    let ys = simulate(&spec, &obs, horizon, &mut SeededRng::new(0)).unwrap().y;
    (spec, obs, ys)
}
