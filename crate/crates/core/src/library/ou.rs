//! Scalar Ornstein–Uhlenbeck control problem.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::Result;
use crate::problem::{ControlProblem, FnDynamics};
use crate::spectral::{SpectralOperator, StateVec};

pub const OU_SIGMA: f64 = 0.5;
pub const OU_DISCOUNT: f64 = 0.1;

/// `dX = (λX + u)dt + 0.5 dW`, `u ∈ {0, ½, 1}`, running reward
/// `−½u² − 0.1 y`, terminal reward `|x|`, horizon 1.
pub fn ou_preset() -> Result<ControlProblem> {
    ou_with_rate(-1.0)
}

/// The OU preset with mean-reversion rate `λ ≤ 0` (`λ = 0` is Brownian motion with drift).
pub fn ou_with_rate(rate: f64) -> Result<ControlProblem> {
    let op = SpectralOperator::diagonal(vec![rate])?;
    let dynamics = FnDynamics::new(1, 1)
        .drift(|_, _, u| StateVec::from(vec![u]))
        .diffusion(|_, _, _| DMatrix::from_element(1, 1, OU_SIGMA))
        .running(|_, _, y, _, u| -0.5 * u * u - OU_DISCOUNT * y)
        .terminal(|x| x[0].abs());
    ControlProblem::new("ou", op, vec![0.0, 0.5, 1.0], 1, Arc::new(dynamics), 1.0, 1.0)
}

/// `b = σ = q = φ = 0` on a diagonal generator: paths follow `e^{tA}x`.
pub fn flow_preset(rates: Vec<f64>, horizon: f64) -> Result<ControlProblem> {
    let n = rates.len();
    let op = SpectralOperator::diagonal(rates)?;
    ControlProblem::new("flow", op, vec![0.0], n, Arc::new(FnDynamics::new(n, n)), 1.0, horizon)
}
