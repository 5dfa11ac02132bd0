//! Controlled stochastic wave equation as a first-order system in the energy
//! space `H¹₀ × L²`.
//!
//! States are stored in energy-scaled coordinates: the first block holds
//! `ỹ_i = iπ y_i` (so the Euclidean norm is the energy norm), the second the
//! velocity coefficients `z_i`. The generator rotates each pair with
//! frequency `iπ`. Coefficients are autonomous: the reaction terms are
//! evaluated at `t = 0`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::parabolic::{FieldLift, SpdeSetting};
use super::qwiener::QWienerSpec;
use super::reaction::ReactionSpec;
use crate::error::{Error, Result};
use crate::problem::{ControlProblem, Dynamics};
use crate::spectral::{SpectralOperator, StateVec};

struct HyperbolicDynamics {
    lift: FieldLift,
}

impl HyperbolicDynamics {
    fn displacement(&self, x: &StateVec) -> Vec<f64> {
        let n = self.lift.n;
        let y: Vec<f64> = (0..n).map(|i| x[i] / ((i + 1) as f64 * PI)).collect();
        self.lift.grid.synthesize(&y)
    }

    fn lift_velocity(&self, v: Vec<f64>) -> StateVec {
        let mut out = vec![0.0; 2 * self.lift.n];
        out[self.lift.n..].copy_from_slice(&v);
        StateVec::from(out)
    }
}

impl Dynamics for HyperbolicDynamics {
    fn drift(&self, _t: f64, x: &StateVec, u: f64) -> StateVec {
        self.lift_velocity(self.lift.drift(0.0, &self.displacement(x), u))
    }

    fn diffusion(&self, _t: f64, x: &StateVec, u: f64) -> DMatrix<f64> {
        let n = self.lift.n;
        let lower = self.lift.diffusion(0.0, &self.displacement(x), u);
        let mut s = DMatrix::zeros(2 * n, lower.ncols());
        s.rows_mut(n, n).copy_from(&lower);
        s
    }

    fn diffusion_apply(&self, _t: f64, x: &StateVec, u: f64, w: &[f64]) -> StateVec {
        self.lift_velocity(self.lift.diffusion_apply(0.0, &self.displacement(x), u, w))
    }

    fn running(&self, _t: f64, x: &StateVec, y: f64, _z: &[f64], u: f64) -> f64 {
        self.lift.running(0.0, &self.displacement(x), u) - self.lift.spec.discount * y
    }

    fn terminal(&self, x: &StateVec) -> f64 {
        self.lift.terminal(&self.displacement(x))
    }
}

/// Mode frequencies `iπ`, i = 1..=n.
pub fn wave_frequencies(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 * PI).collect()
}

/// Energy-scaled state from displacement and velocity coefficients.
pub fn energy_state(y: &[f64], z: &[f64]) -> Result<StateVec> {
    if y.len() != z.len() {
        return Err(Error::shape(y.len(), z.len()));
    }
    let mut v: Vec<f64> = y.iter().enumerate().map(|(i, c)| c * (i + 1) as f64 * PI).collect();
    v.extend_from_slice(z);
    StateVec::new(v)
}

pub fn build_hyperbolic(spec: &ReactionSpec, q: &QWienerSpec, n: usize, setting: &SpdeSetting) -> Result<ControlProblem> {
    if n == 0 {
        return Err(Error::Argument("need at least one mode".into()));
    }
    let lift = FieldLift::new(spec, q, n)?;
    let m = q.dim();
    let lip = spec.lip_const * (1.0 + q.trace().sqrt()) + spec.discount.abs();
    ControlProblem::new(
        "hyperbolic",
        SpectralOperator::wave(wave_frequencies(n))?,
        setting.controls.clone(),
        m,
        Arc::new(HyperbolicDynamics { lift }),
        lip,
        setting.horizon,
    )
}
