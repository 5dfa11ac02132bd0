//! Controlled stochastic heat equation on (0,1) with Dirichlet conditions,
//! projected on the first `N` sine modes.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::qwiener::QWienerSpec;
use super::reaction::ReactionSpec;
use super::sine::{SineGrid, DEFAULT_INTERVALS};
use crate::error::{Error, Result};
use crate::problem::{ControlProblem, Dynamics};
use crate::spectral::{SpectralOperator, StateVec};

/// Control grid and horizon shared by the SPDE examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpdeSetting {
    pub controls: Vec<f64>,
    pub horizon: f64,
}

impl Default for SpdeSetting {
    fn default() -> Self {
        Self {
            controls: vec![-1.0, 0.0, 1.0],
            horizon: 1.0,
        }
    }
}

/// Nemytskii lifts of the pointwise terms through the sine grid.
pub(crate) struct FieldLift {
    pub grid: SineGrid,
    pub n: usize,
    pub sqrt_q: Vec<f64>,
    pub spec: ReactionSpec,
}

impl FieldLift {
    pub fn new(spec: &ReactionSpec, q: &QWienerSpec, n: usize) -> Result<Self> {
        let modes = n.max(q.dim());
        if modes >= DEFAULT_INTERVALS {
            return Err(Error::Argument(format!(
                "{modes} modes exceed the {DEFAULT_INTERVALS}-interval quadrature grid"
            )));
        }
        Ok(Self {
            grid: SineGrid::new(modes, DEFAULT_INTERVALS),
            n,
            sqrt_q: q.sqrt(),
            spec: spec.clone(),
        })
    }

    fn pointwise(&self, g: &super::reaction::FieldFn, t: f64, field: &[f64], u: f64) -> Vec<f64> {
        self.grid
            .nodes
            .iter()
            .zip(field)
            .map(|(&xi, &y)| g(t, xi, y, u))
            .collect()
    }

    /// Coefficients of `f(t, ·, γ(·), u)`.
    pub fn drift(&self, t: f64, field: &[f64], u: f64) -> Vec<f64> {
        self.grid.analyze(&self.pointwise(&self.spec.f, t, field, u), self.n)
    }

    /// `σ_{ik} = √q_k ⟨h e_k, e_i⟩` for i < n.
    pub fn diffusion(&self, t: f64, field: &[f64], u: f64) -> DMatrix<f64> {
        let h = self.pointwise(&self.spec.h, t, field, u);
        let m = self.sqrt_q.len();
        let mut s = DMatrix::zeros(self.n, m);
        for k in 0..m {
            let hk: Vec<f64> = h.iter().zip(self.grid.mode(k)).map(|(a, b)| a * b).collect();
            for (i, c) in self.grid.analyze(&hk, self.n).into_iter().enumerate() {
                s[(i, k)] = self.sqrt_q[k] * c;
            }
        }
        s
    }

    /// `σ w = P_N(h · Σ_k √q_k w_k e_k)`.
    pub fn diffusion_apply(&self, t: f64, field: &[f64], u: f64, w: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = w.iter().zip(&self.sqrt_q).map(|(a, b)| a * b).collect();
        let noise = self.grid.synthesize(&scaled);
        let h = self.pointwise(&self.spec.h, t, field, u);
        let prod: Vec<f64> = h.iter().zip(&noise).map(|(a, b)| a * b).collect();
        self.grid.analyze(&prod, self.n)
    }

    /// `∫ α(t, γ(ξ), u) dξ`, the boundary nodes carrying `γ = 0`.
    pub fn running(&self, t: f64, field: &[f64], u: f64) -> f64 {
        let vals: Vec<f64> = field.iter().map(|&y| (self.spec.alpha)(t, y, u)).collect();
        self.grid.integrate(&vals, (self.spec.alpha)(t, 0.0, u))
    }

    pub fn terminal(&self, field: &[f64]) -> f64 {
        let vals: Vec<f64> = field.iter().map(|&y| (self.spec.beta)(y)).collect();
        self.grid.integrate(&vals, (self.spec.beta)(0.0))
    }
}

struct ParabolicDynamics {
    lift: FieldLift,
}

impl ParabolicDynamics {
    fn field(&self, x: &StateVec) -> Vec<f64> {
        self.lift.grid.synthesize(x.as_slice())
    }
}

impl Dynamics for ParabolicDynamics {
    fn drift(&self, t: f64, x: &StateVec, u: f64) -> StateVec {
        StateVec::from(self.lift.drift(t, &self.field(x), u))
    }

    fn diffusion(&self, t: f64, x: &StateVec, u: f64) -> DMatrix<f64> {
        self.lift.diffusion(t, &self.field(x), u)
    }

    fn diffusion_apply(&self, t: f64, x: &StateVec, u: f64, w: &[f64]) -> StateVec {
        StateVec::from(self.lift.diffusion_apply(t, &self.field(x), u, w))
    }

    fn running(&self, t: f64, x: &StateVec, y: f64, _z: &[f64], u: f64) -> f64 {
        self.lift.running(t, &self.field(x), u) - self.lift.spec.discount * y
    }

    fn terminal(&self, x: &StateVec) -> f64 {
        self.lift.terminal(&self.field(x))
    }
}

/// Heat equation `dX = (AX + b)dt + σ dW_Q` with `A` the Dirichlet Laplacian
/// on `n` modes and noise covariance `q`.
pub fn build_parabolic(spec: &ReactionSpec, q: &QWienerSpec, n: usize, setting: &SpdeSetting) -> Result<ControlProblem> {
    if n == 0 {
        return Err(Error::Argument("need at least one mode".into()));
    }
    let lift = FieldLift::new(spec, q, n)?;
    let m = q.dim();
    let lip = spec.lip_const * (1.0 + q.trace().sqrt()) + spec.discount.abs();
    ControlProblem::new(
        "parabolic",
        SpectralOperator::dirichlet_laplacian(n)?,
        setting.controls.clone(),
        m,
        Arc::new(ParabolicDynamics { lift }),
        lip,
        setting.horizon,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::reaction::ReactionKind;

    fn sv(v: &[f64]) -> StateVec {
        StateVec::new(v.to_vec()).unwrap()
    }

    #[test]
    fn linear_terminal_reads_the_mean() {
        let spec = ReactionKind::LinearTerminal.build().unwrap();
        let q = QWienerSpec::power_law(4, 3.0).unwrap();
        let p = build_parabolic(&spec, &q, 4, &SpdeSetting::default()).unwrap();
        let x = sv(&[1.0, 0.5, -0.3, 0.2]);
        // ∫ e_i = √2 (1 − (−1)^i)/(iπ), up to trapezoid error
        let exact: f64 = x
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let k = (i + 1) as f64;
                c * std::f64::consts::SQRT_2 * (1.0 - (-1f64).powi(i as i32 + 1)) / (k * std::f64::consts::PI)
            })
            .sum();
        assert!((p.phi(&x) - exact).abs() < 1e-3);
        assert_eq!(p.b(0.0, &x, 1.0).norm(), 0.0);
    }

    #[test]
    fn constant_noise_is_diagonal_in_modes() {
        let spec = ReactionKind::ConstantNoise { level: 0.7 }.build().unwrap();
        let q = QWienerSpec::power_law(6, 3.0).unwrap();
        let p = build_parabolic(&spec, &q, 6, &SpdeSetting::default()).unwrap();
        let s = p.sigma(0.2, &sv(&[0.1; 6]), 0.0);
        let ssq = &s * s.transpose();
        for i in 0..6 {
            for k in 0..6 {
                let want = if i == k { 0.49 * q.q_eigenvalues[i] } else { 0.0 };
                assert!((ssq[(i, k)] - want).abs() < 1e-13);
            }
        }
        // trace two ways: Tr σσ* and c² Tr Q
        assert!((ssq.trace() - 0.49 * q.trace()).abs() < 1e-13);
        let w = [0.3, -0.1, 0.2, 0.0, 0.5, 1.0];
        let direct = &s * nalgebra::DVector::from_column_slice(&w);
        let fast = p.dynamics.diffusion_apply(0.2, &sv(&[0.1; 6]), 0.0, &w);
        for i in 0..6 {
            assert!((direct[i] - fast[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn hilbert_schmidt_bound_chain() {
        let spec = ReactionKind::default().build().unwrap();
        let q = QWienerSpec::power_law(16, 3.0).unwrap();
        let p = build_parabolic(&spec, &q, 16, &SpdeSetting::default()).unwrap();
        let l = spec.lip_const;
        for seed in 0..20u64 {
            let x: Vec<f64> = (0..16).map(|i| ((seed * 31 + i) as f64).sin() * 2.0 / (1.0 + i as f64)).collect();
            let x = sv(&x);
            for &u in &p.controls {
                let hs = p.sigma(0.0, &x, u).norm_squared();
                assert!(hs <= l * l * q.trace() * (1.0 + x.norm_sq()));
            }
        }
    }
}
