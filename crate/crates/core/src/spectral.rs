//! Finite spectral model of the state space: coefficient vectors, the
//! generator of a contraction semigroup in block-diagonal form, Galerkin
//! projections and the Yosida approximation.
//!
//! Two generator shapes are supported. A diagonal generator with real
//! eigenvalues `λ_1 ≥ λ_2 ≥ … ≥ λ_N` models self-adjoint dissipative
//! operators such as the Dirichlet Laplacian on the sine basis. An
//! oscillator generator acts on coordinate pairs `(i, n + i)` through the
//! 2×2 block `[[a_i, b_i], [-b_i, a_i]]` with `a_i ≤ 0`; it models the
//! first-order form of the wave equation in energy-scaled coordinates, where
//! the Euclidean norm of the coefficients is the energy norm.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A point of the truncated space `H_N`, stored as basis coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVec {
    coeffs: Vec<f64>,
}

impl StateVec {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::Argument(format!(
                "state coefficient {i} is not finite"
            )));
        }
        Ok(Self { coeffs })
    }

    /// Wraps coefficients produced by internal arithmetic on finite inputs.
    pub(crate) fn from_vec(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            coeffs: vec![0.0; dim],
        }
    }

    /// The basis vector `e_i` (zero-based).
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.coeffs[i] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &StateVec) -> f64 {
        dot(&self.coeffs, &other.coeffs)
    }

    pub fn sub(&self, other: &StateVec) -> StateVec {
        StateVec::from_vec(
            self.coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn add(&self, other: &StateVec) -> StateVec {
        StateVec::from_vec(
            self.coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn scale(&self, k: f64) -> StateVec {
        StateVec::from_vec(self.coeffs.iter().map(|c| c * k).collect())
    }

    /// `self += k * other`
    pub fn axpy(&mut self, k: f64, other: &StateVec) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += k * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }
}

impl std::ops::Index<usize> for StateVec {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.coeffs[i]
    }
}

impl std::ops::IndexMut<usize> for StateVec {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.coeffs[i]
    }
}

impl From<Vec<f64>> for StateVec {
    /// Unchecked; coefficient maps may produce non-finite values that the
    /// simulator reports as numeric errors. Use [`StateVec::new`] to validate.
    fn from(coeffs: Vec<f64>) -> Self {
        StateVec::from_vec(coeffs)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthogonal projections `P_M x` (first `m` coefficients) and `Q_M x` (the rest).
pub fn project(x: &StateVec, m: usize) -> Result<(StateVec, StateVec)> {
    if m == 0 || m > x.dim() {
        return Err(Error::Shape {
            expected: x.dim(),
            got: m,
        });
    }
    let (head, tail) = x.coeffs.split_at(m);
    Ok((
        StateVec::from_vec(head.to_vec()),
        StateVec::from_vec(tail.to_vec()),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum OperatorKind {
    Diagonal {
        eigenvalues: Vec<f64>,
    },
    /// Pairs `(i, n + i)` rotate with frequency `frequency[i]` and decay at
    /// rate `decay[i]`.
    Oscillator {
        decay: Vec<f64>,
        frequency: Vec<f64>,
    },
}

/// Generator `A` of a contraction semigroup on the spectral basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralOperator {
    #[serde(flatten)]
    kind: OperatorKind,
}

impl SpectralOperator {
    pub fn diagonal(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::Argument("operator needs at least one mode".into()));
        }
        for (i, &l) in eigenvalues.iter().enumerate() {
            if !l.is_finite() || l > 0.0 {
                return Err(Error::Domain(format!(
                    "eigenvalue {i} = {l} violates the contraction requirement λ ≤ 0"
                )));
            }
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Argument(
                "eigenvalues must be sorted non-increasing".into(),
            ));
        }
        Ok(Self {
            kind: OperatorKind::Diagonal { eigenvalues },
        })
    }

    /// Dirichlet Laplacian on (0,1) in the sine basis: `λ_i = -(iπ)²`.
    pub fn dirichlet_laplacian(n: usize) -> Result<Self> {
        let pi = std::f64::consts::PI;
        Self::diagonal((1..=n).map(|i| -(i as f64 * pi).powi(2)).collect())
    }

    /// Undamped wave generator in energy-scaled coordinates.
    pub fn wave(frequency: Vec<f64>) -> Result<Self> {
        let decay = vec![0.0; frequency.len()];
        Self::oscillator(decay, frequency)
    }

    pub fn oscillator(decay: Vec<f64>, frequency: Vec<f64>) -> Result<Self> {
        if frequency.is_empty() {
            return Err(Error::Argument("operator needs at least one mode".into()));
        }
        check_dim(frequency.len(), decay.len())?;
        for (i, (&a, &b)) in decay.iter().zip(&frequency).enumerate() {
            if !a.is_finite() || !b.is_finite() || a > 0.0 {
                return Err(Error::Domain(format!(
                    "mode {i}: decay {a} / frequency {b} do not generate a contraction"
                )));
            }
        }
        Ok(Self {
            kind: OperatorKind::Oscillator { decay, frequency },
        })
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            OperatorKind::Diagonal { eigenvalues } => eigenvalues.len(),
            OperatorKind::Oscillator { frequency, .. } => 2 * frequency.len(),
        }
    }

    /// Eigenvalues of a diagonal generator; `None` for oscillator blocks.
    pub fn eigenvalues(&self) -> Option<&[f64]> {
        match &self.kind {
            OperatorKind::Diagonal { eigenvalues } => Some(eigenvalues),
            OperatorKind::Oscillator { .. } => None,
        }
    }

    pub fn is_self_adjoint(&self) -> bool {
        match &self.kind {
            OperatorKind::Diagonal { .. } => true,
            OperatorKind::Oscillator { frequency, .. } => frequency.iter().all(|&b| b == 0.0),
        }
    }

    /// Precomputed `e^{tA}` for a fixed `t ≥ 0`.
    pub fn propagator(&self, t: f64) -> Result<Propagator> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("semigroup time must be ≥ 0, got {t}")));
        }
        Ok(match &self.kind {
            OperatorKind::Diagonal { eigenvalues } => {
                Propagator::Diagonal(eigenvalues.iter().map(|l| (l * t).exp()).collect())
            }
            OperatorKind::Oscillator { decay, frequency } => Propagator::Rotation(
                decay
                    .iter()
                    .zip(frequency)
                    .map(|(a, b)| {
                        let r = (a * t).exp();
                        let (s, c) = (b * t).sin_cos();
                        (r * c, r * s)
                    })
                    .collect(),
            ),
        })
    }

    /// `e^{tA} x`.
    pub fn semigroup_apply(&self, t: f64, x: &StateVec) -> Result<StateVec> {
        check_dim(self.dim(), x.dim())?;
        let p = self.propagator(t)?;
        let mut out = x.clone();
        p.apply_in_place(out.as_mut_slice());
        if let Propagator::Rotation(_) = p {
            // rounding in a rotation can add an ulp or two; pull back so that
            // |e^{tA}x| ≤ |x| holds in floating point as well
            let bound = x.norm();
            let mut n = out.norm();
            while n > bound {
                let k = bound / n * (1.0 - f64::EPSILON);
                out.as_mut_slice().iter_mut().for_each(|c| *c *= k);
                n = out.norm();
            }
        }
        Ok(out)
    }

    /// `A x`.
    pub fn apply(&self, x: &StateVec) -> Result<StateVec> {
        check_dim(self.dim(), x.dim())?;
        Ok(StateVec::from_vec(self.apply_slice(x.as_slice(), false)))
    }

    /// `A* x`.
    pub fn adjoint_apply(&self, x: &StateVec) -> Result<StateVec> {
        check_dim(self.dim(), x.dim())?;
        Ok(StateVec::from_vec(self.apply_slice(x.as_slice(), true)))
    }

    fn apply_slice(&self, x: &[f64], adjoint: bool) -> Vec<f64> {
        match &self.kind {
            OperatorKind::Diagonal { eigenvalues } => {
                eigenvalues.iter().zip(x).map(|(l, c)| l * c).collect()
            }
            OperatorKind::Oscillator { decay, frequency } => {
                let n = frequency.len();
                let sign = if adjoint { -1.0 } else { 1.0 };
                let mut out = vec![0.0; 2 * n];
                for i in 0..n {
                    let (y, z) = (x[i], x[n + i]);
                    let (a, b) = (decay[i], sign * frequency[i]);
                    out[i] = a * y + b * z;
                    out[n + i] = -b * y + a * z;
                }
                out
            }
        }
    }

    /// `⟨A* x, y⟩`.
    pub fn adjoint_pair(&self, x: &StateVec, y: &StateVec) -> Result<f64> {
        check_dim(self.dim(), y.dim())?;
        Ok(self.adjoint_apply(x)?.dot(y))
    }

    pub fn yosida(&self, mu: f64) -> Result<YosidaOperator> {
        YosidaOperator::new(mu, self.clone())
    }
}

/// `e^{tA}` for a fixed time, ready to be applied many times.
#[derive(Clone, Debug)]
pub enum Propagator {
    Diagonal(Vec<f64>),
    /// Per pair: `(e^{at} cos bt, e^{at} sin bt)`.
    Rotation(Vec<(f64, f64)>),
}

impl Propagator {
    pub fn apply_in_place(&self, x: &mut [f64]) {
        match self {
            Propagator::Diagonal(f) => {
                for (c, k) in x.iter_mut().zip(f) {
                    *c *= k;
                }
            }
            Propagator::Rotation(blocks) => {
                let n = blocks.len();
                for (i, &(c, s)) in blocks.iter().enumerate() {
                    let (y, z) = (x[i], x[n + i]);
                    x[i] = c * y + s * z;
                    x[n + i] = -s * y + c * z;
                }
            }
        }
    }
}

/// Yosida approximation `A_μ = μA(μI − A)^{-1}` of a spectral generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YosidaOperator {
    mu: f64,
    base: SpectralOperator,
}

impl YosidaOperator {
    pub fn new(mu: f64, base: SpectralOperator) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::Domain(format!("Yosida parameter must be > 0, got {mu}")));
        }
        Ok(Self { mu, base })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn base(&self) -> &SpectralOperator {
        &self.base
    }

    /// The bounded generator `A_μ` in the same block form as the base.
    pub fn induced(&self) -> SpectralOperator {
        let mu = self.mu;
        let kind = match &self.base.kind {
            OperatorKind::Diagonal { eigenvalues } => OperatorKind::Diagonal {
                eigenvalues: eigenvalues.iter().map(|l| mu * l / (mu - l)).collect(),
            },
            OperatorKind::Oscillator { decay, frequency } => {
                // eigenvalue a ± ib mapped through λ ↦ μλ/(μ−λ)
                let (mut re, mut im) = (Vec::new(), Vec::new());
                for (&a, &b) in decay.iter().zip(frequency) {
                    let d = (mu - a).powi(2) + b * b;
                    re.push(mu * (a * (mu - a) - b * b) / d);
                    im.push(mu * mu * b / d);
                }
                OperatorKind::Oscillator {
                    decay: re,
                    frequency: im,
                }
            }
        };
        SpectralOperator { kind }
    }

    /// `e^{t A_μ} x`.
    pub fn semigroup_apply(&self, t: f64, x: &StateVec) -> Result<StateVec> {
        self.induced().semigroup_apply(t, x)
    }
}

/// Free-function form of [`SpectralOperator::semigroup_apply`].
pub fn semigroup_apply(op: &SpectralOperator, t: f64, x: &StateVec) -> Result<StateVec> {
    op.semigroup_apply(t, x)
}

/// Free-function form of [`YosidaOperator::semigroup_apply`].
pub fn yosida_semigroup_apply(y: &YosidaOperator, t: f64, x: &StateVec) -> Result<StateVec> {
    y.semigroup_apply(t, x)
}

/// Free-function form of [`SpectralOperator::adjoint_pair`].
pub fn adjoint_pair(op: &SpectralOperator, x: &StateVec, y: &StateVec) -> Result<f64> {
    op.adjoint_pair(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sv(v: &[f64]) -> StateVec {
        StateVec::new(v.to_vec()).unwrap()
    }

    #[test]
    fn semigroup_identity_at_zero() {
        let op = SpectralOperator::dirichlet_laplacian(4).unwrap();
        let x = sv(&[1.0, -2.0, 0.5, 3.0]);
        assert_eq!(op.semigroup_apply(0.0, &x).unwrap(), x);
    }

    #[test]
    fn scalar_heat_mode() {
        let op = SpectralOperator::diagonal(vec![-PI * PI]).unwrap();
        let y = op.semigroup_apply(0.1, &sv(&[1.0])).unwrap();
        assert_relative_eq!(y[0], (-0.1 * PI * PI).exp(), max_relative = 1e-15);
        assert!((y[0] - 0.372708).abs() < 1e-6);
    }

    #[test]
    fn two_mode_matches_ode_oracle() {
        // x_i' = λ_i x_i integrated by RK4 at a fine step.
        let lam = [-1.0, -4.0];
        let op = SpectralOperator::diagonal(lam.to_vec()).unwrap();
        let y = op.semigroup_apply(0.5, &sv(&[2.0, 3.0])).unwrap();
        for (i, x0) in [2.0f64, 3.0].iter().enumerate() {
            let (mut x, h) = (*x0, 1e-4);
            for _ in 0..5000 {
                let f = |v: f64| lam[i] * v;
                let k1 = f(x);
                let k2 = f(x + 0.5 * h * k1);
                let k3 = f(x + 0.5 * h * k2);
                let k4 = f(x + h * k3);
                x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            assert_relative_eq!(y[i], x, max_relative = 1e-12);
        }
        assert_relative_eq!(y[0], 2.0 * (-0.5f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(y[1], 3.0 * (-2.0f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn semigroup_errors() {
        let op = SpectralOperator::diagonal(vec![-1.0, -2.0]).unwrap();
        assert!(matches!(
            op.semigroup_apply(-0.1, &sv(&[1.0, 1.0])),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            op.semigroup_apply(0.1, &sv(&[1.0])),
            Err(Error::Shape { .. })
        ));
        assert!(SpectralOperator::diagonal(vec![0.5]).is_err());
        assert!(SpectralOperator::diagonal(vec![-2.0, -1.0]).is_err());
    }

    #[test]
    fn projections() {
        let x = sv(&[1.0, 2.0, 3.0]);
        let (h, t) = project(&x, 3).unwrap();
        assert_eq!(h.as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(t.dim(), 0);
        let (h, t) = project(&x, 1).unwrap();
        assert_eq!(h.as_slice(), &[1.0]);
        assert_eq!(t.as_slice(), &[2.0, 3.0]);
        let (h, t) = project(&sv(&[3.0, 4.0]), 1).unwrap();
        assert_eq!(h.norm_sq() + t.norm_sq(), 25.0);
        assert!(project(&x, 0).is_err());
        assert!(project(&x, 4).is_err());
    }

    #[test]
    fn yosida_scalar_values() {
        let op = SpectralOperator::diagonal(vec![-1.0]).unwrap();
        let y = op.yosida(10.0).unwrap();
        let v = y.semigroup_apply(1.0, &sv(&[1.0])).unwrap();
        assert_relative_eq!(v[0], (-10.0f64 / 11.0).exp(), max_relative = 1e-15);
        let x = sv(&[0.3]);
        assert_eq!(y.semigroup_apply(0.0, &x).unwrap(), x);
        assert!(matches!(op.yosida(0.0), Err(Error::Domain(_))));
        assert!(op.yosida(-1.0).is_err());
    }

    #[test]
    fn yosida_ladder_approaches_semigroup_monotonically() {
        let op = SpectralOperator::diagonal(vec![-4.0]).unwrap();
        let target = (-4.0f64).exp();
        let mut prev = f64::INFINITY;
        for mu in [10.0, 100.0, 1000.0] {
            let v = op.yosida(mu).unwrap().semigroup_apply(1.0, &sv(&[1.0])).unwrap()[0];
            let scalar = (mu * -4.0 / (mu + 4.0)).exp();
            assert_relative_eq!(v, scalar, max_relative = 1e-15);
            let err = (v - target).abs();
            assert!(err < prev);
            prev = err;
        }
    }

    #[test]
    fn adjoint_pairs() {
        let op = SpectralOperator::diagonal(vec![-1.0, -2.0]).unwrap();
        let ones = sv(&[1.0, 1.0]);
        assert_eq!(op.adjoint_pair(&ones, &ones).unwrap(), -3.0);
        assert_eq!(op.adjoint_pair(&StateVec::zeros(2), &ones).unwrap(), 0.0);
        let op = SpectralOperator::diagonal(vec![-PI * PI]).unwrap();
        assert_relative_eq!(
            op.adjoint_pair(&sv(&[2.0]), &sv(&[3.0])).unwrap(),
            -6.0 * PI * PI
        );
        assert!(op.adjoint_pair(&ones, &sv(&[1.0])).is_err());
    }

    #[test]
    fn wave_mode_has_period_two() {
        let op = SpectralOperator::wave(vec![PI]).unwrap();
        let x = sv(&[1.0, 0.0]);
        let y = op.semigroup_apply(2.0, &x).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-14 && y[1].abs() < 1e-14);
        let half = op.semigroup_apply(1.0, &x).unwrap();
        assert!((half[0] + 1.0).abs() < 1e-14);
        // skew-symmetric generator
        assert!(op.adjoint_pair(&x, &x).unwrap().abs() < 1e-15);
    }

    #[test]
    fn wave_yosida_is_dissipative() {
        let op = SpectralOperator::wave(vec![PI, 2.0 * PI]).unwrap();
        let ind = op.yosida(50.0).unwrap().induced();
        let x = sv(&[1.0, -0.5, 0.3, 2.0]);
        assert!(ind.adjoint_pair(&x, &x).unwrap() <= 0.0);
        let y = ind.semigroup_apply(0.7, &x).unwrap();
        assert!(y.norm() <= x.norm());
    }

    fn ladder() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..8).prop_flat_map(|n| {
            (
                prop::collection::vec(-50.0f64..0.0, n),
                prop::collection::vec(-10.0f64..10.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn contraction_and_semigroup_law((mut lam, x) in ladder(), t in 0.0f64..2.0, s in 0.0f64..2.0) {
            lam.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let op = SpectralOperator::diagonal(lam).unwrap();
            let x = StateVec::new(x).unwrap();
            let xt = op.semigroup_apply(t, &x).unwrap();
            prop_assert!(xt.norm() <= x.norm());
            let two = op.semigroup_apply(s, &xt).unwrap();
            let one = op.semigroup_apply(s + t, &x).unwrap();
            prop_assert!(two.sub(&one).norm() <= 1e-12 * (1.0 + one.norm()));
            prop_assert!(op.adjoint_pair(&x, &x).unwrap() <= 0.0);
        }
    }
}
