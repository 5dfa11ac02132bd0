//! Trace-class covariance of the driving noise on the sine basis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QWienerSpec {
    pub q_eigenvalues: Vec<f64>,
}

impl QWienerSpec {
    pub fn new(q_eigenvalues: Vec<f64>) -> Result<Self> {
        if q_eigenvalues.is_empty() {
            return Err(Error::Argument("Q needs at least one eigenvalue".into()));
        }
        if let Some(q) = q_eigenvalues.iter().find(|q| !(q.is_finite() && **q >= 0.0)) {
            return Err(Error::Argument(format!("Q eigenvalues must be finite and non-negative, got {q}")));
        }
        Ok(Self { q_eigenvalues })
    }

    /// `q_i = i^{−exponent}`, i = 1..=dim; trace class requires `exponent > 1`.
    pub fn power_law(dim: usize, exponent: f64) -> Result<Self> {
        if exponent <= 1.0 {
            return Err(Error::Argument(format!(
                "q_i = i^-{exponent} is not summable; need exponent > 1"
            )));
        }
        Self::new((1..=dim).map(|i| (i as f64).powf(-exponent)).collect())
    }

    pub fn dim(&self) -> usize {
        self.q_eigenvalues.len()
    }

    pub fn trace(&self) -> f64 {
        self.q_eigenvalues.iter().sum()
    }

    pub fn sqrt(&self) -> Vec<f64> {
        self.q_eigenvalues.iter().map(|q| q.sqrt()).collect()
    }
}

/// `Σ_{i>n} i^{−p}` bounded by the integral `n^{1−p}/(p−1)`.
pub fn power_law_tail_bound(n: usize, exponent: f64) -> f64 {
    (n as f64).powf(1.0 - exponent) / (exponent - 1.0)
}
