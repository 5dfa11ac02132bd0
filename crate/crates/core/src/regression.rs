//! Least-squares regression on polynomial features of the leading state
//! coefficients, used for the conditional expectations of the BSDE sweep.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Polynomials of total degree `≤ degree` in the first `n_coeffs` coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressionBasis {
    pub degree: u32,
    pub n_coeffs: usize,
}

impl RegressionBasis {
    pub fn polynomial(degree: u32, n_coeffs: usize) -> Self {
        Self { degree, n_coeffs }
    }

    /// Degree 2 on the first `min(dim, 4)` coefficients.
    pub fn default_for(dim: usize) -> Self {
        Self::polynomial(2, dim.min(4))
    }

    /// Number of monomials, `C(m + d, d)`.
    pub fn size(&self) -> usize {
        let (m, d) = (self.n_coeffs, self.degree as usize);
        (1..=d).fold(1usize, |acc, i| acc * (m + i) / i)
    }

    /// Basis size must stay below a tenth of the ensemble.
    pub fn check(&self, n_paths: usize) -> Result<()> {
        if self.size() * 10 > n_paths {
            return Err(Error::config(
                "bsde.basis",
                format!(
                    "basis of {} terms needs at least {} paths, got {n_paths}",
                    self.size(),
                    self.size() * 10
                ),
            ));
        }
        Ok(())
    }
}

fn exponents(n_vars: usize, degree: u32) -> Vec<Vec<u32>> {
    fn rec(var: usize, n_vars: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if var == n_vars {
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur.push(e);
            rec(var + 1, n_vars, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n_vars, degree, &mut Vec::new(), &mut out);
    out.sort_by_key(|e| (e.iter().sum::<u32>(), std::cmp::Reverse(e.clone())));
    out
}

/// Standardization plus monomial exponents; coordinates that are constant
/// over the sample are dropped so that degenerate ensembles reduce to lower
/// order fits (a single point reduces to the sample mean).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    active: Vec<usize>,
    means: Vec<f64>,
    scales: Vec<f64>,
    exponents: Vec<Vec<u32>>,
}

impl FeatureMap {
    pub fn fit(basis: &RegressionBasis, rows: &[&[f64]]) -> Result<Self> {
        let m = basis.n_coeffs;
        if rows.is_empty() {
            return Err(Error::Argument("regression needs at least one sample".into()));
        }
        if rows[0].len() < m {
            return Err(Error::shape(m, rows[0].len()));
        }
        let n = rows.len() as f64;
        let mut active = Vec::new();
        let mut means = Vec::new();
        let mut scales = Vec::new();
        for i in 0..m {
            let mean = rows.iter().map(|r| r[i]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 1e-12 * (1.0 + mean.abs()) {
                active.push(i);
                means.push(mean);
                scales.push(sd);
            }
        }
        let exponents = exponents(active.len(), basis.degree);
        Ok(Self {
            active,
            means,
            scales,
            exponents,
        })
    }

    pub fn n_terms(&self) -> usize {
        self.exponents.len()
    }

    pub fn features_into(&self, x: &[f64], out: &mut [f64]) {
        let z: Vec<f64> = self
            .active
            .iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(&i, (m, s))| (x[i] - m) / s)
            .collect();
        for (o, e) in out.iter_mut().zip(&self.exponents) {
            *o = e.iter().zip(&z).map(|(&k, v)| v.powi(k as i32)).product();
        }
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_terms()];
        self.features_into(x, &mut out);
        out
    }
}

/// A factored regression problem on a fixed sample of states.
pub struct Regression {
    map: FeatureMap,
    design: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    pub ridge: f64,
}

impl Regression {
    pub fn new(basis: &RegressionBasis, rows: &[&[f64]]) -> Result<Self> {
        Self::with_ridge(basis, rows, DEFAULT_RIDGE)
    }

    pub fn with_ridge(basis: &RegressionBasis, rows: &[&[f64]], ridge: f64) -> Result<Self> {
        let map = FeatureMap::fit(basis, rows)?;
        let p = map.n_terms();
        let n = rows.len();
        let mut design = DMatrix::zeros(n, p);
        let mut buf = vec![0.0; p];
        for (r, x) in rows.iter().enumerate() {
            map.features_into(x, &mut buf);
            for (c, v) in buf.iter().enumerate() {
                design[(r, c)] = *v;
            }
        }
        let gram = design.tr_mul(&design);
        let mut lambda = ridge;
        for attempt in 0..8 {
            let mut a = gram.clone();
            // the intercept stays unpenalized so constants are reproduced exactly
            for i in 1..p {
                a[(i, i)] += lambda * n as f64;
            }
            if let Some(chol) = a.cholesky() {
                if attempt > 0 {
                    log::warn!("regression normal equations were singular; ridge raised to {lambda:e}");
                }
                return Ok(Self {
                    map,
                    design,
                    chol,
                    ridge: lambda,
                });
            }
            lambda = if lambda > 0.0 { lambda * 100.0 } else { DEFAULT_RIDGE };
        }
        Err(Error::Numeric {
            step: 0,
            path: 0,
            msg: "regression normal equations are singular even with ridge".into(),
        })
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.map
    }

    /// Coefficients for each column of `ys` (`n × k`).
    pub fn fit_many(&self, ys: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(&self.design.tr_mul(ys))
    }

    /// Fitted values at the sample points for each column of `ys`.
    pub fn project_many(&self, ys: &DMatrix<f64>) -> DMatrix<f64> {
        &self.design * self.fit_many(ys)
    }

    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        let ys = DMatrix::from_column_slice(y.len(), 1, y);
        self.project_many(&ys).as_slice().to_vec()
    }

    pub fn fit(&self, y: &[f64]) -> FittedFunction {
        let ys = DMatrix::from_column_slice(y.len(), 1, y);
        FittedFunction {
            map: self.map.clone(),
            coefficients: self.fit_many(&ys).as_slice().to_vec(),
        }
    }
}

/// A regression fit evaluated at arbitrary states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedFunction {
    map: FeatureMap,
    coefficients: Vec<f64>,
}

impl FittedFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.map
            .features(x)
            .iter()
            .zip(&self.coefficients)
            .map(|(f, c)| f * c)
            .sum()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }
}
