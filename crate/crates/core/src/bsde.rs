//! Least-squares Monte Carlo solver for the cost pair `(Y, Z)` on a forward
//! ensemble, and the backward semigroup built on it.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::io::fmt_f64;
use crate::problem::ControlProblem;
use crate::regression::{Regression, RegressionBasis};
use crate::simulate::{mean_and_se, PathBundle};
use crate::spectral::StateVec;

const MAX_FIXED_POINT_ITERS: usize = 20;

/// Terminal data of a backward sweep.
#[derive(Clone, Debug)]
pub enum Terminal {
    /// `φ(X_end)`
    Phi,
    /// Per-path values injected at the end step.
    Values(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalKind {
    TerminalPhi,
    InjectedZeta,
}

/// `(Y, Z)` on the steps `start_step..=end_step` of a bundle.
#[derive(Clone, Debug)]
pub struct BsdePair {
    pub times: Vec<f64>,
    pub start_step: usize,
    pub end_step: usize,
    pub n_paths: usize,
    pub noise_dim: usize,
    pub terminal_kind: TerminalKind,
    // [step - start_step][path]
    y: Vec<f64>,
    // [step - start_step][path][j]; the end step carries zeros
    z: Vec<f64>,
    realized: Vec<f64>,
}

impl BsdePair {
    pub fn y(&self, step: usize, path: usize) -> f64 {
        self.y[(step - self.start_step) * self.n_paths + path]
    }

    pub fn z(&self, step: usize, path: usize) -> &[f64] {
        let i = ((step - self.start_step) * self.n_paths + path) * self.noise_dim;
        &self.z[i..i + self.noise_dim]
    }

    pub fn y_at(&self, step: usize) -> Vec<f64> {
        let i = (step - self.start_step) * self.n_paths;
        self.y[i..i + self.n_paths].to_vec()
    }

    /// Ensemble mean of `Y` at the start step.
    pub fn y0(&self) -> f64 {
        let v = self.y_at(self.start_step);
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Standard error of the pathwise realized payoff `ζ + Σ q Δ`.
    pub fn stderr(&self) -> f64 {
        mean_and_se(&self.realized).1
    }

    /// Pathwise realized payoffs `ζ + Σ_k q(t_k, X_k, Y_k, Z_k, u_k) Δ`.
    pub fn realized(&self) -> &[f64] {
        &self.realized
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["step".to_string(), "path".into(), "t".into(), "y".into()];
        header.extend((0..self.noise_dim).map(|j| format!("z_{j}")));
        w.write_record(&header)?;
        for path in 0..self.n_paths {
            for step in self.start_step..=self.end_step {
                let mut row = vec![
                    step.to_string(),
                    path.to_string(),
                    fmt_f64(self.times[step - self.start_step]),
                    fmt_f64(self.y(step, path)),
                ];
                row.extend(self.z(step, path).iter().map(|v| fmt_f64(*v)));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Solves on the full bundle span.
pub fn solve_bsde(bundle: &PathBundle, prob: &ControlProblem, basis: &RegressionBasis, terminal: Terminal) -> Result<BsdePair> {
    solve_bsde_range(bundle, prob, basis, 0, bundle.n_steps, terminal)
}

/// Backward sweep `Y_k = Ê[Y_{k+1}|X_k] + q(t_k,X_k,Y_k,Z_k,u_k)Δ`,
/// `Z_k = Ê[(Y_{k+1} − Ê[Y_{k+1}|X_k]) ΔW_k | X_k]/Δ` from `end_step` down to `start_step`.
pub fn solve_bsde_range(
    bundle: &PathBundle,
    prob: &ControlProblem,
    basis: &RegressionBasis,
    start_step: usize,
    end_step: usize,
    terminal: Terminal,
) -> Result<BsdePair> {
    check_dim(prob.dim(), bundle.dim)?;
    check_dim(prob.noise_dim, bundle.noise_dim)?;
    if start_step > end_step || end_step > bundle.n_steps {
        return Err(Error::Argument(format!(
            "step range {start_step}..={end_step} outside 0..={}",
            bundle.n_steps
        )));
    }
    if basis.n_coeffs > bundle.dim {
        return Err(Error::config(
            "bsde.basis.n_coeffs",
            format!("basis uses {} coefficients of a {}-dim state", basis.n_coeffs, bundle.dim),
        ));
    }
    basis.check(bundle.n_paths)?;
    let dt = bundle.dt;
    if prob.lip_const * dt >= 1.0 {
        return Err(Error::config(
            "sim.n_steps",
            format!("L·Δ = {} ≥ 1 breaks the implicit step contraction", prob.lip_const * dt),
        ));
    }
    let np = bundle.n_paths;
    let m = bundle.noise_dim;
    let (terminal_values, terminal_kind) = match terminal {
        Terminal::Phi => (
            (0..np).map(|p| prob.phi(&bundle.state_vec(end_step, p))).collect::<Vec<_>>(),
            TerminalKind::TerminalPhi,
        ),
        Terminal::Values(v) => {
            check_dim(np, v.len())?;
            (v, TerminalKind::InjectedZeta)
        }
    };
    if let Some(p) = terminal_values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            step: end_step,
            path: p,
            msg: "non-finite terminal value".into(),
        });
    }

    let span = end_step - start_step;
    let mut y = vec![0.0; (span + 1) * np];
    let mut z = vec![0.0; (span + 1) * np * m];
    let mut running = vec![0.0; np];
    y[span * np..].copy_from_slice(&terminal_values);

    for step in (start_step..end_step).rev() {
        let rel = step - start_step;
        let t = bundle.time(step);
        let rows: Vec<&[f64]> = (0..np).map(|p| bundle.state(step, p)).collect();
        let reg = Regression::new(basis, &rows)?;
        let next = &y[(rel + 1) * np..(rel + 2) * np];
        let ey = reg.project(next);
        let mut targets = DMatrix::zeros(np, m);
        for p in 0..np {
            let resid = next[p] - ey[p];
            let w = bundle.dw(step, p);
            for j in 0..m {
                targets[(p, j)] = resid * w[j] / dt;
            }
        }
        let zfit = reg.project_many(&targets);
        for p in 0..np {
            let x = StateVec::from_vec(rows[p].to_vec());
            let u = bundle.control(step, p);
            let zp: Vec<f64> = (0..m).map(|j| zfit[(p, j)]).collect();
            let mut yk = ey[p];
            let mut q = 0.0;
            for _ in 0..MAX_FIXED_POINT_ITERS {
                q = prob.q(t, &x, yk, &zp, u);
                let updated = ey[p] + q * dt;
                let done = (updated - yk).abs() <= 1e-14 * (1.0 + yk.abs());
                yk = updated;
                if done {
                    break;
                }
            }
            if !yk.is_finite() {
                return Err(Error::Numeric {
                    step,
                    path: p,
                    msg: "non-finite Y".into(),
                });
            }
            y[rel * np + p] = yk;
            z[(rel * np + p) * m..(rel * np + p + 1) * m].copy_from_slice(&zp);
            running[p] += q * dt;
        }
    }

    let realized = terminal_values.iter().zip(&running).map(|(a, b)| a + b).collect();
    Ok(BsdePair {
        times: (start_step..=end_step).map(|k| bundle.time(k)).collect(),
        start_step,
        end_step,
        n_paths: np,
        noise_dim: m,
        terminal_kind,
        y,
        z,
        realized,
    })
}

/// `G_{s, end}[ζ]`: the backward sweep on `s_step..=end_step` with injected
/// terminal values, read off at `s_step`.
pub fn backward_semigroup(
    bundle: &PathBundle,
    prob: &ControlProblem,
    basis: &RegressionBasis,
    zeta: &[f64],
    s_step: usize,
    end_step: usize,
) -> Result<Vec<f64>> {
    let pair = solve_bsde_range(bundle, prob, basis, s_step, end_step, Terminal::Values(zeta.to_vec()))?;
    Ok(pair.y_at(s_step))
}
