//! Exponential-Euler simulation of the controlled evolution equation
//!
//! `X_{k+1} = e^{ΔA}(X_k + b(t_k,X_k,u_k)Δ + σ(t_k,X_k,u_k)ΔW_k)`
//!
//! plus the moment, Itô-inequality and coupling harnesses that run on the
//! resulting ensembles.

use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gauge::GaugeParams;
use crate::io::fmt_f64;
use crate::problem::{ControlProblem, Policy};
use crate::rng;
use crate::spectral::{SpectralOperator, StateVec, YosidaOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Steps between the start time and the horizon.
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_steps: 256,
            n_paths: 4096,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn new(n_steps: usize, n_paths: usize, seed: u64) -> Self {
        Self { n_steps, n_paths, seed }
    }
}

/// Ensemble of simulated paths on a uniform grid together with the Brownian
/// increments and the control indices used.
#[derive(Clone, Debug)]
pub struct PathBundle {
    pub op: SpectralOperator,
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub dim: usize,
    pub noise_dim: usize,
    pub seed: u64,
    pub x0: StateVec,
    pub control_grid: Vec<f64>,
    // path-major: [path][step][coeff]
    states: Vec<f64>,
    dw: Vec<f64>,
    controls: Vec<usize>,
}

/// JSON sidecar written next to the bundle CSVs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleMeta {
    pub problem: String,
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub dim: usize,
    pub noise_dim: usize,
    pub seed: u64,
    pub x0: StateVec,
    pub control_grid: Vec<f64>,
    pub operator: SpectralOperator,
}

impl PathBundle {
    pub fn time(&self, step: usize) -> f64 {
        if step == self.n_steps {
            self.t_end
        } else {
            self.t0 + step as f64 * self.dt
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }

    pub fn state(&self, step: usize, path: usize) -> &[f64] {
        let i = (path * (self.n_steps + 1) + step) * self.dim;
        &self.states[i..i + self.dim]
    }

    pub fn state_vec(&self, step: usize, path: usize) -> StateVec {
        StateVec::from_vec(self.state(step, path).to_vec())
    }

    /// Increment `ΔW_k` driving the move from step `k` to `k+1`.
    pub fn dw(&self, step: usize, path: usize) -> &[f64] {
        let i = (path * self.n_steps + step) * self.noise_dim;
        &self.dw[i..i + self.noise_dim]
    }

    pub fn control_index(&self, step: usize, path: usize) -> usize {
        self.controls[path * self.n_steps + step]
    }

    pub fn control(&self, step: usize, path: usize) -> f64 {
        self.control_grid[self.control_index(step, path)]
    }

    pub fn terminal_states(&self) -> Vec<StateVec> {
        (0..self.n_paths).map(|p| self.state_vec(self.n_steps, p)).collect()
    }

    pub fn meta(&self, problem: &str) -> BundleMeta {
        BundleMeta {
            problem: problem.to_string(),
            t0: self.t0,
            t_end: self.t_end,
            dt: self.dt,
            n_steps: self.n_steps,
            n_paths: self.n_paths,
            dim: self.dim,
            noise_dim: self.noise_dim,
            seed: self.seed,
            x0: self.x0.clone(),
            control_grid: self.control_grid.clone(),
            operator: self.op.clone(),
        }
    }

    /// Writes `<stem>_paths.csv`, `<stem>_dw.csv` and `<stem>.json`; returns the file names.
    pub fn write(&self, dir: &Path, stem: &str, problem: &str) -> Result<Vec<String>> {
        let paths_name = format!("{stem}_paths.csv");
        let dw_name = format!("{stem}_dw.csv");
        let meta_name = format!("{stem}.json");

        let mut w = csv::Writer::from_path(dir.join(&paths_name))?;
        let mut header = vec!["step".to_string(), "path".into(), "t".into(), "u".into()];
        header.extend((0..self.dim).map(|i| format!("x_{i}")));
        w.write_record(&header)?;
        for path in 0..self.n_paths {
            for step in 0..=self.n_steps {
                let u = if step < self.n_steps {
                    fmt_f64(self.control(step, path))
                } else {
                    String::new()
                };
                let mut row = vec![step.to_string(), path.to_string(), fmt_f64(self.time(step)), u];
                row.extend(self.state(step, path).iter().map(|v| fmt_f64(*v)));
                w.write_record(&row)?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join(&dw_name))?;
        let mut header = vec!["step".to_string(), "path".into()];
        header.extend((0..self.noise_dim).map(|j| format!("dw_{j}")));
        w.write_record(&header)?;
        for path in 0..self.n_paths {
            for step in 0..self.n_steps {
                let mut row = vec![step.to_string(), path.to_string()];
                row.extend(self.dw(step, path).iter().map(|v| fmt_f64(*v)));
                w.write_record(&row)?;
            }
        }
        w.flush()?;

        crate::io::write_json(&dir.join(&meta_name), &self.meta(problem))?;
        Ok(vec![paths_name, dw_name, meta_name])
    }
}

/// Simulates `n_paths` mild-solution paths from `(t0, x0)` to the horizon.
pub fn simulate_see(
    prob: &ControlProblem,
    t0: f64,
    x0: &StateVec,
    policy: &dyn Policy,
    cfg: &SimConfig,
) -> Result<PathBundle> {
    simulate_with_operator(prob, &prob.op, t0, x0, policy, cfg)
}

/// As [`simulate_see`] with `e^{ΔA_μ}` in place of `e^{ΔA}`; the same seed
/// reproduces the same Brownian increments.
pub fn simulate_yosida(
    prob: &ControlProblem,
    mu: f64,
    t0: f64,
    x0: &StateVec,
    policy: &dyn Policy,
    cfg: &SimConfig,
) -> Result<PathBundle> {
    let op = YosidaOperator::new(mu, prob.op.clone())?.induced();
    simulate_with_operator(prob, &op, t0, x0, policy, cfg)
}

fn simulate_with_operator(
    prob: &ControlProblem,
    op: &SpectralOperator,
    t0: f64,
    x0: &StateVec,
    policy: &dyn Policy,
    cfg: &SimConfig,
) -> Result<PathBundle> {
    let t_end = prob.horizon;
    if !(t0 >= 0.0 && t0 < t_end) {
        return Err(Error::Domain(format!("start time {t0} outside [0, {t_end})")));
    }
    check_dim(op.dim(), x0.dim())?;
    if cfg.n_steps == 0 || cfg.n_paths == 0 {
        return Err(Error::Argument("n_steps and n_paths must be at least 1".into()));
    }
    let (n, m, k) = (op.dim(), prob.noise_dim, cfg.n_steps);
    let dt = (t_end - t0) / k as f64;
    let sqrt_dt = dt.sqrt();
    let prop = op.propagator(dt)?;

    let mut states = vec![0.0; cfg.n_paths * (k + 1) * n];
    let mut dw = vec![0.0; cfg.n_paths * k * m];
    let mut controls = vec![0usize; cfg.n_paths * k];

    let outcomes: Vec<Result<()>> = states
        .par_chunks_mut((k + 1) * n)
        .zip(dw.par_chunks_mut(k * m))
        .zip(controls.par_chunks_mut(k))
        .enumerate()
        .map(|(path, ((xs, ws), us))| {
            let mut rng = rng::stream(cfg.seed, path as u64);
            xs[..n].copy_from_slice(x0.as_slice());
            let mut x = x0.clone();
            for step in 0..k {
                let t = t0 + step as f64 * dt;
                let ui = policy.control_index(step, t, &x);
                let u = *prob.controls.get(ui).ok_or_else(|| {
                    Error::Argument(format!("policy returned control index {ui} outside the grid"))
                })?;
                us[step] = ui;
                let w = &mut ws[step * m..(step + 1) * m];
                for wj in w.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *wj = z * sqrt_dt;
                }
                let b = prob.dynamics.drift(t, &x, u);
                let s = prob.dynamics.diffusion_apply(t, &x, u, w);
                if b.dim() != n || s.dim() != n {
                    return Err(Error::shape(n, if b.dim() != n { b.dim() } else { s.dim() }));
                }
                if !b.is_finite() || !s.is_finite() {
                    return Err(Error::Numeric {
                        step,
                        path,
                        msg: "non-finite drift or diffusion".into(),
                    });
                }
                let xv = x.as_mut_slice();
                for i in 0..n {
                    xv[i] += b[i] * dt + s[i];
                }
                prop.apply_in_place(xv);
                if !x.is_finite() {
                    return Err(Error::Numeric {
                        step,
                        path,
                        msg: "state left the finite range".into(),
                    });
                }
                xs[(step + 1) * n..(step + 2) * n].copy_from_slice(x.as_slice());
            }
            Ok(())
        })
        .collect();
    for o in outcomes {
        o?;
    }

    Ok(PathBundle {
        op: op.clone(),
        t0,
        t_end,
        dt,
        n_steps: k,
        n_paths: cfg.n_paths,
        dim: n,
        noise_dim: m,
        seed: cfg.seed,
        x0: x0.clone(),
        control_grid: prob.controls.clone(),
        states,
        dw,
        controls,
    })
}

/// Pooled per-coordinate statistics of the Brownian increments.
#[derive(Clone, Debug, Serialize)]
pub struct IncrementReport {
    pub max_abs_mean: f64,
    pub mean_bound: f64,
    pub max_rel_var_error: f64,
    pub var_bound: f64,
    pub passed: bool,
}

/// Pooled mean and variance of `ΔW` against `0` and `Δ`, each within five
/// standard errors of the pooled sample.
pub fn check_increments(bundle: &PathBundle) -> IncrementReport {
    let m = bundle.noise_dim;
    let count = (bundle.n_paths * bundle.n_steps) as f64;
    let mut sum = vec![0.0; m];
    let mut sum_sq = vec![0.0; m];
    for chunk in bundle.dw.chunks(m) {
        for j in 0..m {
            sum[j] += chunk[j];
            sum_sq[j] += chunk[j] * chunk[j];
        }
    }
    let mean_bound = 5.0 * (bundle.dt / count).sqrt();
    let var_bound = 5.0 * (2.0 / count).sqrt();
    let mut max_abs_mean = 0.0f64;
    let mut max_rel_var_error = 0.0f64;
    for j in 0..m {
        let mean = sum[j] / count;
        let var = sum_sq[j] / count - mean * mean;
        max_abs_mean = max_abs_mean.max(mean.abs());
        max_rel_var_error = max_rel_var_error.max((var / bundle.dt - 1.0).abs());
    }
    IncrementReport {
        max_abs_mean,
        mean_bound,
        max_rel_var_error,
        var_bound,
        passed: max_abs_mean <= mean_bound && max_rel_var_error <= var_bound,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentReport {
    pub p: u32,
    /// `sup_s Ê|X_s|^p` over the grid.
    pub sup_moment: f64,
    /// `sup_moment / (1 + |x0|^p)`
    pub constant: f64,
    pub horizons: Vec<f64>,
    /// `Ê[sup_{l≤s}|X_l − e^{(l−t)A}x0|^p]` on each horizon.
    pub increments: Vec<f64>,
    /// Log-log slope; `None` when every increment vanishes.
    pub exponent: Option<f64>,
}

/// Options of the moment-scaling ladder.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MomentOptions {
    /// Points used for every discrete supremum, so all rungs share the same
    /// sampling bias.
    pub sup_points: usize,
    /// Largest horizon as a fraction of the simulated span.
    pub max_fraction: f64,
}

impl Default for MomentOptions {
    fn default() -> Self {
        Self {
            sup_points: 8,
            max_fraction: 1.0 / 64.0,
        }
    }
}

pub fn check_moment_bounds(bundle: &PathBundle, p: u32, x0: &StateVec) -> Result<MomentReport> {
    check_moment_bounds_with(bundle, p, x0, &MomentOptions::default())
}

pub fn check_moment_bounds_with(
    bundle: &PathBundle,
    p: u32,
    x0: &StateVec,
    opts: &MomentOptions,
) -> Result<MomentReport> {
    if !matches!(p, 2 | 4 | 8) {
        return Err(Error::Argument(format!("moment order must be 2, 4 or 8, got {p}")));
    }
    if bundle.n_paths == 0 || bundle.n_steps == 0 {
        return Err(Error::Argument("empty path bundle".into()));
    }
    check_dim(bundle.dim, x0.dim())?;
    let half = (p / 2) as i32;
    let np = bundle.n_paths as f64;

    let mut sup_moment = 0.0f64;
    for step in 0..=bundle.n_steps {
        let m: f64 = (0..bundle.n_paths)
            .map(|path| crate::spectral::dot(bundle.state(step, path), bundle.state(step, path)).powi(half))
            .sum::<f64>()
            / np;
        sup_moment = sup_moment.max(m);
    }
    let constant = sup_moment / (1.0 + x0.norm_sq().powi(half));

    let sp = opts.sup_points.max(1);
    let max_steps = (bundle.n_steps as f64 * opts.max_fraction).floor() as usize;
    let mut rungs = Vec::new();
    let mut s = sp;
    while s <= max_steps {
        rungs.push(s);
        s *= 2;
    }
    if rungs.len() < 2 {
        return Err(Error::Argument(format!(
            "need at least two horizons; {} steps with {} sup points and fraction {}",
            bundle.n_steps, sp, opts.max_fraction
        )));
    }
    let orbit: Vec<StateVec> = (0..=rungs[rungs.len() - 1])
        .map(|l| bundle.op.semigroup_apply(bundle.time(l) - bundle.t0, x0))
        .collect::<Result<_>>()?;

    let mut horizons = Vec::new();
    let mut increments = Vec::new();
    for &steps in &rungs {
        let stride = steps / sp;
        let e = (0..bundle.n_paths)
            .map(|path| {
                (1..=sp)
                    .map(|i| {
                        let l = i * stride;
                        let d = bundle.state(l, path);
                        d.iter()
                            .zip(orbit[l].as_slice())
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .powi(half)
                    })
                    .fold(0.0f64, f64::max)
            })
            .sum::<f64>()
            / np;
        horizons.push(bundle.time(steps) - bundle.t0);
        increments.push(e);
    }
    let exponent = if increments.iter().all(|&e| e > 0.0) {
        let xs: Vec<f64> = horizons.iter().map(|h| h.ln()).collect();
        let ys: Vec<f64> = increments.iter().map(|e| e.ln()).collect();
        Some(ols_slope(&xs, &ys))
    } else {
        None
    };
    Ok(MomentReport {
        p,
        sup_moment,
        constant,
        horizons,
        increments,
        exponent,
    })
}

pub(crate) fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub(crate) fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per grid time comparison of `Ê|X̂_s|^p` against the Itô right-hand side.
#[derive(Clone, Debug, Serialize)]
pub struct ItoReport {
    pub p: u32,
    pub times: Vec<f64>,
    pub lhs: Vec<f64>,
    /// Exact one-step expectation of `|X̂_k + bΔ + σΔW|^p` accumulated along the paths.
    pub rhs: Vec<f64>,
    /// Standard error of the per-path difference `LHS − RHS`.
    pub stderr: Vec<f64>,
    /// Right-hand side built from the continuous Itô integrand alone.
    pub ito_rhs: Vec<f64>,
    /// Largest `(LHS − RHS) / (3 SE)` over the grid (negative when comfortably below).
    pub worst_ratio: f64,
    pub passed: bool,
}

/// Checks `Ê|X_s − ŷ^A_s|^p ≤ Ê|X_t − ŷ^A_t|^p + Ê∫(Itô drift and trace terms)`.
///
/// Each step is resolved exactly: given `X_k`, the pre-semigroup point
/// `X̂_k + bΔ + σΔW_k` is Gaussian, so the conditional expectation of its
/// `p`-th norm power follows from the cumulants of a noncentral quadratic
/// form. The contraction `e^{ΔA}` then yields the inequality with the
/// martingale part vanishing in expectation. The split into the classical
/// integrand and its `O(Δ)` remainder is reported in `ito_rhs`.
pub fn check_ito_inequality(bundle: &PathBundle, prob: &ControlProblem, gauge: &GaugeParams) -> Result<ItoReport> {
    check_dim(bundle.dim, gauge.anchor_state.dim())?;
    check_dim(bundle.dim, prob.dim())?;
    if gauge.anchor_time > bundle.t0 + 1e-12 {
        return Err(Error::Domain(format!(
            "gauge anchor time {} is after the bundle start {}",
            gauge.anchor_time, bundle.t0
        )));
    }
    let p = gauge.power;
    let k_steps = bundle.n_steps;
    let n = bundle.dim;
    let dt = bundle.dt;
    let half = (p / 2) as i32;
    let orbits: Vec<StateVec> = (0..=k_steps)
        .map(|k| gauge.op.semigroup_apply(bundle.time(k) - gauge.anchor_time, &gauge.anchor_state))
        .collect::<Result<_>>()?;

    // per path: (|X̂_s|^p, cumulative exact increment, cumulative Itô integrand)
    let per_path: Vec<Result<Vec<[f64; 3]>>> = (0..bundle.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut out = Vec::with_capacity(k_steps + 1);
            let mut acc = 0.0;
            let mut acc_ito = 0.0;
            for k in 0..=k_steps {
                let x = bundle.state_vec(k, path);
                let xh = x.sub(&orbits[k]);
                let r2 = xh.norm_sq();
                out.push([r2.powi(half), acc, acc_ito]);
                if k == k_steps {
                    break;
                }
                let t = bundle.time(k);
                let u = bundle.control(k, path);
                let b = prob.b(t, &x, u);
                let s = prob.sigma(t, &x, u);
                if s.nrows() != n {
                    return Err(Error::shape(n, s.nrows()));
                }
                let mut v = xh.clone();
                v.axpy(dt, &b);
                let m = noncentral_norm_moment(&v, &s, dt, p);
                if !m.is_finite() {
                    return Err(Error::Numeric {
                        step: k,
                        path,
                        msg: "non-finite Itô increment".into(),
                    });
                }
                acc += m - r2.powi(half);
                // p|x̂|^{p−2}⟨x̂,b⟩ + ½Tr[σσ*(p|x̂|^{p−2}I + p(p−2)|x̂|^{p−4}x̂x̂*)]
                let pf = p as f64;
                let st_x = s.tr_mul(&nalgebra::DVector::from_column_slice(xh.as_slice()));
                let mut ito = pf * r2.powi(half - 1) * (xh.dot(&b) + 0.5 * s.norm_squared());
                if p >= 4 {
                    ito += 0.5 * pf * (pf - 2.0) * r2.powi(half - 2) * st_x.norm_squared();
                }
                acc_ito += ito * dt;
            }
            Ok(out)
        })
        .collect();
    let per_path: Vec<Vec<[f64; 3]>> = per_path.into_iter().collect::<Result<_>>()?;

    let np = bundle.n_paths as f64;
    let mut report = ItoReport {
        p,
        times: bundle.times(),
        lhs: Vec::new(),
        rhs: Vec::new(),
        stderr: Vec::new(),
        ito_rhs: Vec::new(),
        worst_ratio: f64::NEG_INFINITY,
        passed: true,
    };
    let start_mean = per_path.iter().map(|v| v[0][0]).sum::<f64>() / np;
    for k in 0..=k_steps {
        let diffs: Vec<f64> = per_path.iter().map(|v| v[k][0] - v[0][0] - v[k][1]).collect();
        let (gap, se) = mean_and_se(&diffs);
        let lhs = per_path.iter().map(|v| v[k][0]).sum::<f64>() / np;
        let inc = per_path.iter().map(|v| v[k][1]).sum::<f64>() / np;
        let ito = per_path.iter().map(|v| v[k][2]).sum::<f64>() / np;
        report.lhs.push(lhs);
        report.rhs.push(start_mean + inc);
        report.ito_rhs.push(start_mean + ito);
        report.stderr.push(se);
        let tol = 3.0 * se + 1e-12 * (1.0 + lhs.abs());
        if gap > tol {
            report.passed = false;
        }
        if k > 0 {
            report.worst_ratio = report.worst_ratio.max(gap / tol);
        }
    }
    Ok(report)
}

/// `E|v + G|^p` for `G ~ N(0, Δ S Sᵀ)` and even `p`.
pub fn noncentral_norm_moment(v: &StateVec, s: &DMatrix<f64>, dt: f64, p: u32) -> f64 {
    let order = (p / 2) as usize;
    let vv = nalgebra::DVector::from_column_slice(v.as_slice());
    // Work in the smaller of the two Gram spaces.
    let (tr_pows, quad_pows) = if s.ncols() <= s.nrows() {
        let k = s.tr_mul(s) * dt;
        let w = s.tr_mul(&vv) * dt.sqrt();
        gram_powers(&k, &w, vv.norm_squared(), order)
    } else {
        let c = s * s.transpose() * dt;
        let mut tr = Vec::with_capacity(order);
        let mut quad = vec![vv.norm_squared()];
        let mut cp = c.clone();
        let mut cv = &c * &vv;
        for r in 1..=order {
            tr.push(cp.trace());
            if r < order {
                quad.push(vv.dot(&cv));
                cp = &cp * &c;
                cv = &c * cv;
            }
        }
        (tr, quad)
    };
    let kappa: Vec<f64> = (1..=order)
        .map(|r| {
            let fact: f64 = (1..r).map(|i| i as f64).product();
            2f64.powi(r as i32 - 1) * fact * (tr_pows[r - 1] + r as f64 * quad_pows[r - 1])
        })
        .collect();
    let mut m = vec![1.0];
    for nn in 1..=order {
        let mut acc = 0.0;
        for k in 0..nn {
            acc += binom(nn - 1, k) * kappa[nn - k - 1] * m[k];
        }
        m.push(acc);
    }
    m[order]
}

/// `Tr(C^r)` for r=1..order and `vᵀC^{r−1}v` for r=1..order, given
/// `K = Δ SᵀS` and `w = √Δ Sᵀv` (so `vᵀC^{j}v = wᵀK^{j−1}w`).
fn gram_powers(k: &DMatrix<f64>, w: &nalgebra::DVector<f64>, v_sq: f64, order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut tr = Vec::with_capacity(order);
    let mut quad = vec![v_sq];
    let mut kp = k.clone();
    let mut kw = w.clone();
    for r in 1..=order {
        tr.push(kp.trace());
        if r < order {
            quad.push(w.dot(&kw));
            kp = &kp * k;
            kw = k * kw;
        }
    }
    (tr, quad)
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn check_coupled(a: &PathBundle, b: &PathBundle) -> Result<()> {
    check_dim(a.dim, b.dim)?;
    check_dim(a.n_steps, b.n_steps)?;
    check_dim(a.n_paths, b.n_paths)?;
    if a.seed != b.seed {
        return Err(Error::Argument("coupled bundles must share a seed".into()));
    }
    Ok(())
}

/// `Ê[sup_s |X_s − Y_s|^p]` and its standard error for two bundles on common noise.
pub fn sup_distance_moment(a: &PathBundle, b: &PathBundle, p: u32) -> Result<(f64, f64)> {
    check_coupled(a, b)?;
    let half = p as f64 / 2.0;
    let per_path: Vec<f64> = (0..a.n_paths)
        .map(|path| {
            (0..=a.n_steps)
                .map(|k| sq_dist(a.state(k, path), b.state(k, path)).powf(half))
                .fold(0.0f64, f64::max)
        })
        .collect();
    Ok(mean_and_se(&per_path))
}

/// `Ê[sup_s |X^x_s − X^y_s|²] / |x0 − y0|²` for bundles started at different points on common noise.
pub fn coupled_lipschitz_ratio(a: &PathBundle, b: &PathBundle) -> Result<f64> {
    check_coupled(a, b)?;
    let d0 = a.x0.sub(&b.x0).norm_sq();
    if d0 == 0.0 {
        return Err(Error::Argument("coupled bundles start at the same point".into()));
    }
    let per_path: Vec<f64> = (0..a.n_paths)
        .map(|path| {
            (0..=a.n_steps)
                .map(|k| sq_dist(a.state(k, path), b.state(k, path)))
                .fold(0.0f64, f64::max)
        })
        .collect();
    Ok(mean_and_se(&per_path).0 / d0)
}
