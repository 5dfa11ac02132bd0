//! Value-functional estimates over enumerable policy classes, the
//! Hamiltonian, dynamic-programming checks and regularity probes.
//!
//! Every policy in a class is simulated on the same seed, so comparisons
//! between policies (and between classes) use common random numbers.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bsde::{solve_bsde, solve_bsde_range, Terminal};
use crate::error::{check_dim, Error, Result};
use crate::problem::{ControlProblem, Policy};
use crate::regression::{Regression, RegressionBasis};
use crate::rng;
use crate::simulate::{ols_slope, simulate_see, SimConfig};
use crate::spectral::StateVec;

/// `max_u ⟨p, b⟩ + ½Tr[l σσ*] + q(t, x, r, σ*p, u)` over the control grid;
/// ties go to the lowest index.
pub fn hamiltonian(
    prob: &ControlProblem,
    t: f64,
    x: &StateVec,
    r: f64,
    p: &StateVec,
    l: &DMatrix<f64>,
) -> Result<(f64, usize)> {
    let n = prob.dim();
    check_dim(n, x.dim())?;
    check_dim(n, p.dim())?;
    if l.shape() != (n, n) {
        return Err(Error::shape(n * n, l.nrows() * l.ncols()));
    }
    if prob.controls.is_empty() {
        return Err(Error::Argument("control grid is empty".into()));
    }
    let pv = DVector::from_column_slice(p.as_slice());
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, &u) in prob.controls.iter().enumerate() {
        let s = prob.sigma(t, x, u);
        let z = s.tr_mul(&pv);
        let trace = (l * &s).component_mul(&s).sum();
        let v = p.dot(&prob.b(t, x, u)) + 0.5 * trace + prob.q(t, x, r, z.as_slice(), u);
        if v > best.0 {
            best = (v, i);
        }
    }
    Ok(best)
}

/// Enumerable approximations of the admissible controls on an interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyClass {
    /// One control for the whole interval.
    Constant,
    /// Open-loop controls constant on `blocks` equal time blocks.
    PiecewiseConstant { blocks: usize },
    /// Feedback on the first state coordinate: cell `j` of the partition by
    /// the sorted `edges` gets its own control.
    FeedbackTable { edges: Vec<f64> },
}

impl Default for PolicyClass {
    fn default() -> Self {
        PolicyClass::Constant
    }
}

impl PolicyClass {
    fn slots(&self) -> usize {
        match self {
            PolicyClass::Constant => 1,
            PolicyClass::PiecewiseConstant { blocks } => *blocks,
            PolicyClass::FeedbackTable { edges } => edges.len() + 1,
        }
    }

    /// Number of members for a grid of `n_controls` labels.
    pub fn size(&self, n_controls: usize) -> Option<usize> {
        let mut total = 1usize;
        for _ in 0..self.slots() {
            total = total.checked_mul(n_controls)?;
        }
        Some(total)
    }

    /// Every member on `[t0, t1]`, in lexicographic order of control indices.
    pub fn enumerate(&self, n_controls: usize, t0: f64, t1: f64, budget: usize) -> Result<Vec<PolicyInstance>> {
        if n_controls == 0 {
            return Err(Error::Argument("control grid is empty".into()));
        }
        if self.slots() == 0 {
            return Err(Error::Argument("policy class is empty".into()));
        }
        if let PolicyClass::FeedbackTable { edges } = self {
            if edges.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Argument("feedback edges must be strictly increasing".into()));
            }
        }
        let size = self.size(n_controls).filter(|s| *s <= budget).ok_or_else(|| {
            Error::config(
                "value.policy",
                format!("policy class has more than {budget} members for {n_controls} controls"),
            )
        })?;
        let slots = self.slots();
        Ok((0..size)
            .map(|mut code| {
                let mut controls = vec![0; slots];
                for c in controls.iter_mut().rev() {
                    *c = code % n_controls;
                    code /= n_controls;
                }
                PolicyInstance {
                    class: self.clone(),
                    t0,
                    t1,
                    controls,
                }
            })
            .collect())
    }
}

/// One member of a [`PolicyClass`] on a fixed interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyInstance {
    pub class: PolicyClass,
    pub t0: f64,
    pub t1: f64,
    /// Control index per time block or feedback cell.
    pub controls: Vec<usize>,
}

impl PolicyInstance {
    pub fn id(&self) -> String {
        let tag = match self.class {
            PolicyClass::Constant => "c",
            PolicyClass::PiecewiseConstant { .. } => "pw",
            PolicyClass::FeedbackTable { .. } => "fb",
        };
        let body: Vec<String> = self.controls.iter().map(|c| c.to_string()).collect();
        format!("{tag}:{}", body.join("-"))
    }
}

impl Policy for PolicyInstance {
    fn control_index(&self, _step: usize, t: f64, x: &StateVec) -> usize {
        match &self.class {
            PolicyClass::Constant => self.controls[0],
            PolicyClass::PiecewiseConstant { blocks } => {
                let frac = (t - self.t0) / (self.t1 - self.t0);
                let j = ((frac * *blocks as f64 + 1e-9).floor().max(0.0) as usize).min(blocks - 1);
                self.controls[j]
            }
            PolicyClass::FeedbackTable { edges } => self.controls[edges.partition_point(|e| *e <= x[0])],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValueConfig {
    /// Steps on `[0, T]`; shorter intervals use the same step size.
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub basis: Option<RegressionBasis>,
    pub policy: PolicyClass,
    pub max_policies: usize,
}

impl Default for ValueConfig {
    fn default() -> Self {
        Self {
            n_steps: 64,
            n_paths: 4096,
            seed: 0,
            basis: None,
            policy: PolicyClass::Constant,
            max_policies: 4096,
        }
    }
}

impl ValueConfig {
    fn basis(&self, prob: &ControlProblem) -> RegressionBasis {
        self.basis.unwrap_or_else(|| RegressionBasis::default_for(prob.dim()))
    }

    pub fn dt(&self, prob: &ControlProblem) -> f64 {
        prob.horizon / self.n_steps as f64
    }

    /// Grid steps covering `[t, T]`, which must be a whole number of steps.
    fn steps_to_horizon(&self, prob: &ControlProblem, t: f64) -> Result<usize> {
        let k = (prob.horizon - t) / self.dt(prob);
        let r = k.round();
        if (k - r).abs() > 1e-6 {
            return Err(Error::config(
                "value.n_steps",
                format!("t = {t} is not on the grid of step {}", self.dt(prob)),
            ));
        }
        Ok(r as usize)
    }

    fn sim(&self, steps: usize) -> SimConfig {
        SimConfig::new(steps, self.n_paths, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyValue {
    pub policy: String,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub t: f64,
    pub x: Vec<f64>,
    pub value: f64,
    pub argmax_policy: String,
    pub stderr: f64,
    pub per_policy: Vec<PolicyValue>,
}

fn validate_start(prob: &ControlProblem, t: f64, x: &StateVec) -> Result<()> {
    check_dim(prob.dim(), x.dim())?;
    if !(0.0..=prob.horizon).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, {}]", prob.horizon)));
    }
    Ok(())
}

fn reduce(t: f64, x: &StateVec, per_policy: Vec<PolicyValue>) -> ValueEstimate {
    // first maximum in enumeration order
    let best = per_policy
        .iter()
        .enumerate()
        .fold(0, |b, (i, p)| if p.value > per_policy[b].value { i } else { b });
    ValueEstimate {
        t,
        x: x.as_slice().to_vec(),
        value: per_policy[best].value,
        argmax_policy: per_policy[best].policy.clone(),
        stderr: per_policy[best].stderr,
        per_policy,
    }
}

/// `V̂(t,x) = max` over the class of the BSDE value `Ŷ_t` of each policy.
pub fn estimate_value(prob: &ControlProblem, t: f64, x: &StateVec, cfg: &ValueConfig) -> Result<ValueEstimate> {
    validate_start(prob, t, x)?;
    let policies = cfg
        .policy
        .enumerate(prob.controls.len(), t, prob.horizon, cfg.max_policies)?;
    let steps = cfg.steps_to_horizon(prob, t)?;
    if steps == 0 {
        let phi = prob.phi(x);
        let per = policies
            .iter()
            .map(|p| PolicyValue {
                policy: p.id(),
                value: phi,
                stderr: 0.0,
            })
            .collect();
        return Ok(reduce(t, x, per));
    }
    let basis = cfg.basis(prob);
    let mut per = Vec::with_capacity(policies.len());
    for p in &policies {
        let bundle = simulate_see(prob, t, x, p, &cfg.sim(steps))?;
        let pair = solve_bsde(&bundle, prob, &basis, Terminal::Phi)?;
        per.push(PolicyValue {
            policy: p.id(),
            value: pair.y0(),
            stderr: pair.stderr(),
        });
    }
    Ok(reduce(t, x, per))
}

/// Writes `t, x_1..x_N, value, stderr, policy` rows.
pub fn write_value_table(path: &Path, estimates: &[ValueEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = estimates.first().map_or(0, |e| e.x.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    header.extend(["value", "stderr", "policy"].map(String::from));
    w.write_record(&header)?;
    for e in estimates {
        let mut row = vec![crate::io::fmt_f64(e.t)];
        row.extend(e.x.iter().map(|v| crate::io::fmt_f64(*v)));
        row.push(crate::io::fmt_f64(e.value));
        row.push(crate::io::fmt_f64(e.stderr));
        row.push(e.argmax_policy.clone());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DppReport {
    pub t: f64,
    pub delta: f64,
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
    pub rhs_policy: String,
    /// Root-mean-square standard error of the fitted `V̂(t+δ, ·)` samples.
    pub fit_stderr: f64,
    pub fit_states: usize,
    pub gap: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Number of states at which `V̂(t+δ, ·)` is estimated before fitting.
pub const DEFAULT_FIT_STATES: usize = 24;

/// Compares `V̂(t,x)` with `max_π Ĝ_{t,t+δ}[V̂(t+δ, X_{t+δ})]`, where
/// `V̂(t+δ, ·)` is a regression fit of value estimates at states drawn from
/// the time-`t+δ` ensemble. Tolerance `3·SE + 5Δ`.
pub fn check_dpp(
    prob: &ControlProblem,
    t: f64,
    x: &StateVec,
    delta: f64,
    cfg: &ValueConfig,
    fit_states: usize,
) -> Result<DppReport> {
    if !(delta > 0.0) {
        return Err(Error::Argument(format!("δ must be positive, got {delta}")));
    }
    validate_start(prob, t, x)?;
    let s = t + delta;
    if s > prob.horizon + 1e-12 {
        return Err(Error::Domain(format!("t + δ = {s} exceeds the horizon {}", prob.horizon)));
    }
    let lhs = estimate_value(prob, t, x, cfg)?;
    let steps = cfg.steps_to_horizon(prob, t)?;
    let tail_steps = cfg.steps_to_horizon(prob, s.min(prob.horizon))?;
    let mid = steps - tail_steps;
    let basis = cfg.basis(prob);
    let policies = cfg.policy.enumerate(prob.controls.len(), t, s, cfg.max_policies)?;

    // ζ = V̂(t+δ, ·): φ at the horizon, otherwise a fit
    let (zeta, fit_stderr, n_fit): (Box<dyn Fn(&StateVec) -> f64>, f64, usize) = if tail_steps == 0 {
        (Box::new(|y: &StateVec| prob.phi(y)), 0.0, 0)
    } else {
        let reference = &policies[0];
        let fit_cfg = SimConfig::new(steps, fit_states, rng::derive_seed(cfg.seed, 0xD99));
        let bundle = simulate_see(prob, t, x, reference, &fit_cfg)?;
        let states: Vec<StateVec> = (0..fit_states).map(|p| bundle.state_vec(mid, p)).collect();
        let mut values = Vec::with_capacity(fit_states);
        let mut se2 = 0.0;
        for y in &states {
            let e = estimate_value(prob, s, y, cfg)?;
            values.push(e.value);
            se2 += e.stderr * e.stderr;
        }
        let rows: Vec<&[f64]> = states.iter().map(|v| v.as_slice()).collect();
        let fitted = Regression::new(&basis, &rows)?.fit(&values);
        (
            Box::new(move |y: &StateVec| fitted.eval(y.as_slice())),
            (se2 / fit_states as f64).sqrt(),
            fit_states,
        )
    };

    let mut per = Vec::with_capacity(policies.len());
    for p in &policies {
        let bundle = simulate_see(prob, t, x, p, &cfg.sim(steps))?;
        let terminal: Vec<f64> = (0..bundle.n_paths).map(|k| zeta(&bundle.state_vec(mid, k))).collect();
        let pair = solve_bsde_range(&bundle, prob, &basis, 0, mid, Terminal::Values(terminal))?;
        per.push(PolicyValue {
            policy: p.id(),
            value: pair.y0(),
            stderr: pair.stderr(),
        });
    }
    let rhs = reduce(t, x, per);
    let gap = (lhs.value - rhs.value).abs();
    let se = (lhs.stderr.powi(2) + rhs.stderr.powi(2) + fit_stderr.powi(2)).sqrt();
    let tolerance = 3.0 * se + 5.0 * cfg.dt(prob);
    Ok(DppReport {
        t,
        delta,
        lhs: lhs.value,
        lhs_stderr: lhs.stderr,
        rhs: rhs.value,
        rhs_stderr: rhs.stderr,
        rhs_policy: rhs.argmax_policy,
        fit_stderr,
        fit_states: n_fit,
        gap,
        tolerance,
        passed: gap <= tolerance,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegularityOptions {
    pub t: f64,
    /// Base point of the Lipschitz ladder; partners are `x + d e₁`.
    pub base: Vec<f64>,
    pub distances: Vec<f64>,
    /// Ratios `|V̂(t,x)−V̂(t,y)|/|x−y|` above this count as unbounded.
    pub lipschitz_bound: f64,
    /// Norms of the growth ladder along `e₁`.
    pub growth_radii: Vec<f64>,
    pub growth_bound: f64,
    /// Time gaps `h`: `V̂(T−h, x₀)` is compared with `V̂(T, e^{hA}x₀)`.
    pub time_gaps: Vec<f64>,
    pub time_point: Vec<f64>,
    pub exponent_range: (f64, f64),
}

impl Default for RegularityOptions {
    fn default() -> Self {
        Self {
            t: 0.5,
            base: vec![0.5],
            distances: vec![0.4, 0.2, 0.1, 0.05],
            lipschitz_bound: 10.0,
            growth_radii: vec![1.0, 2.0, 4.0, 8.0],
            growth_bound: 10.0,
            time_gaps: vec![1.0 / 64.0, 1.0 / 32.0, 1.0 / 16.0],
            time_point: vec![0.0],
            exponent_range: (0.45, 0.75),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    /// `(d, |V̂(t,x)−V̂(t,x+de₁)|/d)`
    pub lipschitz: Vec<(f64, f64)>,
    pub lipschitz_passed: bool,
    /// `(|x|, |V̂(t,x)|/(1+|x|))`
    pub growth: Vec<(f64, f64)>,
    pub growth_passed: bool,
    /// `(h, |V̂(T−h,x₀) − V̂(T, e^{hA}x₀)|, stderr)`
    pub time: Vec<(f64, f64, f64)>,
    pub time_exponent: Option<f64>,
    pub time_passed: bool,
    pub passed: bool,
}

fn along_e1(base: &[f64], dim: usize, shift: f64) -> Result<StateVec> {
    let mut v = vec![0.0; dim];
    for (i, b) in base.iter().enumerate().take(dim) {
        v[i] = *b;
    }
    v[0] += shift;
    StateVec::new(v)
}

/// Lipschitz ladder in `x`, linear-growth ladder, and the time-regularity
/// exponent of `V̂` near the horizon. Time gaps must be multiples of the
/// step size.
pub fn probe_regularity(prob: &ControlProblem, cfg: &ValueConfig, opts: &RegularityOptions) -> Result<RegularityReport> {
    let n = prob.dim();
    let x = along_e1(&opts.base, n, 0.0)?;
    let v0 = estimate_value(prob, opts.t, &x, cfg)?.value;
    let mut lipschitz = Vec::new();
    for &d in opts.distances.iter().filter(|d| **d != 0.0) {
        let y = along_e1(&opts.base, n, d)?;
        let v = estimate_value(prob, opts.t, &y, cfg)?.value;
        lipschitz.push((d.abs(), (v - v0).abs() / d.abs()));
    }
    let lipschitz_passed = lipschitz.iter().all(|(_, r)| r.is_finite() && *r <= opts.lipschitz_bound);

    let mut growth = Vec::new();
    for &r in &opts.growth_radii {
        let y = along_e1(&[], n, r)?;
        let v = estimate_value(prob, opts.t, &y, cfg)?.value;
        growth.push((r, v.abs() / (1.0 + r)));
    }
    let growth_passed = growth.iter().all(|(_, g)| g.is_finite() && *g <= opts.growth_bound);

    let x0 = along_e1(&opts.time_point, n, 0.0)?;
    let mut time = Vec::new();
    for &h in &opts.time_gaps {
        let late = prob.op.semigroup_apply(h, &x0)?;
        let early = estimate_value(prob, prob.horizon - h, &x0, cfg)?;
        time.push((h, (early.value - prob.phi(&late)).abs(), early.stderr));
    }
    let (lh, ld): (Vec<f64>, Vec<f64>) = time
        .iter()
        .filter(|(_, d, _)| *d > 0.0)
        .map(|(h, d, _)| (h.ln(), d.ln()))
        .unzip();
    let time_exponent = if lh.len() >= 2 { Some(ols_slope(&lh, &ld)) } else { None };
    let time_passed = time_exponent.is_some_and(|e| e >= opts.exponent_range.0 && e <= opts.exponent_range.1);
    Ok(RegularityReport {
        lipschitz,
        lipschitz_passed,
        growth,
        growth_passed,
        time,
        time_exponent,
        time_passed,
        passed: lipschitz_passed && growth_passed && time_passed,
    })
}

/// `Ŷ_t` and its standard error under a single policy.
pub fn policy_value(
    prob: &ControlProblem,
    t: f64,
    x: &StateVec,
    policy: &dyn Policy,
    cfg: &ValueConfig,
) -> Result<(f64, f64)> {
    validate_start(prob, t, x)?;
    let steps = cfg.steps_to_horizon(prob, t)?;
    let bundle = simulate_see(prob, t, x, policy, &cfg.sim(steps))?;
    let pair = solve_bsde(&bundle, prob, &cfg.basis(prob), Terminal::Phi)?;
    Ok((pair.y0(), pair.stderr()))
}
