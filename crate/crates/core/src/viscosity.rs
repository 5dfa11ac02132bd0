//! Numerical surrogates for the viscosity-solution machinery: the classical
//! HJB residual, touch-point inequality checks for test pairs, and the
//! stability experiment along a converging family of problems.
//!
//! Touching points are certified only on finite probe grids over
//! `[t, T'] × box`; every report says so.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gauge::{GaugeSum, GaugeSumSpec, Jet, SmoothFunctional, TestPair, TimeWeight};
use crate::library::LqClosedForm;
use crate::problem::ControlProblem;
use crate::rng;
use crate::spectral::StateVec;
use crate::value::{estimate_value, hamiltonian, ValueConfig};

/// Absolute tolerance for closed-form candidates.
pub const CLOSED_FORM_TOL: f64 = 1e-6;
/// Tolerance of the touch-point scan for closed-form candidates.
pub const TOUCH_SCAN_TOL: f64 = 1e-9;

const PROBE_NOTE: &str = "touching verified on a finite probe grid over [t, T'] x box only";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ClosedForm,
    Fitted,
    Perturbed,
}

/// A candidate `v(t,x)`, optionally with `(v_t, ∇v, ∇²v)`.
pub trait CandidateSolution: Send + Sync {
    fn value(&self, t: f64, x: &StateVec) -> f64;

    /// `Jet::dt` carries `v_t`. `None` when derivatives are unavailable.
    fn jet(&self, _t: f64, _x: &StateVec) -> Option<Jet> {
        None
    }

    fn provenance(&self) -> Provenance;
}

impl CandidateSolution for LqClosedForm {
    fn value(&self, t: f64, x: &StateVec) -> f64 {
        LqClosedForm::value(self, t, x)
    }

    fn jet(&self, t: f64, x: &StateVec) -> Option<Jet> {
        Some(LqClosedForm::jet(self, t, x))
    }

    fn provenance(&self) -> Provenance {
        Provenance::ClosedForm
    }
}

/// `v + height · exp(−|x − center|² / (2 width²))`.
pub struct Bumped {
    pub inner: Arc<dyn CandidateSolution>,
    pub center: StateVec,
    pub height: f64,
    pub width: f64,
}

impl Bumped {
    fn bump(&self, x: &StateVec) -> (f64, StateVec) {
        let d = x.sub(&self.center);
        (self.height * (-d.norm_sq() / (2.0 * self.width * self.width)).exp(), d)
    }
}

impl CandidateSolution for Bumped {
    fn value(&self, t: f64, x: &StateVec) -> f64 {
        self.inner.value(t, x) + self.bump(x).0
    }

    fn jet(&self, t: f64, x: &StateVec) -> Option<Jet> {
        let mut j = self.inner.jet(t, x)?;
        let (b, d) = self.bump(x);
        let w2 = self.width * self.width;
        j.value += b;
        j.grad.axpy(-b / w2, &d);
        let n = x.dim();
        for r in 0..n {
            for c in 0..n {
                let delta = if r == c { 1.0 } else { 0.0 };
                j.hess[(r, c)] += b * (d[r] * d[c] / (w2 * w2) - delta / w2);
            }
        }
        Some(j)
    }

    fn provenance(&self) -> Provenance {
        Provenance::Perturbed
    }
}

/// `v + eps · t`.
pub struct TimeShifted {
    pub inner: Arc<dyn CandidateSolution>,
    pub eps: f64,
}

impl CandidateSolution for TimeShifted {
    fn value(&self, t: f64, x: &StateVec) -> f64 {
        self.inner.value(t, x) + self.eps * t
    }

    fn jet(&self, t: f64, x: &StateVec) -> Option<Jet> {
        let mut j = self.inner.jet(t, x)?;
        j.value += self.eps * t;
        j.dt += self.eps;
        Some(j)
    }

    fn provenance(&self) -> Provenance {
        Provenance::Perturbed
    }
}

type ValueFn = dyn Fn(f64, &StateVec) -> f64 + Send + Sync;

/// A value-only functional (e.g. a regression fit); derivatives by central
/// differences with step `fd_step` when set.
pub struct FittedCandidate {
    f: Arc<ValueFn>,
    pub fd_step: Option<f64>,
}

impl FittedCandidate {
    pub fn new(f: impl Fn(f64, &StateVec) -> f64 + Send + Sync + 'static, fd_step: Option<f64>) -> Self {
        Self { f: Arc::new(f), fd_step }
    }
}

impl CandidateSolution for FittedCandidate {
    fn value(&self, t: f64, x: &StateVec) -> f64 {
        (self.f)(t, x)
    }

    fn jet(&self, t: f64, x: &StateVec) -> Option<Jet> {
        let h = self.fd_step?;
        let f = |t: f64, x: &StateVec| (self.f)(t, x);
        let n = x.dim();
        let v = f(t, x);
        let shift = |x: &StateVec, i: usize, d: f64| {
            let mut y = x.clone();
            y[i] += d;
            y
        };
        let dt = (f(t + h, x) - f(t - h, x)) / (2.0 * h);
        let grad: Vec<f64> = (0..n)
            .map(|i| (f(t, &shift(x, i, h)) - f(t, &shift(x, i, -h))) / (2.0 * h))
            .collect();
        let mut hess = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                hess[(i, j)] = if i == j {
                    (f(t, &shift(x, i, h)) - 2.0 * v + f(t, &shift(x, i, -h))) / (h * h)
                } else {
                    let pp = shift(&shift(x, i, h), j, h);
                    let pm = shift(&shift(x, i, h), j, -h);
                    let mp = shift(&shift(x, i, -h), j, h);
                    let mm = shift(&shift(x, i, -h), j, -h);
                    (f(t, &pp) - f(t, &pm) - f(t, &mp) + f(t, &mm)) / (4.0 * h * h)
                };
            }
        }
        Some(Jet {
            value: v,
            dt,
            grad: StateVec::from(grad),
            hess,
        })
    }

    fn provenance(&self) -> Provenance {
        Provenance::Fitted
    }
}

/// `v_t + ⟨A*∇v, x⟩ + H(t, x, v, ∇v, ∇²v)` for `t < T`.
pub fn hjb_residual(prob: &ControlProblem, v: &dyn CandidateSolution, t: f64, x: &StateVec) -> Result<f64> {
    check_dim(prob.dim(), x.dim())?;
    if !(t >= 0.0 && t < prob.horizon) {
        return Err(Error::Domain(format!("residual needs t in [0, {}), got {t}", prob.horizon)));
    }
    let j = v
        .jet(t, x)
        .ok_or_else(|| Error::Capability("candidate has no derivatives".into()))?;
    let pairing = prob.op.adjoint_pair(&j.grad, x)?;
    let (h, _) = hamiltonian(prob, t, x, j.value, &j.grad, &j.hess)?;
    Ok(j.dt + pairing + h)
}

/// Product grid: `n` times in `[t0, t1]` and `n` points per coordinate of the box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeBox {
    pub t0: f64,
    pub t1: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n: usize,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

impl ProbeBox {
    pub fn cube(t0: f64, t1: f64, dim: usize, radius: f64, n: usize) -> Self {
        Self {
            t0,
            t1,
            lo: vec![-radius; dim],
            hi: vec![radius; dim],
            n,
        }
    }

    pub fn times(&self) -> Vec<f64> {
        linspace(self.t0, self.t1, self.n)
    }

    pub fn states(&self) -> Vec<StateVec> {
        let d = self.lo.len();
        let axes: Vec<Vec<f64>> = (0..d).map(|i| linspace(self.lo[i], self.hi[i], self.n)).collect();
        let total = self.n.pow(d as u32);
        (0..total)
            .map(|mut k| {
                let mut v = vec![0.0; d];
                for i in (0..d).rev() {
                    v[i] = axes[i][k % self.n];
                    k /= self.n;
                }
                StateVec::from(v)
            })
            .collect()
    }

    pub fn points(&self) -> Vec<(f64, StateVec)> {
        let states = self.states();
        self.times()
            .into_iter()
            .flat_map(|t| states.iter().map(move |x| (t, x.clone())))
            .collect()
    }

    /// The same state box with times `[t, t1]`.
    fn from_time(&self, t: f64) -> Self {
        Self {
            t0: t,
            t1: self.t1.max(t),
            ..self.clone()
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> (f64, StateVec) {
        let t = rng.gen_range(self.t0..=self.t1);
        let x: Vec<f64> = self.lo.iter().zip(&self.hi).map(|(a, b)| rng.gen_range(*a..=*b)).collect();
        (t, StateVec::from(x))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub points: usize,
    pub max_abs_residual: f64,
    pub worst_point: (f64, Vec<f64>),
    pub tolerance: f64,
    pub passed: bool,
}

/// Largest `|hjb_residual|` over a probe box (times must stay below `T`).
pub fn residual_scan(prob: &ControlProblem, v: &dyn CandidateSolution, probe: &ProbeBox, tol: f64) -> Result<ResidualReport> {
    let pts = probe.points();
    let res: Vec<f64> = pts
        .par_iter()
        .map(|(t, x)| hjb_residual(prob, v, *t, x))
        .collect::<Result<_>>()?;
    let worst = (0..res.len()).fold(0, |b, i| if res[i].abs() > res[b].abs() { i } else { b });
    let max = res[worst].abs();
    Ok(ResidualReport {
        points: pts.len(),
        max_abs_residual: max,
        worst_point: (pts[worst].0, pts[worst].1.as_slice().to_vec()),
        tolerance: tol,
        passed: max <= tol,
    })
}

/// Largest `|v(T,x) − φ(x)|` over the probe states.
pub fn terminal_gap(prob: &ControlProblem, v: &dyn CandidateSolution, probe: &ProbeBox) -> f64 {
    probe
        .states()
        .iter()
        .map(|x| (v.value(prob.horizon, x) - prob.phi(x)).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TouchSide {
    Sub,
    Super,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TouchReport {
    pub t: f64,
    pub x: Vec<f64>,
    pub side: TouchSide,
    /// Left-hand side of the sub- (`≥ 0`) or super-solution (`≤ 0`) inequality.
    pub inequality_value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub scanned_points: usize,
    pub note: String,
}

impl TouchReport {
    /// How far the inequality misses, `0` when it holds.
    pub fn violation(&self) -> f64 {
        match self.side {
            TouchSide::Sub => (-self.inequality_value).max(0.0),
            TouchSide::Super => self.inequality_value.max(0.0),
        }
    }
}

/// `w − (φ+g)` for sub, `w + (φ+g)` for super.
fn touch_gap(w: &dyn CandidateSolution, tp: &TestPair, side: TouchSide, s: f64, y: &StateVec) -> Result<f64> {
    let phi = tp.phi.jet(s, y)?.value;
    let g = tp.g.eval(s, y)?.jet.value;
    Ok(match side {
        TouchSide::Sub => w.value(s, y) - phi - g,
        TouchSide::Super => w.value(s, y) + phi + g,
    })
}

/// Verifies that `(t,x)` touches (`w − φ − g` has max 0 there for sub, `w + φ + g`
/// has min 0 for super) on the probe states over times in `[t, probe.t1]`, then
/// evaluates the viscosity inequality.
pub fn check_touch(
    prob: &ControlProblem,
    w: &dyn CandidateSolution,
    tp: &TestPair,
    t: f64,
    x: &StateVec,
    side: TouchSide,
    probe: &ProbeBox,
    tol: f64,
) -> Result<TouchReport> {
    check_dim(prob.dim(), x.dim())?;
    if !(t >= tp.domain_start && t < prob.horizon) {
        return Err(Error::Domain(format!("touch time {t} outside [{}, {})", tp.domain_start, prob.horizon)));
    }
    let at = touch_gap(w, tp, side, t, x)?;
    if at.abs() > tol {
        return Err(Error::Precondition(format!("w ∓ (φ+g) is {at:e} at the touching point, not 0")));
    }
    let pts = probe.from_time(t).points();
    let gaps: Vec<f64> = pts
        .iter()
        .map(|(s, y)| touch_gap(w, tp, side, *s, y))
        .collect::<Result<_>>()?;
    for ((s, y), g) in pts.iter().zip(&gaps) {
        let bad = match side {
            TouchSide::Sub => *g > at + tol,
            TouchSide::Super => *g < at - tol,
        };
        if bad {
            return Err(Error::Precondition(format!(
                "({s}, {:?}) beats the touching point: {g:e} vs {at:e}",
                y.as_slice()
            )));
        }
    }
    let e = tp.eval(t, x)?;
    let value = match side {
        TouchSide::Sub => e.dt_phi + e.dto_g + e.astar_pairing + hamiltonian(prob, t, x, e.value, &e.grad, &e.hess)?.0,
        TouchSide::Super => {
            let neg_grad = e.grad.scale(-1.0);
            -e.dt_phi - e.dto_g - e.astar_pairing + hamiltonian(prob, t, x, -e.value, &neg_grad, &(-&e.hess))?.0
        }
    };
    let passed = match side {
        TouchSide::Sub => value >= -tol,
        TouchSide::Super => value <= tol,
    };
    Ok(TouchReport {
        t,
        x: x.as_slice().to_vec(),
        side,
        inequality_value: value,
        tolerance: tol,
        passed,
        scanned_points: pts.len(),
        note: PROBE_NOTE.into(),
    })
}

/// `φ(s,y) = ±w(s,y) − g(t̂,x̂) − ⟨∇g(t̂,x̂), y − x̂⟩ + c|y − x̂|² + c_t (s − t̂)`.
struct TouchPhi {
    w: Arc<dyn CandidateSolution>,
    sign: f64,
    t_hat: f64,
    x_hat: StateVec,
    g0: f64,
    grad0: StateVec,
    c: f64,
    c_t: f64,
}

impl SmoothFunctional for TouchPhi {
    fn jet(&self, t: f64, x: &StateVec) -> Result<Jet> {
        let mut j = self
            .w
            .jet(t, x)
            .ok_or_else(|| Error::Capability("candidate has no derivatives".into()))?;
        let d = x.sub(&self.x_hat);
        let n = x.dim();
        j.value = self.sign * j.value - self.g0 - self.grad0.dot(&d) + self.c * d.norm_sq() + self.c_t * (t - self.t_hat);
        j.dt = self.sign * j.dt + self.c_t;
        j.grad = j.grad.scale(self.sign);
        j.grad.axpy(-1.0, &self.grad0);
        j.grad.axpy(2.0 * self.c, &d);
        j.hess = &j.hess * self.sign + DMatrix::identity(n, n) * (2.0 * self.c);
        Ok(j)
    }
}

/// Builds `φ` so that `(t̂, x̂)` touches `w` against `φ + g` on the probe grid.
/// `c_t` is the smallest time slope making the scan non-negative.
pub fn touch_pair(
    w: Arc<dyn CandidateSolution>,
    g: GaugeSum,
    t_hat: f64,
    x_hat: &StateVec,
    side: TouchSide,
    curvature: f64,
    probe: &ProbeBox,
) -> Result<TestPair> {
    let g_hat = g.eval(t_hat, x_hat)?.jet;
    let mut c_t: f64 = 0.0;
    for (s, y) in probe.from_time(t_hat).points() {
        if s > t_hat {
            let d = y.sub(x_hat);
            let e = g.eval(s, &y)?.jet.value - g_hat.value - g_hat.grad.dot(&d) + curvature * d.norm_sq();
            c_t = c_t.max(-e / (s - t_hat));
        }
    }
    let c_t = if c_t > 0.0 { c_t * (1.0 + 1e-6) + 1e-12 } else { 0.0 };
    let phi = TouchPhi {
        w,
        sign: match side {
            TouchSide::Sub => 1.0,
            TouchSide::Super => -1.0,
        },
        t_hat,
        x_hat: x_hat.clone(),
        g0: g_hat.value,
        grad0: g_hat.grad,
        c: curvature,
        c_t,
    };
    Ok(TestPair::new(Arc::new(phi), g))
}

/// A random member of the canonical gauge family at `(t̂, x̂)`:
/// `h(s)|x|⁴ + δ|x − x̂^A|² + Σ δ_i Υ(·, (t_i, x_i))` with small weights and
/// anchors `t_i ≤ t̂` in the probe box.
pub fn random_canonical_gauge(
    prob: &ControlProblem,
    t_hat: f64,
    x_hat: &StateVec,
    probe: &ProbeBox,
    rng: &mut impl Rng,
) -> Result<GaugeSum> {
    let value = rng.gen_range(0.0..0.02);
    let span = (prob.horizon - t_hat).max(1e-12);
    let slope = rng.gen_range(-value / span..0.02);
    let anchors: Vec<(f64, StateVec)> = (0..2)
        .map(|_| {
            let t = rng.gen_range(0.0..=t_hat);
            let x: Vec<f64> = probe.lo.iter().zip(&probe.hi).map(|(a, b)| rng.gen_range(*a..=*b)).collect();
            (t, StateVec::from(x))
        })
        .collect();
    let spec = GaugeSumSpec {
        weights: vec![0.01, 0.005],
        anchors,
        quartic_weight: Some(TimeWeight::Affine {
            value,
            slope,
            origin: t_hat,
        }),
        shifted_square: Some((rng.gen_range(0.0..0.1), t_hat, x_hat.clone())),
    };
    spec.build(&prob.op, t_hat, spec.weights.len())
}

/// `n` random touching points in `probe`, each checked on both sides with a
/// random canonical gauge. Results come in point order, sub before super.
pub fn generated_touch_checks(
    prob: &ControlProblem,
    w: Arc<dyn CandidateSolution>,
    probe: &ProbeBox,
    n: usize,
    seed: u64,
    tol: f64,
) -> Result<Vec<TouchReport>> {
    let per_point: Vec<Result<Vec<TouchReport>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, i as u64);
            let (t, x) = probe.sample(&mut rng);
            let g = random_canonical_gauge(prob, t, &x, probe, &mut rng)?;
            let curvature = rng.gen_range(0.05..0.5);
            [TouchSide::Sub, TouchSide::Super]
                .into_iter()
                .map(|side| {
                    let tp = touch_pair(w.clone(), g.clone(), t, &x, side, curvature, probe)?;
                    check_touch(prob, w.as_ref(), &tp, t, &x, side, probe, tol)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(2 * n);
    for r in per_point {
        out.extend(r?);
    }
    Ok(out)
}

/// Sub-solution check of `w + 0.05·exp(−|y − x̂|²/(2·0.1²))` at the bump
/// centre, with a near-minimal gauge. A genuine solution plus such a bump
/// is not a sub-solution, so the check is expected to fail.
pub fn bump_counterexample(
    prob: &ControlProblem,
    w: Arc<dyn CandidateSolution>,
    t_hat: f64,
    x_hat: &StateVec,
    probe: &ProbeBox,
) -> Result<TouchReport> {
    let bumped: Arc<dyn CandidateSolution> = Arc::new(Bumped {
        inner: w,
        center: x_hat.clone(),
        height: 0.05,
        width: 0.1,
    });
    let g = GaugeSumSpec {
        weights: vec![],
        anchors: vec![],
        quartic_weight: None,
        shifted_square: Some((0.01, t_hat, x_hat.clone())),
    }
    .build(&prob.op, t_hat, 0)?;
    let tp = touch_pair(bumped.clone(), g, t_hat, x_hat, TouchSide::Sub, 0.05, probe)?;
    check_touch(prob, bumped.as_ref(), &tp, t_hat, x_hat, TouchSide::Sub, probe, TOUCH_SCAN_TOL)
}

pub fn write_touch_reports(path: &Path, reports: &[TouchReport]) -> Result<()> {
    crate::io::write_jsonl(path, reports)
}

/// One member of a family converging to a limit problem as `eps → 0`.
#[derive(Clone)]
pub struct StabilityMember {
    pub eps: f64,
    pub problem: ControlProblem,
    /// Classical solution of the member, if known.
    pub candidate: Option<Arc<dyn CandidateSolution>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityOptions {
    /// Box for coefficient gaps, residuals and touch points.
    pub probe: ProbeBox,
    pub touch_checks: usize,
    pub seed: u64,
    /// Points `(t, x)` where `V̂^ε` and `V̂` are compared; empty skips Monte Carlo.
    pub value_points: Vec<(f64, Vec<f64>)>,
    pub value: ValueConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub eps: f64,
    /// `sup |b^ε − b| + |σ^ε − σ|_HS + |q^ε − q| + |φ^ε − φ|` on the probe box.
    pub coefficient_gap: f64,
    /// Largest `|residual|` of the member candidate in the limit problem (or
    /// of the limit candidate in the member problem when the member has none).
    pub max_residual: f64,
    /// Largest touch-check violation, same pairing as `max_residual`.
    pub max_touch_violation: f64,
    /// Whether the member candidate passes every touch check in its own problem.
    pub member_touch_passed: Option<bool>,
    /// `sup |V̂^ε − V̂|` over the value points.
    pub value_gap: Option<f64>,
    /// `√(SE_ε² + SE²)` at the point attaining the sup.
    pub value_gap_stderr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    pub aborted: Option<String>,
    pub value_gap_monotone: Option<bool>,
    pub final_gap_within_3se: Option<bool>,
    pub passed: bool,
}

impl StabilityReport {
    /// CSV ladder `eps,coefficient_gap,max_residual,max_touch_violation,value_gap,value_gap_stderr`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "eps",
            "coefficient_gap",
            "max_residual",
            "max_touch_violation",
            "value_gap",
            "value_gap_stderr",
        ])?;
        let opt = |v: Option<f64>| v.map(crate::io::fmt_f64).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                crate::io::fmt_f64(r.eps),
                crate::io::fmt_f64(r.coefficient_gap),
                crate::io::fmt_f64(r.max_residual),
                crate::io::fmt_f64(r.max_touch_violation),
                opt(r.value_gap),
                opt(r.value_gap_stderr),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn coefficient_gap(a: &ControlProblem, b: &ControlProblem, probe: &ProbeBox) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    if a.controls != b.controls {
        return Err(Error::Argument("family members must share the control grid".into()));
    }
    let z = vec![0.0; a.noise_dim];
    let mut worst: f64 = 0.0;
    for (t, x) in probe.points() {
        worst = worst.max((a.phi(&x) - b.phi(&x)).abs());
        for &u in &a.controls {
            let db = a.b(t, &x, u).sub(&b.b(t, &x, u)).norm();
            let ds = (a.sigma(t, &x, u) - b.sigma(t, &x, u)).norm();
            let dq = (a.q(t, &x, 0.0, &z, u) - b.q(t, &x, 0.0, &z, u)).abs();
            worst = worst.max(db + ds + dq);
        }
    }
    Ok(worst)
}

fn max_violation(reports: &[TouchReport]) -> f64 {
    reports.iter().map(TouchReport::violation).fold(0.0, f64::max)
}

/// Runs residual, touch and (optionally) value comparisons along the family,
/// sorted by decreasing `eps`. A family whose coefficient gap does not
/// decrease is reported as aborted.
pub fn stability_experiment(
    limit: &ControlProblem,
    limit_candidate: Option<Arc<dyn CandidateSolution>>,
    family: &[StabilityMember],
    opts: &StabilityOptions,
) -> Result<StabilityReport> {
    let mut members: Vec<&StabilityMember> = family.iter().collect();
    members.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let mut gaps = Vec::with_capacity(members.len());
    for m in &members {
        gaps.push(coefficient_gap(&m.problem, limit, &opts.probe)?);
    }
    if gaps.windows(2).any(|w| w[1] > w[0]) || gaps.last().is_some_and(|g| !g.is_finite()) {
        return Ok(StabilityReport {
            rows: members
                .iter()
                .zip(&gaps)
                .map(|(m, g)| StabilityRow {
                    eps: m.eps,
                    coefficient_gap: *g,
                    max_residual: f64::NAN,
                    max_touch_violation: f64::NAN,
                    member_touch_passed: None,
                    value_gap: None,
                    value_gap_stderr: None,
                })
                .collect(),
            aborted: Some("coefficient gaps do not decrease along the family".into()),
            value_gap_monotone: None,
            final_gap_within_3se: None,
            passed: false,
        });
    }

    let residual_probe = ProbeBox {
        t1: opts.probe.t1.min(limit.horizon * (1.0 - 1e-9)),
        ..opts.probe.clone()
    };
    let limit_values = opts
        .value_points
        .iter()
        .map(|(t, x)| estimate_value(limit, *t, &StateVec::new(x.clone())?, &opts.value))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(members.len());
    for (m, gap) in members.iter().zip(gaps) {
        let (prob, cand): (&ControlProblem, Option<Arc<dyn CandidateSolution>>) = match &m.candidate {
            Some(c) => (limit, Some(c.clone())),
            None => (&m.problem, limit_candidate.clone()),
        };
        let (max_residual, max_touch_violation) = match cand {
            Some(c) => {
                let r = residual_scan(prob, c.as_ref(), &residual_probe, f64::INFINITY)?;
                let touches = generated_touch_checks(prob, c, &residual_probe, opts.touch_checks, opts.seed, TOUCH_SCAN_TOL)?;
                (r.max_abs_residual, max_violation(&touches))
            }
            None => (f64::NAN, f64::NAN),
        };
        let member_touch_passed = match &m.candidate {
            Some(c) => {
                let own = generated_touch_checks(&m.problem, c.clone(), &residual_probe, opts.touch_checks, opts.seed, TOUCH_SCAN_TOL)?;
                Some(own.iter().all(|r| r.violation() <= CLOSED_FORM_TOL))
            }
            None => None,
        };
        let (value_gap, value_gap_stderr) = if opts.value_points.is_empty() {
            (None, None)
        } else {
            let mut best = (0.0, 0.0);
            for ((t, x), base) in opts.value_points.iter().zip(&limit_values) {
                let e = estimate_value(&m.problem, *t, &StateVec::new(x.clone())?, &opts.value)?;
                let d = (e.value - base.value).abs();
                if d >= best.0 {
                    best = (d, (e.stderr.powi(2) + base.stderr.powi(2)).sqrt());
                }
            }
            (Some(best.0), Some(best.1))
        };
        rows.push(StabilityRow {
            eps: m.eps,
            coefficient_gap: gap,
            max_residual,
            max_touch_violation,
            member_touch_passed,
            value_gap,
            value_gap_stderr,
        });
    }
    let (value_gap_monotone, final_gap_within_3se) = if opts.value_points.is_empty() {
        (None, None)
    } else {
        let g: Vec<f64> = rows.iter().filter_map(|r| r.value_gap).collect();
        let last = rows.last().expect("non-empty family");
        (
            Some(g.windows(2).all(|w| w[1] < w[0])),
            Some(last.value_gap.unwrap_or(f64::INFINITY) < 3.0 * last.value_gap_stderr.unwrap_or(0.0)),
        )
    };
    let passed = rows.iter().all(|r| r.member_touch_passed != Some(false))
        && value_gap_monotone != Some(false)
        && final_gap_within_3se != Some(false);
    Ok(StabilityReport {
        rows,
        aborted: None,
        value_gap_monotone,
        final_gap_within_3se,
        passed,
    })
}
