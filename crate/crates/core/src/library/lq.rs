//! Linear-quadratic benchmark with a closed-form classical value functional.
//!
//! State `dX = (AX + a∘X + β)dt + s(u) dW` with `A = diag(λ)`,
//! `s(u) = scale·(s₀ + s₁u)`; running reward `−½Σ Q_i x_i² − r y + ηu − κu²`,
//! terminal reward `−½Σ G_i x_i²`. The control acts through the volatility,
//! so for `β = 0` the value is `V = −½Σ P_i(t) x_i² + c(t)` with
//!
//! `P_i' = (r − 2(λ_i + a_i))P_i − Q_i`, `P_i(T) = G_i`,
//! `c' = r c − max_u{−½ s(u)² ΣP_i + ηu − κu²}`, `c(T) = 0`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauge::Jet;
use crate::problem::{ControlProblem, FnDynamics};
use crate::spectral::{SpectralOperator, StateVec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LqSpec {
    pub rates: Vec<f64>,
    pub drift_gain: Vec<f64>,
    /// Constant drift `β`; the closed form requires zero.
    pub drift_shift: Vec<f64>,
    pub vol_base: f64,
    pub vol_gain: f64,
    pub vol_scale: f64,
    pub controls: Vec<f64>,
    pub state_weight: Vec<f64>,
    pub terminal_weight: Vec<f64>,
    pub discount: f64,
    pub control_reward: f64,
    pub control_cost: f64,
    pub horizon: f64,
    /// Radius of the state box on which the declared constant `L` holds.
    pub probe_radius: f64,
}

impl Default for LqSpec {
    fn default() -> Self {
        Self::scalar()
    }
}

impl LqSpec {
    /// One-dimensional benchmark; `u = ½` is optimal at every time.
    pub fn scalar() -> Self {
        Self {
            rates: vec![-1.0],
            drift_gain: vec![0.0],
            drift_shift: vec![0.0],
            vol_base: 0.2,
            vol_gain: 0.3,
            vol_scale: 1.0,
            controls: vec![0.0, 0.5, 1.0],
            state_weight: vec![2.0],
            terminal_weight: vec![1.2],
            discount: 0.1,
            control_reward: 0.122,
            control_cost: 0.0,
            horizon: 1.0,
            probe_radius: 4.0,
        }
    }

    /// Two-dimensional benchmark with the same per-mode data.
    pub fn planar() -> Self {
        Self {
            rates: vec![-1.0, -1.0],
            drift_gain: vec![0.0, 0.0],
            drift_shift: vec![0.0, 0.0],
            state_weight: vec![2.0, 2.0],
            terminal_weight: vec![1.2, 1.2],
            control_reward: 0.245,
            ..Self::scalar()
        }
    }

    pub fn dim(&self) -> usize {
        self.rates.len()
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || d > 2 {
            return Err(Error::Argument(format!("LQ benchmark supports 1 or 2 dimensions, got {d}")));
        }
        for (name, v) in [
            ("drift_gain", &self.drift_gain),
            ("drift_shift", &self.drift_shift),
            ("state_weight", &self.state_weight),
            ("terminal_weight", &self.terminal_weight),
        ] {
            if v.len() != d {
                return Err(Error::config(format!("lq.{name}"), format!("expected {d} entries, got {}", v.len())));
            }
        }
        for i in 0..d {
            if self.rates[i] + self.drift_gain[i] > 0.0 {
                return Err(Error::Argument(format!(
                    "mode {i} is not stabilizable: λ + a = {} > 0",
                    self.rates[i] + self.drift_gain[i]
                )));
            }
        }
        if self.controls.is_empty() {
            return Err(Error::Argument("control grid is empty".into()));
        }
        Ok(())
    }

    pub fn vol(&self, u: f64) -> f64 {
        self.vol_scale * (self.vol_base + self.vol_gain * u)
    }

    /// `−½ s(u)² S + ηu − κu²`
    fn control_value(&self, u: f64, s_sum: f64) -> f64 {
        -0.5 * self.vol(u).powi(2) * s_sum + self.control_reward * u - self.control_cost * u * u
    }

    /// Maximizer index (lowest on ties) and value of the control term.
    pub fn best_control(&self, s_sum: f64) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &u) in self.controls.iter().enumerate() {
            let v = self.control_value(u, s_sum);
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    }

    fn p_rate(&self, i: usize) -> f64 {
        self.discount - 2.0 * (self.rates[i] + self.drift_gain[i])
    }

    /// Declared Lipschitz/growth constant on the probe box.
    pub fn lip_const(&self) -> f64 {
        let r = self.probe_radius;
        let umax = self.controls.iter().fold(0.0f64, |a, u| a.max(u.abs()));
        let shift = self.drift_shift.iter().map(|b| b * b).sum::<f64>().sqrt();
        let mut l = self.discount.abs().max(self.vol(umax).abs()).max(self.vol(0.0).abs());
        for i in 0..self.dim() {
            l = l
                .max(self.drift_gain[i].abs() + shift)
                .max(self.state_weight[i].abs() * r)
                .max(self.terminal_weight[i].abs() * r);
        }
        l.max(self.control_reward.abs() * umax + self.control_cost.abs() * umax * umax)
    }
}

pub fn build_lq_problem(spec: &LqSpec) -> Result<ControlProblem> {
    spec.validate()?;
    let d = spec.dim();
    let op = SpectralOperator::diagonal(spec.rates.clone())?;
    let (a, beta) = (spec.drift_gain.clone(), spec.drift_shift.clone());
    let s = spec.clone();
    let s2 = spec.clone();
    let g = spec.terminal_weight.clone();
    let dynamics = FnDynamics::new(d, d)
        .drift(move |_, x, _| StateVec::from((0..x.dim()).map(|i| a[i] * x[i] + beta[i]).collect::<Vec<_>>()))
        .diffusion(move |_, _, u| DMatrix::identity(d, d) * s.vol(u))
        .running(move |_, x, y, _, u| {
            let quad: f64 = (0..x.dim()).map(|i| s2.state_weight[i] * x[i] * x[i]).sum();
            -0.5 * quad - s2.discount * y + s2.control_reward * u - s2.control_cost * u * u
        })
        .terminal(move |x| -0.5 * (0..x.dim()).map(|i| g[i] * x[i] * x[i]).sum::<f64>());
    ControlProblem::new(
        format!("lq{d}"),
        op,
        spec.controls.clone(),
        d,
        Arc::new(dynamics),
        spec.lip_const(),
        spec.horizon,
    )
}

/// Problem together with its closed-form value functional.
pub fn build_lq_benchmark(spec: &LqSpec) -> Result<(ControlProblem, LqClosedForm)> {
    let prob = build_lq_problem(spec)?;
    let closed = LqClosedForm::new(spec)?;
    Ok((prob, closed))
}

const GL_NODES: [f64; 4] = [0.1834346424956498, 0.5255324099163290, 0.7966664774136267, 0.9602898564975363];
const GL_WEIGHTS: [f64; 4] = [0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763];

fn gauss_legendre(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
    let mut acc = 0.0;
    for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
        acc += w * (f(m - h * x) + f(m + h * x));
    }
    acc * h
}

/// `V(t,x) = −½Σ P_i(t)x_i² + c(t)` with exponential `P_i` and `c` from
/// Gauss–Legendre quadrature of the discounted control term.
#[derive(Clone, Debug)]
pub struct LqClosedForm {
    spec: LqSpec,
    // c at the panel nodes k·T/K
    c_nodes: Vec<f64>,
}

const CLOSED_FORM_PANELS: usize = 1024;

impl LqClosedForm {
    pub fn new(spec: &LqSpec) -> Result<Self> {
        spec.validate()?;
        if spec.drift_shift.iter().any(|b| *b != 0.0) {
            return Err(Error::Capability("closed form requires zero drift shift".into()));
        }
        let mut cf = Self {
            spec: spec.clone(),
            c_nodes: vec![0.0; CLOSED_FORM_PANELS + 1],
        };
        let h = spec.horizon / CLOSED_FORM_PANELS as f64;
        for j in (0..CLOSED_FORM_PANELS).rev() {
            let (t0, t1) = (j as f64 * h, (j + 1) as f64 * h);
            cf.c_nodes[j] = (-spec.discount * (t1 - t0)).exp() * cf.c_nodes[j + 1] + cf.discounted_integral(t0, t1);
        }
        Ok(cf)
    }

    pub fn spec(&self) -> &LqSpec {
        &self.spec
    }

    pub fn p(&self, t: f64) -> Vec<f64> {
        let tau = self.spec.horizon - t;
        (0..self.spec.dim())
            .map(|i| {
                let k = self.spec.p_rate(i);
                let (q, g) = (self.spec.state_weight[i], self.spec.terminal_weight[i]);
                if k.abs() < 1e-12 {
                    g + q * tau
                } else {
                    q / k + (g - q / k) * (-k * tau).exp()
                }
            })
            .collect()
    }

    pub fn p_dot(&self, t: f64) -> Vec<f64> {
        self.p(t)
            .iter()
            .enumerate()
            .map(|(i, p)| self.spec.p_rate(i) * p - self.spec.state_weight[i])
            .collect()
    }

    fn s_sum(&self, t: f64) -> f64 {
        self.p(t).iter().sum()
    }

    /// `max_u{−½ s(u)² ΣP_i(t) + ηu − κu²}`
    pub fn control_term(&self, t: f64) -> f64 {
        self.spec.best_control(self.s_sum(t)).1
    }

    pub fn optimal_control_index(&self, t: f64) -> usize {
        self.spec.best_control(self.s_sum(t)).0
    }

    /// `∫_a^b e^{−r(s−a)} M(s) ds`, split where the maximizing control switches.
    fn discounted_integral(&self, a: f64, b: f64) -> f64 {
        let r = self.spec.discount;
        let (ua, ub) = (self.optimal_control_index(a), self.optimal_control_index(b));
        let f = |s: f64| (-r * (s - a)).exp() * self.control_term(s);
        if ua == ub {
            return gauss_legendre(a, b, f);
        }
        let (va, vb) = (self.spec.controls[ua], self.spec.controls[ub]);
        let gap = |s: f64| {
            let ss = self.s_sum(s);
            self.spec.control_value(va, ss) - self.spec.control_value(vb, ss)
        };
        let (mut lo, mut hi) = (a, b);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if gap(mid) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        gauss_legendre(a, lo, f) + gauss_legendre(lo, b, f)
    }

    pub fn c(&self, t: f64) -> f64 {
        let big_t = self.spec.horizon;
        let h = big_t / CLOSED_FORM_PANELS as f64;
        let t = t.clamp(0.0, big_t);
        let j = ((t / h).floor() as usize).min(CLOSED_FORM_PANELS - 1);
        let t1 = (j + 1) as f64 * h;
        (-self.spec.discount * (t1 - t)).exp() * self.c_nodes[j + 1] + self.discounted_integral(t, t1)
    }

    pub fn c_dot(&self, t: f64) -> f64 {
        self.spec.discount * self.c(t) - self.control_term(t)
    }

    pub fn value(&self, t: f64, x: &StateVec) -> f64 {
        let p = self.p(t);
        -0.5 * (0..p.len()).map(|i| p[i] * x[i] * x[i]).sum::<f64>() + self.c(t)
    }

    pub fn jet(&self, t: f64, x: &StateVec) -> Jet {
        let p = self.p(t);
        let pd = self.p_dot(t);
        let d = p.len();
        let c = self.c(t);
        Jet {
            value: -0.5 * (0..d).map(|i| p[i] * x[i] * x[i]).sum::<f64>() + c,
            dt: -0.5 * (0..d).map(|i| pd[i] * x[i] * x[i]).sum::<f64>() + self.spec.discount * c - self.control_term(t),
            grad: StateVec::from((0..d).map(|i| -p[i] * x[i]).collect::<Vec<_>>()),
            hess: DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(d, p.iter().map(|v| -v))),
        }
    }
}

/// `(P, c)` from backward RK4 with step `h`, splitting steps where the
/// maximizing control switches.
#[derive(Clone, Debug)]
pub struct RiccatiFlow {
    pub times: Vec<f64>,
    // per node: P_1..P_d, c
    pub states: Vec<Vec<f64>>,
}

impl RiccatiFlow {
    pub fn integrate(spec: &LqSpec, h: f64) -> Result<Self> {
        spec.validate()?;
        if !(h > 0.0) {
            return Err(Error::Argument("step must be positive".into()));
        }
        let d = spec.dim();
        let big_t = spec.horizon;
        let n = (big_t / h).ceil() as usize;
        let h = big_t / n as f64;
        let rhs = |y: &[f64], ui: usize| -> Vec<f64> {
            let mut out: Vec<f64> = (0..d).map(|i| spec.p_rate(i) * y[i] - spec.state_weight[i]).collect();
            let s: f64 = y[..d].iter().sum();
            out.push(spec.discount * y[d] - spec.control_value(spec.controls[ui], s));
            out
        };
        // one RK4 step of signed length `dt` (negative = backward)
        let rk4 = |y: &[f64], dt: f64, ui: usize| -> Vec<f64> {
            let add = |a: &[f64], b: &[f64], k: f64| a.iter().zip(b).map(|(x, y)| x + k * y).collect::<Vec<_>>();
            let k1 = rhs(y, ui);
            let k2 = rhs(&add(y, &k1, 0.5 * dt), ui);
            let k3 = rhs(&add(y, &k2, 0.5 * dt), ui);
            let k4 = rhs(&add(y, &k3, dt), ui);
            (0..y.len())
                .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect()
        };
        let best = |y: &[f64]| spec.best_control(y[..d].iter().sum()).0;

        let mut y: Vec<f64> = spec.terminal_weight.clone();
        y.push(0.0);
        let mut times = vec![big_t];
        let mut states = vec![y.clone()];
        for k in 0..n {
            let t = big_t - k as f64 * h;
            let ua = best(&y);
            let trial = rk4(&y, -h, ua);
            let ub = best(&trial);
            y = if ua == ub {
                trial
            } else {
                let (va, vb) = (spec.controls[ua], spec.controls[ub]);
                let gap = |z: &[f64]| {
                    let s: f64 = z[..d].iter().sum();
                    spec.control_value(va, s) - spec.control_value(vb, s)
                };
                let (mut lo, mut hi) = (0.0, h);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if gap(&rk4(&y, -mid, ua)) >= 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let ys = rk4(&y, -lo, ua);
                rk4(&ys, -(h - lo), ub)
            };
            times.push(t - h);
            states.push(y.clone());
        }
        times.reverse();
        states.reverse();
        *times.first_mut().unwrap() = 0.0;
        Ok(Self { times, states })
    }

    /// `(P, c)` at the grid node nearest to `t`.
    pub fn at(&self, t: f64) -> &[f64] {
        let h = self.times[1] - self.times[0];
        let j = ((t / h).round() as usize).min(self.times.len() - 1);
        &self.states[j]
    }
}
