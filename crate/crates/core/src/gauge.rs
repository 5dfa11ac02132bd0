//! Metric, gauge functional and the test-function machinery used by the
//! viscosity checks.
//!
//! The gauge `Υ((t,x),(s,y)) = |s−t|² + |x^A_{t,t∨s} − y^A_{s,t∨s}|⁴`
//! transports both states along the semigroup to the later of the two times
//! before comparing them. Test functions of the second kind are finite sums
//! `Σ h_i(s) g_i(s,x)` with non-negative time weights `h_i` and spatial parts
//! `g_i` that satisfy the Itô inequality: constants, `|x|^p`, and the
//! semigroup-shifted powers `|x − e^{(s−t_i)A} x_i|^p`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::spectral::{SpectralOperator, StateVec};

/// Default truncation of gauge series.
pub const DEFAULT_SERIES_TERMS: usize = 32;

/// Value and derivatives of a functional on `[0,T] × H_N` at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub value: f64,
    /// Time derivative (its meaning depends on the producer; see each type).
    pub dt: f64,
    pub grad: StateVec,
    pub hess: DMatrix<f64>,
}

impl Jet {
    pub fn constant(value: f64, dim: usize) -> Self {
        Jet {
            value,
            dt: 0.0,
            grad: StateVec::zeros(dim),
            hess: DMatrix::zeros(dim, dim),
        }
    }

    fn accumulate(&mut self, k: f64, other: &Jet) {
        self.value += k * other.value;
        self.dt += k * other.dt;
        self.grad.axpy(k, &other.grad);
        self.hess += &other.hess * k;
    }
}

/// `d((t,x),(s,y)) = |s−t| + |x−y|`.
pub fn metric_d(p1: (f64, &StateVec), p2: (f64, &StateVec)) -> Result<f64> {
    check_dim(p1.1.dim(), p2.1.dim())?;
    Ok((p1.0 - p2.0).abs() + p1.1.sub(p2.1).norm())
}

/// The gauge functional `Υ`; symmetric, zero exactly on the diagonal.
pub fn upsilon(p1: (f64, &StateVec), p2: (f64, &StateVec), op: &SpectralOperator) -> Result<f64> {
    let (t, x) = p1;
    let (s, y) = p2;
    check_dim(x.dim(), y.dim())?;
    let r = t.max(s);
    let xa = op.semigroup_apply(r - t, x)?;
    let ya = op.semigroup_apply(r - s, y)?;
    Ok((s - t).powi(2) + xa.sub(&ya).norm_sq().powi(2))
}

/// Anchor and exponent of the shifted norm functional
/// `g(t,x) = |x − e^{(t−t̂)A} ŷ|^p` on `t ≥ t̂`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeParams {
    pub anchor_time: f64,
    pub anchor_state: StateVec,
    pub power: u32,
    pub op: SpectralOperator,
}

impl GaugeParams {
    pub fn new(anchor_time: f64, anchor_state: StateVec, power: u32, op: SpectralOperator) -> Result<Self> {
        if power < 2 || power % 2 != 0 {
            return Err(Error::Argument(format!(
                "gauge power must be a positive even integer, got {power}"
            )));
        }
        check_dim(op.dim(), anchor_state.dim())?;
        Ok(Self {
            anchor_time,
            anchor_state,
            power,
            op,
        })
    }

    /// The anchor orbit point `e^{(t−t̂)A} ŷ`.
    pub fn orbit(&self, t: f64) -> Result<StateVec> {
        if t < self.anchor_time {
            return Err(Error::Domain(format!(
                "time {t} precedes the gauge anchor time {}",
                self.anchor_time
            )));
        }
        self.op.semigroup_apply(t - self.anchor_time, &self.anchor_state)
    }
}

/// Value, gradient, Hessian and time derivative of `|x − e^{(t−t̂)A} ŷ|^p`.
///
/// `dt` is the full partial time derivative `−p|x̂|^{p−2}⟨x̂, A e^{(t−t̂)A}ŷ⟩`.
pub fn gauge_g_eval(params: &GaugeParams, t: f64, x: &StateVec) -> Result<Jet> {
    check_dim(params.op.dim(), x.dim())?;
    let orbit = params.orbit(t)?;
    let xh = x.sub(&orbit);
    let drift = params.op.apply(&orbit)?;
    Ok(power_jet(&xh, params.power, xh.dot(&drift)))
}

/// Jet of `|v|^p` in `x` where `v = x − a(t)`; `v_dot_da` is `⟨v, a'(t)⟩`.
fn power_jet(v: &StateVec, p: u32, v_dot_da: f64) -> Jet {
    let n = v.dim();
    let p_f = p as f64;
    let r2 = v.norm_sq();
    let half = (p / 2) as i32;
    let value = r2.powi(half);
    let c1 = p_f * r2.powi(half - 1);
    let grad = v.scale(c1);
    let mut hess = DMatrix::identity(n, n) * c1;
    if p >= 4 {
        let c2 = p_f * (p_f - 2.0) * r2.powi(half - 2);
        for i in 0..n {
            for j in 0..n {
                hess[(i, j)] += c2 * v[i] * v[j];
            }
        }
    }
    Jet {
        value,
        dt: -c1 * v_dot_da,
        grad,
        hess,
    }
}

/// Non-negative `C¹` time weight `h(s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeWeight {
    Constant { value: f64 },
    /// `value + slope (s − origin)`; the caller keeps it non-negative on the domain.
    Affine { value: f64, slope: f64, origin: f64 },
    /// `weight (s − center)²`.
    SquaredDistance { weight: f64, center: f64 },
}

impl TimeWeight {
    pub fn eval(&self, s: f64) -> (f64, f64) {
        match *self {
            TimeWeight::Constant { value } => (value, 0.0),
            TimeWeight::Affine { value, slope, origin } => (value + slope * (s - origin), slope),
            TimeWeight::SquaredDistance { weight, center } => {
                (weight * (s - center).powi(2), 2.0 * weight * (s - center))
            }
        }
    }
}

/// Spatial factor `g_i` of a gauge term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GaugeBase {
    One,
    /// `|x|^p`
    NormPower { power: u32 },
    /// `|x − e^{(s−t_a)A} x_a|^p`
    Orbit {
        anchor_time: f64,
        anchor_state: StateVec,
        power: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeTerm {
    pub weight: TimeWeight,
    pub base: GaugeBase,
}

/// Evaluation of a gauge sum at one point.
#[derive(Clone, Debug)]
pub struct GaugeEval {
    /// `value`, gradient and Hessian of `g`; `dt` holds `∂_t^o g = Σ h_i' g_i`.
    pub jet: Jet,
    /// Full partial time derivative `Σ (h_i' g_i + h_i ∂_s g_i)`.
    pub dt_full: f64,
}

/// A finite sum `g(s,x) = Σ h_i(s) g_i(s,x)` on `[domain_start, T] × H_N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeSum {
    pub op: SpectralOperator,
    pub domain_start: f64,
    pub terms: Vec<GaugeTerm>,
}

impl GaugeSum {
    pub fn new(op: SpectralOperator, domain_start: f64, terms: Vec<GaugeTerm>) -> Result<Self> {
        for (i, term) in terms.iter().enumerate() {
            match &term.base {
                GaugeBase::One => {}
                GaugeBase::NormPower { power } => check_power(*power)?,
                GaugeBase::Orbit {
                    anchor_time,
                    anchor_state,
                    power,
                } => {
                    check_power(*power)?;
                    check_dim(op.dim(), anchor_state.dim())?;
                    if *anchor_time > domain_start {
                        return Err(Error::Argument(format!(
                            "term {i}: anchor time {anchor_time} is after the domain start {domain_start}"
                        )));
                    }
                }
            }
            let (h, _) = term.weight.eval(domain_start);
            if h < 0.0 {
                return Err(Error::Argument(format!("term {i}: negative time weight")));
            }
        }
        Ok(Self {
            op,
            domain_start,
            terms,
        })
    }

    pub fn zero(op: SpectralOperator, domain_start: f64) -> Self {
        Self {
            op,
            domain_start,
            terms: Vec::new(),
        }
    }

    /// `δ Υ((t_a,x_a),(s,x))` for `s ≥ t_a`, split into its two terms.
    pub fn upsilon_terms(delta: f64, anchor_time: f64, anchor_state: StateVec) -> [GaugeTerm; 2] {
        [
            GaugeTerm {
                weight: TimeWeight::SquaredDistance {
                    weight: delta,
                    center: anchor_time,
                },
                base: GaugeBase::One,
            },
            GaugeTerm {
                weight: TimeWeight::Constant { value: delta },
                base: GaugeBase::Orbit {
                    anchor_time,
                    anchor_state,
                    power: 4,
                },
            },
        ]
    }

    pub fn eval(&self, s: f64, x: &StateVec) -> Result<GaugeEval> {
        check_dim(self.op.dim(), x.dim())?;
        if s < self.domain_start {
            return Err(Error::Domain(format!(
                "time {s} precedes the domain start {}",
                self.domain_start
            )));
        }
        let n = x.dim();
        let mut jet = Jet::constant(0.0, n);
        let mut dt_full = 0.0;
        for term in &self.terms {
            let (h, dh) = term.weight.eval(s);
            let base = match &term.base {
                GaugeBase::One => Jet::constant(1.0, n),
                GaugeBase::NormPower { power } => power_jet(x, *power, 0.0),
                GaugeBase::Orbit {
                    anchor_time,
                    anchor_state,
                    power,
                } => {
                    let orbit = self.op.semigroup_apply(s - anchor_time, anchor_state)?;
                    let v = x.sub(&orbit);
                    let drift = self.op.apply(&orbit)?;
                    power_jet(&v, *power, v.dot(&drift))
                }
            };
            jet.value += h * base.value;
            jet.grad.axpy(h, &base.grad);
            jet.hess += &base.hess * h;
            jet.dt += dh * base.value;
            dt_full += dh * base.value + h * base.dt;
        }
        Ok(GaugeEval { jet, dt_full })
    }
}

fn check_power(p: u32) -> Result<()> {
    if p < 2 || p % 2 != 0 {
        Err(Error::Argument(format!("gauge power must be even and ≥ 2, got {p}")))
    } else {
        Ok(())
    }
}

/// Declarative description of a gauge series: weighted `Υ` anchors plus the
/// optional `|x|⁴` and `|x − ŷ^A|²` terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeSumSpec {
    pub weights: Vec<f64>,
    pub anchors: Vec<(f64, StateVec)>,
    #[serde(default)]
    pub quartic_weight: Option<TimeWeight>,
    /// `(δ, t̂, ŷ)` for `δ |x − e^{(s−t̂)A} ŷ|²`.
    #[serde(default)]
    pub shifted_square: Option<(f64, f64, StateVec)>,
}

impl GaugeSumSpec {
    /// Builds the truncated sum; anchors beyond `max_terms` are dropped.
    pub fn build(&self, op: &SpectralOperator, domain_start: f64, max_terms: usize) -> Result<GaugeSum> {
        if self.weights.len() != self.anchors.len() {
            return Err(Error::shape(self.anchors.len(), self.weights.len()));
        }
        let mut terms = Vec::new();
        if let Some(w) = &self.quartic_weight {
            terms.push(GaugeTerm {
                weight: w.clone(),
                base: GaugeBase::NormPower { power: 4 },
            });
        }
        if let Some((delta, t_hat, y_hat)) = &self.shifted_square {
            terms.push(GaugeTerm {
                weight: TimeWeight::Constant { value: *delta },
                base: GaugeBase::Orbit {
                    anchor_time: *t_hat,
                    anchor_state: y_hat.clone(),
                    power: 2,
                },
            });
        }
        for (&d, (t_i, x_i)) in self.weights.iter().zip(&self.anchors).take(max_terms) {
            if d < 0.0 {
                return Err(Error::Argument("gauge weights must be non-negative".into()));
            }
            terms.extend(GaugeSum::upsilon_terms(d, *t_i, x_i.clone()));
        }
        GaugeSum::new(op.clone(), domain_start, terms)
    }

    /// Upper bound for the dropped tail `Σ_{i>K} δ_i Υ` when every `Υ` on the
    /// test box is at most `max_gauge`.
    pub fn tail_bound(&self, max_terms: usize, max_gauge: f64) -> f64 {
        self.weights.iter().skip(max_terms).sum::<f64>() * max_gauge
    }
}

/// A smooth functional with time derivative, gradient and Hessian.
pub trait SmoothFunctional: Send + Sync {
    fn jet(&self, t: f64, x: &StateVec) -> Result<Jet>;
}

/// `φ ≡ c`.
#[derive(Clone, Debug)]
pub struct ConstantFunctional {
    pub value: f64,
    pub dim: usize,
}

impl SmoothFunctional for ConstantFunctional {
    fn jet(&self, _t: f64, x: &StateVec) -> Result<Jet> {
        check_dim(self.dim, x.dim())?;
        Ok(Jet::constant(self.value, self.dim))
    }
}

/// Pair `(φ, g)` of a smooth test function and a gauge sum.
#[derive(Clone)]
pub struct TestPair {
    pub phi: Arc<dyn SmoothFunctional>,
    pub g: GaugeSum,
    pub domain_start: f64,
}

/// Every quantity of the viscosity inequality at one point.
#[derive(Clone, Debug)]
pub struct TestPairEval {
    /// `(φ + g)(t,x)`
    pub value: f64,
    pub dt_phi: f64,
    /// `∂_t^o g = Σ h_i' g_i`
    pub dto_g: f64,
    /// `∇(φ + g)`
    pub grad: StateVec,
    /// `∇²(φ + g)`
    pub hess: DMatrix<f64>,
    /// `⟨A* ∇φ, x⟩`
    pub astar_pairing: f64,
}

impl TestPair {
    pub fn new(phi: Arc<dyn SmoothFunctional>, g: GaugeSum) -> Self {
        let domain_start = g.domain_start;
        Self { phi, g, domain_start }
    }

    pub fn eval(&self, t: f64, x: &StateVec) -> Result<TestPairEval> {
        if t < self.domain_start {
            return Err(Error::Domain(format!(
                "time {t} precedes the test pair domain start {}",
                self.domain_start
            )));
        }
        let phi = self.phi.jet(t, x)?;
        let g = self.g.eval(t, x)?;
        let astar_pairing = self.g.op.adjoint_pair(&phi.grad, x)?;
        let mut total = phi.clone();
        total.accumulate(1.0, &g.jet);
        Ok(TestPairEval {
            value: total.value,
            dt_phi: phi.dt,
            dto_g: g.jet.dt,
            grad: total.grad,
            hess: total.hess,
            astar_pairing,
        })
    }
}

/// Free-function form of [`TestPair::eval`].
pub fn testpair_eval(tp: &TestPair, t: f64, x: &StateVec) -> Result<TestPairEval> {
    tp.eval(t, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sv(v: &[f64]) -> StateVec {
        StateVec::new(v.to_vec()).unwrap()
    }

    fn op1() -> SpectralOperator {
        SpectralOperator::diagonal(vec![-1.0]).unwrap()
    }

    #[test]
    fn metric_examples() {
        let x = sv(&[1.0, 2.0]);
        assert_eq!(metric_d((0.3, &x), (0.3, &x)).unwrap(), 0.0);
        assert_eq!(metric_d((0.0, &sv(&[0.0])), (1.0, &sv(&[0.0]))).unwrap(), 1.0);
        assert_eq!(metric_d((0.0, &sv(&[3.0, 4.0])), (0.0, &sv(&[0.0, 0.0]))).unwrap(), 5.0);
        assert!(metric_d((0.0, &x), (0.0, &sv(&[1.0]))).is_err());
    }

    #[test]
    fn upsilon_examples() {
        let op = SpectralOperator::diagonal(vec![-1.0, -3.0]).unwrap();
        let (x, y) = (sv(&[1.0, 0.5]), sv(&[-0.2, 0.1]));
        let d = x.sub(&y).norm_sq().powi(2);
        assert_relative_eq!(upsilon((0.4, &x), (0.4, &y), &op).unwrap(), d, max_relative = 1e-15);
        assert_eq!(upsilon((0.4, &x), (0.4, &x), &op).unwrap(), 0.0);
        // e^{(1-0)A}[1] = e^{-1}; |e^{-1} - 0|^4 = e^{-4}
        let v = upsilon((0.0, &sv(&[1.0])), (1.0, &sv(&[0.0])), &op1()).unwrap();
        let oracle = 1.0 + (-1.0f64).exp().powi(4);
        assert_relative_eq!(v, oracle, max_relative = 1e-15);
        assert_relative_eq!(v, 1.0 + (-4.0f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn gauge_at_origin_anchor() {
        let op = SpectralOperator::diagonal(vec![-1.0, -2.0]).unwrap();
        let params = GaugeParams::new(0.0, StateVec::zeros(2), 4, op).unwrap();
        let x = sv(&[0.5, -1.5]);
        let j = gauge_g_eval(&params, 0.7, &x).unwrap();
        let r2 = x.norm_sq();
        assert_relative_eq!(j.value, r2 * r2);
        assert_relative_eq!(j.grad[0], 4.0 * r2 * x[0]);
        assert_relative_eq!(j.grad[1], 4.0 * r2 * x[1]);
        assert_eq!(j.dt, 0.0);
    }

    #[test]
    fn gauge_on_orbit_vanishes() {
        let op = SpectralOperator::diagonal(vec![-1.0, -2.0]).unwrap();
        let y = sv(&[1.0, 2.0]);
        let params = GaugeParams::new(0.2, y.clone(), 4, op.clone()).unwrap();
        let x = op.semigroup_apply(0.5, &y).unwrap();
        let j = gauge_g_eval(&params, 0.7, &x).unwrap();
        assert!(j.value.abs() < 1e-30);
        assert!(j.grad.norm() < 1e-20);
    }

    #[test]
    fn gauge_hand_value_and_fd_gradient() {
        let params = GaugeParams::new(0.0, sv(&[1.0]), 4, op1()).unwrap();
        let t = std::f64::consts::LN_2;
        let j = gauge_g_eval(&params, t, &sv(&[1.0])).unwrap();
        assert_relative_eq!(j.value, 0.0625, max_relative = 1e-14);
        let h = 1e-5;
        let f = |x: f64, t: f64| gauge_g_eval(&params, t, &sv(&[x])).unwrap().value;
        let fd = (f(1.0 + h, t) - f(1.0 - h, t)) / (2.0 * h);
        assert_relative_eq!(j.grad[0], fd, max_relative = 1e-8);
        let fd_t = (f(1.0, t + h) - f(1.0, t - h)) / (2.0 * h);
        assert_relative_eq!(j.dt, fd_t, max_relative = 1e-8);
    }

    #[test]
    fn gauge_domain_and_power_errors() {
        let params = GaugeParams::new(0.5, sv(&[1.0]), 4, op1()).unwrap();
        assert!(matches!(gauge_g_eval(&params, 0.4, &sv(&[1.0])), Err(Error::Domain(_))));
        assert!(GaugeParams::new(0.0, sv(&[1.0]), 3, op1()).is_err());
        assert!(GaugeParams::new(0.0, sv(&[1.0]), 0, op1()).is_err());
    }

    #[test]
    fn square_gauge_hessian_limit_at_zero() {
        let params = GaugeParams::new(0.0, StateVec::zeros(2), 2, SpectralOperator::diagonal(vec![-1.0, -1.0]).unwrap()).unwrap();
        let j = gauge_g_eval(&params, 0.0, &StateVec::zeros(2)).unwrap();
        assert_eq!(j.hess, DMatrix::identity(2, 2) * 2.0);
    }

    #[test]
    fn testpair_constant_phi_zero_g() {
        let op = op1();
        let tp = TestPair::new(
            Arc::new(ConstantFunctional { value: 3.0, dim: 1 }),
            GaugeSum::zero(op, 0.0),
        );
        let e = tp.eval(0.5, &sv(&[2.0])).unwrap();
        assert_eq!(e.value, 3.0);
        assert_eq!((e.dt_phi, e.dto_g, e.astar_pairing), (0.0, 0.0, 0.0));
        assert_eq!(e.grad.norm(), 0.0);
        assert!(tp.eval(-0.1, &sv(&[2.0])).is_err());
    }

    #[test]
    fn testpair_quartic_with_constant_weight() {
        let op = SpectralOperator::diagonal(vec![-1.0, -2.0]).unwrap();
        let g = GaugeSum::new(
            op,
            0.0,
            vec![GaugeTerm {
                weight: TimeWeight::Constant { value: 1.0 },
                base: GaugeBase::NormPower { power: 4 },
            }],
        )
        .unwrap();
        let tp = TestPair::new(Arc::new(ConstantFunctional { value: 0.0, dim: 2 }), g);
        let x = sv(&[0.3, -0.7]);
        let e = tp.eval(0.2, &x).unwrap();
        let r2 = x.norm_sq();
        assert_relative_eq!(e.grad[0], 4.0 * r2 * x[0], max_relative = 1e-14);
        assert_relative_eq!(e.grad[1], 4.0 * r2 * x[1], max_relative = 1e-14);
        assert_eq!(e.dto_g, 0.0);
    }

    #[test]
    fn upsilon_series_matches_direct_sum_and_fd() {
        let op = op1();
        let anchors = vec![(0.1, sv(&[0.4])), (0.3, sv(&[-0.6]))];
        let spec = GaugeSumSpec {
            weights: vec![0.5, 0.25],
            anchors: anchors.clone(),
            quartic_weight: None,
            shifted_square: None,
        };
        let g = spec.build(&op, 0.3, DEFAULT_SERIES_TERMS).unwrap();
        let (s, x) = (0.55, sv(&[0.2]));
        let direct: f64 = anchors
            .iter()
            .zip([0.5, 0.25])
            .map(|((t, a), d)| d * upsilon((*t, a), (s, &x), &op).unwrap())
            .sum();
        let e = g.eval(s, &x).unwrap();
        assert_relative_eq!(e.jet.value, direct, max_relative = 1e-14);
        let h = 1e-5;
        let f = |v: f64| g.eval(s, &sv(&[v])).unwrap().jet.value;
        let fd = (f(0.2 + h) - f(0.2 - h)) / (2.0 * h);
        assert!((e.jet.grad[0] - fd).abs() < 1e-6);
        // ∂_t^o collects only the time weights: Σ 2δ_i (s − t_i)
        let dto = 2.0 * 0.5 * (s - 0.1) + 2.0 * 0.25 * (s - 0.3);
        assert_relative_eq!(e.jet.dt, dto, max_relative = 1e-14);
        let fd_t = (g.eval(s + h, &x).unwrap().jet.value - g.eval(s - h, &x).unwrap().jet.value) / (2.0 * h);
        assert!((e.dt_full - fd_t).abs() < 1e-6);
    }

    #[test]
    fn gauge_spec_rejects_future_anchor() {
        let spec = GaugeSumSpec {
            weights: vec![1.0],
            anchors: vec![(0.5, sv(&[0.0]))],
            quartic_weight: None,
            shifted_square: None,
        };
        assert!(spec.build(&op1(), 0.2, 32).is_err());
        let geo = GaugeSumSpec {
            weights: (0..40).map(|i| 0.5f64.powi(i)).collect(),
            anchors: (0..40).map(|_| (0.0, sv(&[0.0]))).collect(),
            quartic_weight: None,
            shifted_square: None,
        };
        assert!(geo.tail_bound(32, 1.0) < 1e-9);
        assert_eq!(geo.build(&op1(), 0.0, 32).unwrap().terms.len(), 64);
    }

    proptest! {
        #[test]
        fn derivatives_match_central_differences(
            a in -1.0f64..1.0, b in -1.0f64..1.0,
            ya in -1.0f64..1.0, yb in -1.0f64..1.0,
            p in prop::sample::select(vec![2u32, 4, 6]),
            dt in 0.0f64..1.0,
        ) {
            let op = SpectralOperator::diagonal(vec![-1.0, -3.0]).unwrap();
            let params = GaugeParams::new(0.0, sv(&[ya, yb]), p, op).unwrap();
            let x = sv(&[a, b]);
            let j = gauge_g_eval(&params, dt, &x).unwrap();
            let h = 1e-5;
            for i in 0..2 {
                let mut xp = x.clone(); xp[i] += h;
                let mut xm = x.clone(); xm[i] -= h;
                let jp = gauge_g_eval(&params, dt, &xp).unwrap();
                let jm = gauge_g_eval(&params, dt, &xm).unwrap();
                let fd = (jp.value - jm.value) / (2.0 * h);
                prop_assert!((j.grad[i] - fd).abs() <= 1e-5 * (1.0 + fd.abs()));
                for k in 0..2 {
                    let fd2 = (jp.grad[k] - jm.grad[k]) / (2.0 * h);
                    prop_assert!((j.hess[(i, k)] - fd2).abs() <= 1e-5 * (1.0 + fd2.abs()));
                }
            }
        }

        #[test]
        fn upsilon_symmetric_and_vanishes_with_distance(
            t in 0.0f64..1.0, s in 0.0f64..1.0,
            x0 in -2.0f64..2.0, y0 in -2.0f64..2.0,
        ) {
            let op = op1();
            let (x, y) = (sv(&[x0]), sv(&[y0]));
            let u1 = upsilon((t, &x), (s, &y), &op).unwrap();
            let u2 = upsilon((s, &y), (t, &x), &op).unwrap();
            prop_assert!((u1 - u2).abs() <= 1e-14 * (1.0 + u1));
            prop_assert!(u1 >= 0.0);
            // shrinking d-distance drives Υ to zero
            let mut prev = f64::INFINITY;
            for k in 1..8 {
                let eps = 0.5f64.powi(2 * k);
                let z = sv(&[x0 + eps]);
                let u = upsilon((t + eps, &z), (t, &x), &op).unwrap();
                prop_assert!(u <= prev + 1e-15);
                prev = u;
            }
            prop_assert!(prev < 1e-6);
        }
    }
}
