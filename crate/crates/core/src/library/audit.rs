//! Probes of the standing assumptions: linear growth, Lipschitz continuity
//! in `(x, y, z)`, time continuity, and the noise truncation tail.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::reaction::ReactionSpec;
use super::sine::SineGrid;
use super::{ProblemSpec, SpdeSpec};
use crate::error::Result;
use crate::problem::ControlProblem;
use crate::rng;
use crate::spectral::StateVec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditOptions {
    pub n_probes: usize,
    /// Probe states are drawn with norm at most this radius.
    pub radius: f64,
    pub seed: u64,
    /// Threshold for the noise-truncation tail at the preset's mode count.
    pub tail_tolerance: f64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            n_probes: 64,
            radius: 2.0,
            seed: 7,
            tail_tolerance: 1e-6,
        }
    }
}

/// Worst observed ratio `observed / allowed` for one inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub name: String,
    pub worst_ratio: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    /// `(N, sup_u |(I − P_N)σ|²_HS)` at the zero field; gates `passed`.
    pub ladder: Vec<(usize, f64)>,
    /// The same at the worst of the random probe fields (reported only).
    pub probe_ladder: Vec<(usize, f64)>,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub problem: String,
    pub lip_const: f64,
    pub checks: Vec<AuditCheck>,
    pub tail: Option<TailReport>,
    pub passed: bool,
}

impl AuditReport {
    fn finish(mut self) -> Self {
        self.passed = self.checks.iter().all(|c| c.passed) && self.tail.as_ref().map_or(true, |t| t.passed);
        self
    }
}

struct Tracker {
    name: &'static str,
    worst: f64,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self { name, worst: 0.0 }
    }

    fn see(&mut self, observed: f64, allowed: f64) {
        let r = if observed.is_finite() { observed / allowed } else { f64::INFINITY };
        if r > self.worst || r.is_nan() {
            self.worst = if r.is_nan() { f64::INFINITY } else { r };
        }
    }

    fn check(self) -> AuditCheck {
        AuditCheck {
            name: self.name.into(),
            worst_ratio: self.worst,
            passed: self.worst <= 1.0,
        }
    }
}

fn random_state(rng: &mut impl Rng, dim: usize, radius: f64) -> StateVec {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
    let r = radius * rng.gen::<f64>();
    StateVec::from(v.into_iter().map(|a| a * r / n).collect::<Vec<_>>())
}

fn hs_norm(m: &nalgebra::DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Probe growth and Lipschitz bounds with the problem's declared `L` on
/// random states in a ball, at random times in `[0, T]`, for every control.
pub fn audit_assumptions(prob: &ControlProblem, opts: &AuditOptions) -> AuditReport {
    let mut rng = rng::stream(opts.seed, 0);
    let l = prob.lip_const;
    let n = prob.dim();
    let m = prob.noise_dim;
    let mut growth_b = Tracker::new("growth_b");
    let mut growth_sigma = Tracker::new("growth_sigma");
    let mut growth_q = Tracker::new("growth_q");
    let mut growth_phi = Tracker::new("growth_phi");
    let mut lip_b = Tracker::new("lipschitz_b");
    let mut lip_sigma = Tracker::new("lipschitz_sigma");
    let mut lip_qx = Tracker::new("lipschitz_q_x");
    let mut lip_qy = Tracker::new("lipschitz_q_y");
    let mut lip_qz = Tracker::new("lipschitz_q_z");
    let mut lip_phi = Tracker::new("lipschitz_phi");
    let mut cont_t = Tracker::new("continuity_t");
    let zero_z = vec![0.0; m];
    for _ in 0..opts.n_probes {
        let t = rng.gen::<f64>() * prob.horizon;
        let x = random_state(&mut rng, n, opts.radius);
        // partner within the ball
        let mut x2 = random_state(&mut rng, n, 0.25 * opts.radius);
        x2 = x.add(&x2);
        let r2 = x2.norm();
        if r2 > opts.radius {
            x2.scale(opts.radius / r2);
        }
        let dx = x.sub(&x2).norm().max(1e-300);
        let g = 1.0 + x.norm();
        let y = rng.gen_range(-2.0..2.0);
        let y2 = rng.gen_range(-2.0..2.0);
        let z: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z2: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dz = z.iter().zip(&z2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt().max(1e-300);
        let (phi, phi2) = (prob.phi(&x), prob.phi(&x2));
        growth_phi.see(phi.abs(), l * g);
        lip_phi.see((phi - phi2).abs(), l * dx);
        for &u in &prob.controls {
            let b = prob.b(t, &x, u);
            growth_b.see(b.norm(), l * g);
            lip_b.see(b.sub(&prob.b(t, &x2, u)).norm(), l * dx);
            let s = prob.sigma(t, &x, u);
            growth_sigma.see(hs_norm(&s), l * g);
            lip_sigma.see(hs_norm(&(&s - prob.sigma(t, &x2, u))), l * dx);
            let q0 = prob.q(t, &x, 0.0, &zero_z, u);
            growth_q.see(q0.abs(), l * g);
            let q = prob.q(t, &x, y, &z, u);
            lip_qx.see((q - prob.q(t, &x2, y, &z, u)).abs(), l * dx);
            lip_qy.see((q - prob.q(t, &x, y2, &z, u)).abs(), l * (y - y2).abs().max(1e-300));
            lip_qz.see((q - prob.q(t, &x, y, &z2, u)).abs(), l * dz);
            // a coarse modulus: h = 1e-6 may move the coefficients by at most 1e-3
            let h = 1e-6;
            let t2 = if t + h <= prob.horizon { t + h } else { t - h };
            let jump = prob
                .b(t2, &x, u)
                .sub(&b)
                .norm()
                .max(hs_norm(&(prob.sigma(t2, &x, u) - &s)))
                .max((prob.q(t2, &x, y, &z, u) - q).abs());
            cont_t.see(jump, 1e-3 * g);
        }
    }
    AuditReport {
        problem: prob.name.clone(),
        lip_const: l,
        checks: [
            growth_b, growth_sigma, growth_q, growth_phi, lip_b, lip_sigma, lip_qx, lip_qy, lip_qz, lip_phi, cont_t,
        ]
        .into_iter()
        .map(Tracker::check)
        .collect(),
        tail: None,
        passed: false,
    }
    .finish()
}

const TAIL_REFERENCE_MODES: usize = 64;
const TAIL_REFERENCE_INTERVALS: usize = 1024;

/// `|(I − P_N) σ(γ, u)|²_HS` for the full (untruncated) noise: the first
/// `TAIL_REFERENCE_MODES` noise directions by quadrature, the rest bounded
/// by `sup h² Σ q_k`.
pub fn noise_truncation_tail(
    spec: &ReactionSpec,
    q_exponent: f64,
    n: usize,
    field_coeffs: &[f64],
    u: f64,
) -> f64 {
    let grid = SineGrid::new(TAIL_REFERENCE_MODES, TAIL_REFERENCE_INTERVALS);
    let field = grid.synthesize(&field_coeffs[..field_coeffs.len().min(TAIL_REFERENCE_MODES)]);
    let h: Vec<f64> = grid.nodes.iter().zip(&field).map(|(&xi, &y)| (spec.h)(0.0, xi, y, u)).collect();
    let mut total = 0.0;
    for k in 0..TAIL_REFERENCE_MODES {
        let qk = ((k + 1) as f64).powf(-q_exponent);
        let hk: Vec<f64> = h.iter().zip(grid.mode(k)).map(|(a, b)| a * b).collect();
        let full = grid.weight * hk.iter().map(|v| v * v).sum::<f64>();
        let kept = grid.analyze(&hk, n).iter().map(|c| c * c).sum::<f64>();
        total += qk * (full - kept).max(0.0);
    }
    // Σ_{k>K} k^{-p} ≤ K^{1-p}/(p-1)
    let rest = super::qwiener::power_law_tail_bound(TAIL_REFERENCE_MODES, q_exponent);
    total + rest * spec.h_sup * spec.h_sup
}

/// Tail ladders over `N ∈ {1, 2, 4, …, modes}`, at the zero field and at
/// the worst of a few random probe fields.
pub fn tail_ladder(spec: &SpdeSpec, opts: &AuditOptions) -> Result<TailReport> {
    let reaction = spec.reaction.build()?;
    let mut rng = rng::stream(opts.seed, 1);
    let probes: Vec<Vec<f64>> = (0..4)
        .map(|_| random_state(&mut rng, spec.modes, opts.radius).into_vec())
        .collect();
    let mut ns = Vec::new();
    let mut n = 1;
    while n < spec.modes {
        ns.push(n);
        n *= 2;
    }
    ns.push(spec.modes);
    let worst = |fields: &[Vec<f64>], n: usize| {
        fields
            .iter()
            .flat_map(|p| spec.controls.iter().map(move |&u| (p, u)))
            .map(|(p, u)| noise_truncation_tail(&reaction, spec.q_exponent, n, p, u))
            .fold(0.0, f64::max)
    };
    let origin = [vec![0.0; spec.modes]];
    let ladder: Vec<(usize, f64)> = ns.iter().map(|&n| (n, worst(&origin, n))).collect();
    let probe_ladder: Vec<(usize, f64)> = ns.iter().map(|&n| (n, worst(&probes, n))).collect();
    let last = ladder.last().map_or(f64::INFINITY, |e| e.1);
    Ok(TailReport {
        ladder,
        probe_ladder,
        tolerance: opts.tail_tolerance,
        passed: last < opts.tail_tolerance,
    })
}

/// [`audit_assumptions`] on a preset, with the tail ladder for SPDE presets.
pub fn audit_preset(spec: &ProblemSpec, opts: &AuditOptions) -> Result<AuditReport> {
    let prob = spec.build()?;
    let mut opts = opts.clone();
    if let ProblemSpec::Lq(lq) = spec {
        opts.radius = opts.radius.min(lq.probe_radius);
    }
    let mut report = audit_assumptions(&prob, &opts);
    if let ProblemSpec::Parabolic(s) | ProblemSpec::Hyperbolic(s) = spec {
        report.tail = Some(tail_ladder(s, &opts)?);
    }
    Ok(report.finish())
}
