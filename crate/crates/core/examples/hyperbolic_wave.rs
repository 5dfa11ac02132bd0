//! Stochastic wave equation in energy coordinates: the generator is skew, so
//! the deterministic flow conserves the norm, and the Itô inequality holds
//! along the simulated paths.

use hjblab::gauge::GaugeParams;
use hjblab::library::{ProblemSpec, SpdeSpec};
use hjblab::simulate::{check_ito_inequality, simulate_see};
use hjblab::{ConstantPolicy, SimConfig, StateVec};

fn main() -> hjblab::Result<()> {
    let spec = SpdeSpec {
        modes: 8,
        ..SpdeSpec::default()
    };
    let prob = ProblemSpec::Hyperbolic(spec).build()?;
    let n = prob.dim();
    let x0 = StateVec::from((0..n).map(|i| 0.5 / (i + 1) as f64).collect::<Vec<f64>>());
    for t in [0.25, 0.5, 1.0] {
        println!("|e^(tA) x0| - |x0| at t = {t}: {:+.2e}", prob.op.semigroup_apply(t, &x0)?.norm() - x0.norm());
    }
    let b = simulate_see(&prob, 0.0, &x0, &ConstantPolicy(prob.controls.len() - 1), &SimConfig::new(32, 2048, 21))?;
    let g = GaugeParams::new(0.0, StateVec::zeros(n), 4, prob.op.clone())?;
    let r = check_ito_inequality(&b, &prob, &g)?;
    for k in (0..r.times.len()).step_by(8) {
        println!("t = {:.3}  LHS {:.4}  RHS {:.4}", r.times[k], r.lhs[k], r.rhs[k]);
    }
    println!("worst (LHS-RHS)/3SE {:.3}, passed {}", r.worst_ratio, r.passed);
    Ok(())
}
