//! Monte Carlo value function of the scalar linear-quadratic problem, compared
//! with its Riccati closed form, and one dynamic programming check.

use hjblab::library::{build_lq_benchmark, LqSpec};
use hjblab::value::{check_dpp, estimate_value, ValueConfig, DEFAULT_FIT_STATES};
use hjblab::StateVec;

fn main() -> hjblab::Result<()> {
    let (prob, closed_form) = build_lq_benchmark(&LqSpec::scalar())?;
    let cfg = ValueConfig {
        seed: 3,
        ..ValueConfig::default()
    };
    for x in [-1.0, 0.0, 0.5, 1.0] {
        let x = StateVec::new(vec![x])?;
        let v = estimate_value(&prob, 0.0, &x, &cfg)?;
        println!(
            "x = {:+.1}  V = {:.4} (SE {:.1e}, best {})  closed form {:.4}",
            x[0],
            v.value,
            v.stderr,
            v.argmax_policy,
            closed_form.value(0.0, &x)
        );
    }
    let r = check_dpp(&prob, 0.0, &StateVec::new(vec![0.5])?, prob.horizon / 2.0, &cfg, DEFAULT_FIT_STATES)?;
    println!("DPP: lhs {:.4} rhs {:.4} gap {:.2e} tolerance {:.2e} passed {}", r.lhs, r.rhs, r.gap, r.tolerance, r.passed);
    Ok(())
}
