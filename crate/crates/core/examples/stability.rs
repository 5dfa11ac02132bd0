//! A family of linear-quadratic problems with volatility scaled by `1 + ε`
//! converges to the limit problem; value gaps shrink with `ε`.

use std::sync::Arc;

use hjblab::experiment::{lq_family, FamilyKind};
use hjblab::library::{build_lq_benchmark, LqSpec};
use hjblab::value::ValueConfig;
use hjblab::viscosity::{stability_experiment, ProbeBox, StabilityOptions};

fn main() -> hjblab::Result<()> {
    let spec = LqSpec::scalar();
    let (limit, cf) = build_lq_benchmark(&spec)?;
    let family = lq_family(&spec, FamilyKind::VolScale, &[1e-1, 1e-2, 1e-3])?;
    let opts = StabilityOptions {
        probe: ProbeBox::cube(0.0, 0.9, 1, 1.0, 9),
        touch_checks: 10,
        seed: 101,
        value_points: [-1.0, 0.0, 1.0].iter().map(|x| (0.0, vec![*x])).collect(),
        value: ValueConfig {
            seed: 101,
            ..ValueConfig::default()
        },
    };
    let r = stability_experiment(&limit, Some(Arc::new(cf)), &family, &opts)?;
    for row in &r.rows {
        println!(
            "eps {:.0e}: coefficient gap {:.2e}, residual {:.2e}, value gap {:?}",
            row.eps, row.coefficient_gap, row.max_residual, row.value_gap
        );
    }
    println!("monotone {:?}, passed {}", r.value_gap_monotone, r.passed);
    Ok(())
}
