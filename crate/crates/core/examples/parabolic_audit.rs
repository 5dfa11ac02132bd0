//! Structural audit of the Galerkin presets: Lipschitz and growth bounds on
//! random probes plus the noise truncation tail.

use hjblab::library::{audit_preset, AuditOptions, ProblemSpec, SpdeSpec};

fn main() -> hjblab::Result<()> {
    let opts = AuditOptions::default();
    for spec in [
        ProblemSpec::Ou { rate: -1.0 },
        ProblemSpec::Parabolic(SpdeSpec::default()),
        ProblemSpec::Hyperbolic(SpdeSpec::default()),
    ] {
        let r = audit_preset(&spec, &opts)?;
        println!("{} (L = {:.3}): passed {}", r.problem, r.lip_const, r.passed);
        for c in &r.checks {
            println!("  {:<24} worst ratio {:.3}", c.name, c.worst_ratio);
        }
        if let Some(t) = &r.tail {
            for (n, v) in &t.ladder {
                println!("  tail N = {n:>3}: {v:.3e}");
            }
        }
    }
    Ok(())
}
