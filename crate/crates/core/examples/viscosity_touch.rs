//! The Riccati closed form of the planar linear-quadratic problem is a
//! classical solution; touching it from above and below with gauge test pairs
//! gives the viscosity inequalities, and a local bump breaks them.

use std::sync::Arc;

use hjblab::gauge::GaugeSum;
use hjblab::library::{build_lq_benchmark, LqSpec};
use hjblab::viscosity::{
    bump_counterexample, check_touch, residual_scan, touch_pair, CandidateSolution, ProbeBox, TouchSide, CLOSED_FORM_TOL,
    TOUCH_SCAN_TOL,
};
use hjblab::StateVec;

fn main() -> hjblab::Result<()> {
    let (prob, cf) = build_lq_benchmark(&LqSpec::planar())?;
    let w: Arc<dyn CandidateSolution> = Arc::new(cf);
    let probe = ProbeBox::cube(0.0, 0.95, 2, 2.0, 11);

    let res = residual_scan(&prob, w.as_ref(), &probe, CLOSED_FORM_TOL)?;
    println!("max |HJB residual| = {:.2e} over {} points", res.max_abs_residual, res.points);

    let (t, x) = (0.3, StateVec::new(vec![0.5, -0.5])?);
    for side in [TouchSide::Sub, TouchSide::Super] {
        let tp = touch_pair(w.clone(), GaugeSum::zero(prob.op.clone(), 0.0), t, &x, side, 1.0, &probe)?;
        let r = check_touch(&prob, w.as_ref(), &tp, t, &x, side, &probe, TOUCH_SCAN_TOL)?;
        println!("{side:?}: inequality value {:+.3e}, passed {}", r.inequality_value, r.passed);
    }

    let bump = bump_counterexample(&prob, w, 0.4, &StateVec::new(vec![0.5, -0.25])?, &probe)?;
    println!("bumped candidate: {:?} inequality value {:+.3}, passed {}", bump.side, bump.inequality_value, bump.passed);
    Ok(())
}
