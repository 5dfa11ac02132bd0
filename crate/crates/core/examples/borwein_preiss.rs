//! Smooth variational principle on a finite grid: perturb a noisy objective so
//! that it attains a strict maximum, then verify the conclusions exhaustively.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hjblab::borwein_preiss::{bp_maximize, verify_bp, DiscreteDomain, Objective, Selection};
use hjblab::{SpectralOperator, StateVec};

fn main() -> hjblab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let op = SpectralOperator::diagonal(vec![-1.0, -2.0])?;
    let times: Vec<f64> = (0..8).map(|i| i as f64 / 8.0).collect();
    let states: Vec<StateVec> = (0..200)
        .map(|_| StateVec::from(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]))
        .collect();
    let domain = DiscreteDomain::new(times, states, op)?;
    let n = domain.states.len();
    let values: Vec<f64> = (0..domain.len())
        .map(|p| (-domain.states[p % n].norm_sq() - domain.times[p / n]).exp() + 0.05 * rng.gen_range(-1.0..1.0))
        .collect();
    // any start within ε of the supremum will do
    let eps = 0.5;
    let sup = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let start = values.iter().position(|v| *v >= sup - eps).unwrap();
    let f = Objective::from_values(&domain, values)?;

    let r = bp_maximize(&domain, &f, (start / n, start % n), eps, &[1.0, 0.5, 0.25], Selection::ExactArgmax)?;
    println!(
        "maximizer t = {:.3}, x = {:?} after {} anchors",
        r.maximizer.t,
        r.maximizer.x.as_slice(),
        r.anchors.len()
    );
    let v = verify_bp(&r, &f, &domain)?;
    println!("verified: {} ({} violations)", v.passed, v.violations.len());
    Ok(())
}
