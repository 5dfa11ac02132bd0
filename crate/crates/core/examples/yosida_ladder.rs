//! Yosida approximations `X^μ` converge to the mild solution as `μ → ∞`.

use hjblab::library::ou_preset;
use hjblab::simulate::{simulate_see, simulate_yosida, sup_distance_moment};
use hjblab::{ConstantPolicy, SimConfig, StateVec};

fn main() -> hjblab::Result<()> {
    let prob = ou_preset()?;
    let x0 = StateVec::new(vec![1.0])?;
    let cfg = SimConfig::new(64, 4096, 11);
    let mild = simulate_see(&prob, 0.0, &x0, &ConstantPolicy(2), &cfg)?;
    for mu in [1e1, 1e2, 1e3, 1e4] {
        let y = simulate_yosida(&prob, mu, 0.0, &x0, &ConstantPolicy(2), &cfg)?;
        let (m, se) = sup_distance_moment(&mild, &y, 4)?;
        println!("mu = {mu:>7.0}  E sup|X - X^mu|^4 = {m:.3e} (SE {se:.1e})");
    }
    Ok(())
}
