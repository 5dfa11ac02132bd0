//! Regression solve of the backward equation and the Lipschitz dependence of
//! `Y_0` on the initial state.

use hjblab::bsde::{solve_bsde, Terminal};
use hjblab::library::ou_preset;
use hjblab::regression::RegressionBasis;
use hjblab::simulate::simulate_see;
use hjblab::{ConstantPolicy, SimConfig, StateVec};

fn main() -> hjblab::Result<()> {
    let prob = ou_preset()?;
    let basis = RegressionBasis::default_for(1);
    let cfg = SimConfig::new(64, 4096, 41);
    let y0 = |x: f64| -> hjblab::Result<(f64, f64)> {
        let b = simulate_see(&prob, 0.0, &StateVec::new(vec![x])?, &ConstantPolicy(1), &cfg)?;
        let sol = solve_bsde(&b, &prob, &basis, Terminal::Phi)?;
        Ok((sol.y0(), sol.stderr()))
    };
    let (base, se) = y0(0.5)?;
    println!("Y_0(0.5) = {base:.5} (SE {se:.1e})");
    for d in [1e-1, 1e-2, 1e-3] {
        let (y, _) = y0(0.5 + d)?;
        println!("h = {d:.0e}  |Y_0(x+h) - Y_0(x)| / h = {:.4}", (y - base).abs() / d);
    }
    Ok(())
}
