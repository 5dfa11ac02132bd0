//! Exponential-Euler simulation of a controlled Ornstein–Uhlenbeck process,
//! with the moment and Itô checks on the resulting bundle.

use hjblab::gauge::GaugeParams;
use hjblab::library::ou_preset;
use hjblab::simulate::{check_ito_inequality, check_moment_bounds_with, simulate_see, MomentOptions};
use hjblab::{ConstantPolicy, SimConfig, StateVec};

fn main() -> hjblab::Result<()> {
    let prob = ou_preset()?;
    let x0 = StateVec::new(vec![1.0])?;
    let bundle = simulate_see(&prob, 0.0, &x0, &ConstantPolicy(1), &SimConfig::new(1024, 1024, 7))?;

    for step in [0, 256, 512, 1024] {
        let mean = (0..bundle.n_paths).map(|p| bundle.state(step, p)[0]).sum::<f64>() / bundle.n_paths as f64;
        println!("t = {:.3}  E X = {mean:+.4}", bundle.time(step));
    }

    for p in [2, 4] {
        let m = check_moment_bounds_with(&bundle, p, &x0, &MomentOptions::default())?;
        println!("p = {p}: sup E|X|^p = {:.4}, increment exponent {:?}", m.sup_moment, m.exponent);
    }

    let gauge = GaugeParams::new(0.0, StateVec::zeros(1), 4, prob.op.clone())?;
    let ito = check_ito_inequality(&bundle, &prob, &gauge)?;
    println!("Ito inequality: worst (LHS-RHS)/3SE = {:.3}, passed {}", ito.worst_ratio, ito.passed);
    Ok(())
}
