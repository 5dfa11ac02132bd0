//! Acceptance criteria, run sequentially so the wall-clock budgets are not
//! distorted by other tests. Prints one line per criterion.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hjblab::borwein_preiss::{bp_maximize, verify_bp, DiscreteDomain, Objective, Selection};
use hjblab::bsde::{solve_bsde, Terminal};
use hjblab::experiment::{lq_family, run, ExperimentConfig, FamilyKind, Module, RunOptions};
use hjblab::gauge::GaugeParams;
use hjblab::library::{audit_preset, build_lq_benchmark, ou_preset, ou_with_rate, AuditOptions, LqSpec, ProblemSpec, SpdeSpec};
use hjblab::regression::RegressionBasis;
use hjblab::simulate::{check_ito_inequality, check_moment_bounds_with, simulate_see, simulate_yosida, sup_distance_moment, MomentOptions};
use hjblab::value::{check_dpp, probe_regularity, RegularityOptions, ValueConfig, DEFAULT_FIT_STATES};
use hjblab::viscosity::{
    bump_counterexample, generated_touch_checks, residual_scan, stability_experiment, CandidateSolution, ProbeBox, StabilityOptions,
    TouchSide, CLOSED_FORM_TOL, TOUCH_SCAN_TOL,
};
use hjblab::{ConstantPolicy, SimConfig, SpectralOperator, StateVec};

type Verdict = (bool, String);

// Written to the raw handle so the lines survive libtest's output capture.
fn report(line: String) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

struct Line {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
    secs: f64,
    budget: f64,
}

fn criterion(id: u32, name: &'static str, budget: f64, f: impl FnOnce() -> Verdict) -> Line {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f));
    let secs = start.elapsed().as_secs_f64();
    let (ok, detail) = match outcome {
        Ok(v) => v,
        Err(p) => (
            false,
            format!(
                "panicked: {}",
                p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
            ),
        ),
    };
    let line = Line {
        id,
        name,
        passed: ok && secs < budget,
        detail,
        secs,
        budget,
    };
    report(format!(
        "[{}] criterion {:>2} {:<28} {:>7.2}s / {:>4.0}s  {}",
        if line.passed { "PASS" } else { "FAIL" },
        line.id,
        line.name,
        line.secs,
        line.budget,
        line.detail
    ));
    line
}

fn sv(v: &[f64]) -> StateVec {
    StateVec::new(v.to_vec()).unwrap()
}

fn semigroup_contract() -> Verdict {
    let ops = [
        SpectralOperator::dirichlet_laplacian(16).unwrap(),
        SpectralOperator::wave((1..=8).map(|i| i as f64 * std::f64::consts::PI).collect()).unwrap(),
        SpectralOperator::oscillator(vec![-0.5, 0.0, -3.0], vec![2.0, 7.0, 0.5]).unwrap(),
        SpectralOperator::diagonal(vec![0.0, -1.0, -1e3]).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_growth, mut worst_law) = (f64::NEG_INFINITY, 0.0f64);
    for i in 0..1000 {
        let op = &ops[i % ops.len()];
        let x = StateVec::from((0..op.dim()).map(|_| rng.gen_range(-10.0..10.0)).collect::<Vec<f64>>());
        let (t, s) = (rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0));
        let xt = op.semigroup_apply(t, &x).unwrap();
        worst_growth = worst_growth.max(xt.norm() - x.norm());
        let two = op.semigroup_apply(s, &xt).unwrap();
        let one = op.semigroup_apply(s + t, &x).unwrap();
        worst_law = worst_law.max(two.sub(&one).norm() / one.norm().max(f64::MIN_POSITIVE));
    }
    (
        worst_growth <= 0.0 && worst_law <= 1e-12,
        format!("max(|e^tA x|-|x|) = {worst_growth:.2e}, semigroup law rel {worst_law:.2e}"),
    )
}

fn yosida() -> Verdict {
    let prob = ou_preset().unwrap();
    let x0 = sv(&[1.0]);
    let cfg = SimConfig::new(64, 4096, 11);
    let base = simulate_see(&prob, 0.0, &x0, &ConstantPolicy(2), &cfg).unwrap();
    let ladder: Vec<f64> = [1e1, 1e2, 1e3, 1e4]
        .iter()
        .map(|&mu| {
            let y = simulate_yosida(&prob, mu, 0.0, &x0, &ConstantPolicy(2), &cfg).unwrap();
            sup_distance_moment(&base, &y, 4).unwrap().0
        })
        .collect();
    let monotone = ladder.windows(2).all(|w| w[1] < w[0]);
    (monotone && ladder[3] < 1e-4, format!("E sup|X-X^mu|^4 = {ladder:?}"))
}

fn ito() -> Verdict {
    let spde = SpdeSpec::default();
    let cases: Vec<(&str, ProblemSpec)> = vec![
        ("parabolic", ProblemSpec::Parabolic(spde.clone())),
        ("hyperbolic", ProblemSpec::Hyperbolic(spde)),
        ("ou", ProblemSpec::Ou { rate: -1.0 }),
    ];
    let mut detail = Vec::new();
    let mut ok = true;
    for (name, spec) in cases {
        let prob = spec.build().unwrap();
        let n = prob.dim();
        let x0 = StateVec::from((0..n).map(|i| 0.5 / (i + 1) as f64).collect::<Vec<f64>>());
        let b = simulate_see(&prob, 0.0, &x0, &ConstantPolicy(prob.controls.len() - 1), &SimConfig::new(32, 2048, 21)).unwrap();
        let g = GaugeParams::new(0.0, StateVec::zeros(n), 4, prob.op.clone()).unwrap();
        let r = check_ito_inequality(&b, &prob, &g).unwrap();
        ok &= r.passed;
        detail.push(format!("{name} worst (LHS-RHS)/3SE {:.2}", r.worst_ratio));
    }
    // zero generator: the exponential step is the identity, equality case
    let prob = ou_with_rate(0.0).unwrap();
    let b = simulate_see(&prob, 0.0, &sv(&[0.3]), &ConstantPolicy(1), &SimConfig::new(32, 4096, 22)).unwrap();
    let g = GaugeParams::new(0.0, sv(&[0.0]), 4, prob.op.clone()).unwrap();
    let r = check_ito_inequality(&b, &prob, &g).unwrap();
    let worst_eq = (0..r.lhs.len())
        .map(|k| if r.stderr[k] > 0.0 { (r.lhs[k] - r.rhs[k]).abs() / (3.0 * r.stderr[k]) } else { 0.0 })
        .fold(0.0, f64::max);
    ok &= worst_eq < 1.0;
    detail.push(format!("lambda=0 max |LHS-RHS|/3SE {worst_eq:.2}"));
    (ok, detail.join("; "))
}

fn moment_scaling() -> Verdict {
    let prob = ou_preset().unwrap();
    let x0 = sv(&[1.0]);
    let b = simulate_see(&prob, 0.0, &x0, &ConstantPolicy(0), &SimConfig::new(1024, 4096, 31)).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for p in [2u32, 4] {
        let r = check_moment_bounds_with(&b, p, &x0, &MomentOptions::default()).unwrap();
        let a = r.exponent.unwrap_or(f64::NAN);
        ok &= a >= p as f64 / 2.0 - 0.1;
        detail.push(format!("p={p} exponent {a:.3}"));
    }
    (ok, detail.join(", "))
}

fn bsde_lipschitz() -> Verdict {
    let prob = ou_preset().unwrap();
    let basis = RegressionBasis::default_for(1);
    let cfg = SimConfig::new(64, 4096, 41);
    let y0 = |x: f64| {
        let b = simulate_see(&prob, 0.0, &sv(&[x]), &ConstantPolicy(1), &cfg).unwrap();
        solve_bsde(&b, &prob, &basis, Terminal::Phi).unwrap().y0()
    };
    let base = y0(0.5);
    let ratios: Vec<f64> = [1e-1, 1e-2, 1e-3].iter().map(|d| (y0(0.5 + d) - base).abs() / d).collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(l, h), r| (l.min(*r), h.max(*r)));
    (lo > 0.0 && hi / lo <= 2.0, format!("ratios {ratios:.4?}"))
}

fn dpp() -> Verdict {
    let (prob, _) = build_lq_benchmark(&LqSpec::scalar()).unwrap();
    let cfg = ValueConfig {
        seed: 51,
        ..ValueConfig::default()
    };
    let t = 0.0;
    let r = check_dpp(&prob, t, &sv(&[0.5]), (prob.horizon - t) / 2.0, &cfg, DEFAULT_FIT_STATES).unwrap();
    (r.passed, format!("|LHS-RHS| {:.2e} vs 3SE+5dt {:.2e}", r.gap, r.tolerance))
}

fn regularity() -> Verdict {
    let prob = ou_preset().unwrap();
    let cfg = ValueConfig {
        seed: 61,
        n_steps: 256,
        ..ValueConfig::default()
    };
    let opts = RegularityOptions {
        time_gaps: (0..5).map(|k| f64::powi(2.0, k - 8)).collect(),
        ..RegularityOptions::default()
    };
    let r = probe_regularity(&prob, &cfg, &opts).unwrap();
    let lip: Vec<f64> = r.lipschitz.iter().map(|l| l.1).collect();
    (
        r.passed,
        format!("lipschitz ratios {lip:.3?}, time exponent {:.3?}", r.time_exponent),
    )
}

fn riccati() -> Verdict {
    let (prob, cf) = build_lq_benchmark(&LqSpec::planar()).unwrap();
    let cf: Arc<dyn CandidateSolution> = Arc::new(cf);
    let probe = ProbeBox::cube(0.0, 0.95, 2, 2.0, 21);
    let res = residual_scan(&prob, cf.as_ref(), &probe, CLOSED_FORM_TOL).unwrap();
    let touch = generated_touch_checks(&prob, cf.clone(), &probe, 50, 81, TOUCH_SCAN_TOL).unwrap();
    let sub = touch.iter().filter(|r| r.side == TouchSide::Sub && r.passed).count();
    let sup = touch.iter().filter(|r| r.side == TouchSide::Super && r.passed).count();
    let bump = bump_counterexample(&prob, cf, 0.4, &sv(&[0.5, -0.25]), &probe).unwrap();
    (
        res.passed && res.points == 21 * 21 * 21 && sub == 50 && sup == 50 && !bump.passed,
        format!(
            "max residual {:.2e} on {} points, touch sub {sub}/50 super {sup}/50, bump sub value {:.3}",
            res.max_abs_residual, res.points, bump.inequality_value
        ),
    )
}

fn borwein_preiss() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut core = 0;
    let mut other = 0;
    let mut largest = 0;
    for k in 0..20 {
        let dim = rng.gen_range(1..=3);
        let nt = rng.gen_range(2..=20);
        let nx = rng.gen_range(10..=10_000 / nt);
        let mut eig: Vec<f64> = (0..dim).map(|_| -rng.gen_range(0.0..5.0)).collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        let op = SpectralOperator::diagonal(eig).unwrap();
        let mut times: Vec<f64> = (0..nt).map(|i| i as f64 / nt as f64 + rng.gen_range(0.0..0.5 / nt as f64)).collect();
        times.dedup();
        let states: Vec<StateVec> = (0..nx)
            .map(|_| StateVec::from((0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>()))
            .collect();
        let domain = DiscreteDomain::new(times, states, op).unwrap();
        largest = largest.max(domain.len());
        let values: Vec<f64> = (0..domain.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = Objective::from_values(&domain, values.clone()).unwrap();
        let eps = rng.gen_range(0.2..1.0);
        let sup = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = values.iter().position(|v| *v >= sup - eps).unwrap();
        let start = (start / domain.states.len(), start % domain.states.len());
        let selection = if k % 2 == 0 { Selection::ExactArgmax } else { Selection::FirstWithinSlack };
        let r = bp_maximize(&domain, &f, start, eps, &[rng.gen_range(0.5..2.0)], selection).unwrap();
        let v = verify_bp(&r, &f, &domain).unwrap();
        core += v.violations.iter().filter(|x| matches!(x.condition.as_str(), "i" | "ii" | "iii")).count();
        other += v.violations.len();
    }
    (
        core == 0,
        format!("violations of (i)-(iii): {core}, all violations {other}, largest domain {largest} points"),
    )
}

fn audits() -> Verdict {
    let opts = AuditOptions::default();
    let mut ok = true;
    let mut detail = Vec::new();
    for spec in [
        ProblemSpec::Ou { rate: -1.0 },
        ProblemSpec::Parabolic(SpdeSpec::default()),
        ProblemSpec::Hyperbolic(SpdeSpec::default()),
    ] {
        let r = audit_preset(&spec, &opts).unwrap();
        let checks_ok = r.checks.iter().all(|c| c.passed);
        ok &= checks_ok;
        let worst = r.checks.iter().map(|c| c.worst_ratio).fold(0.0, f64::max);
        let mut d = format!("{} worst ratio {worst:.3}", r.problem);
        if let Some(t) = &r.tail {
            let at16 = t.ladder.iter().find(|l| l.0 == 16).map(|l| l.1).unwrap_or(f64::INFINITY);
            ok &= at16 < 1e-6;
            d.push_str(&format!(" tail(16) {at16:.2e}"));
        }
        detail.push(d);
    }
    (ok, detail.join("; "))
}

fn stability() -> Verdict {
    let spec = LqSpec::scalar();
    let (limit, cf) = build_lq_benchmark(&spec).unwrap();
    let family = lq_family(&spec, FamilyKind::VolScale, &[1e-1, 1e-2, 1e-3]).unwrap();
    let value_points = [0.0, 0.5]
        .iter()
        .flat_map(|t| [-1.0, 0.0, 1.0].map(|x| (*t, vec![x])))
        .collect();
    let opts = StabilityOptions {
        probe: ProbeBox::cube(0.0, 0.9, 1, 1.0, 9),
        touch_checks: 10,
        seed: 101,
        value_points,
        value: ValueConfig {
            seed: 101,
            ..ValueConfig::default()
        },
    };
    let r = stability_experiment(&limit, Some(Arc::new(cf)), &family, &opts).unwrap();
    let gaps: Vec<String> = r
        .rows
        .iter()
        .map(|row| format!("{:.1e}: {:.2e} (SE {:.1e})", row.eps, row.value_gap.unwrap(), row.value_gap_stderr.unwrap()))
        .collect();
    (
        r.value_gap_monotone == Some(true) && r.final_gap_within_3se == Some(true),
        format!("sup gaps {}", gaps.join(", ")),
    )
}

fn data_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv" || x == "jsonl"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn replay_workers() -> Verdict {
    let configs = [
        (Module::Simulate, r#"{"problem":{"preset":"ou"},"seed":3,"params":{"x0":[1],"n_paths":512}}"#),
        (Module::Yosida, r#"{"problem":{"preset":"ou"},"seed":3,"params":{"x0":[1],"n_paths":1024}}"#),
        (Module::Bsde, r#"{"problem":{"preset":"parabolic","modes":4},"seed":3,"params":{"n_paths":1024,"n_steps":16}}"#),
        (Module::Value, r#"{"problem":{"preset":"lq"},"seed":3,"params":{"points":[[0,[0.5]],[0.5,[-1]]],"value":{"n_paths":1024}}}"#),
        (Module::TouchCheck, r#"{"problem":{"preset":"lq"},"seed":3,"params":{"bump_at":[0.4,[0.5]]}}"#),
    ];
    let tmp = tempfile::tempdir().unwrap();
    let mut files = 0;
    let mut diffs = Vec::new();
    for (module, text) in configs {
        let cfg = ExperimentConfig::parse(text, Some(module), None).unwrap();
        let mut outs = Vec::new();
        for workers in [1, 4] {
            let dir = tmp.path().join(format!("{}-{workers}", module.name()));
            run(&cfg, &RunOptions { out_dir: dir.clone(), workers }).unwrap();
            outs.push(data_files(&dir));
        }
        files += outs[0].len();
        if outs[0].is_empty() || outs[0] != outs[1] {
            diffs.push(module.name());
        }
    }
    (diffs.is_empty(), format!("{files} data files over 5 modules, differing: {diffs:?}"))
}

#[test]
fn acceptance() {
    let lines = vec![
        criterion(1, "semigroup contract", 1.0, semigroup_contract),
        criterion(2, "yosida convergence", 30.0, yosida),
        criterion(3, "ito inequality", 60.0, ito),
        criterion(4, "moment scaling", 30.0, moment_scaling),
        criterion(5, "bsde lipschitz", 30.0, bsde_lipschitz),
        criterion(6, "dynamic programming", 120.0, dpp),
        criterion(7, "value regularity", 120.0, regularity),
        criterion(8, "classical/viscosity", 60.0, riccati),
        criterion(9, "borwein-preiss", 10.0, borwein_preiss),
        criterion(10, "assumption audits", 5.0, audits),
        criterion(11, "stability", 180.0, stability),
        criterion(12, "replay determinism", 60.0, replay_workers),
    ];
    let failed: Vec<u32> = lines.iter().filter(|l| !l.passed).map(|l| l.id).collect();
    report(format!("acceptance: {} of {} criteria passed", lines.len() - failed.len(), lines.len()));
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
