use std::fs;
use std::path::Path;
use std::process::Command;

use hjblab::experiment::RunManifest;

fn hjblab(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_hjblab"))
        .args(args)
        .env_remove("HJBLAB_OUT_DIR")
        .env_remove("HJBLAB_WORKERS")
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn csv_column(path: &Path, col: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == col).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn flow_simulation_matches_the_deterministic_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "flow.json",
        r#"{"problem":{"preset":"flow","rates":[0,-1,-4]},"seed":5,"params":{"x0":[1,-2,0.5],"n_paths":4,"n_steps":10}}"#,
    );
    let out = tmp.path().join("run");
    let (code, stdout, _) = hjblab(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");
    let m = RunManifest::read(&out.join("manifest.json")).unwrap();
    assert!(m.passed);
    // x_i(t) = e^{λ_i t} x_i(0), independently of the noise
    let t = csv_column(&out.join("sim_paths.csv"), "t");
    for (i, (lam, x0)) in [(0.0, 1.0), (-1.0, -2.0), (-4.0, 0.5)].iter().enumerate() {
        let xs = csv_column(&out.join("sim_paths.csv"), &format!("x_{i}"));
        for (t, x) in t.iter().zip(&xs) {
            let want: f64 = x0 * f64::exp(lam * t);
            assert!((x - want).abs() <= 1e-14 * (1.0 + want.abs()), "{x} vs {want}");
        }
    }
}

#[test]
fn manifest_lists_every_output_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "t.json", r#"{"problem":{"preset":"lq"},"seed":2,"params":{"n_checks":5}}"#);
    let out = tmp.path().join("run");
    let (code, _, _) = hjblab(&["touch-check", "--config", &cfg, "--out", out.to_str().unwrap(), "--workers", "2"]);
    assert_eq!(code, 0);
    let m = RunManifest::read(&out.join("manifest.json")).unwrap();
    let mut listed: Vec<String> = m.outputs.iter().map(|o| o.name.clone()).collect();
    let mut present: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    listed.sort();
    present.sort();
    assert_eq!(listed, present);
    for o in m.outputs.iter().filter(|o| o.sha256.is_some()) {
        let bytes = fs::read(out.join(&o.name)).unwrap();
        assert_eq!(bytes.len() as u64, o.bytes);
    }
}

#[test]
fn replay_is_worker_independent_and_refuses_other_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "y.json",
        r#"{"problem":{"preset":"ou"},"seed":9,"params":{"x0":[1],"n_paths":512,"mus":[10,100]}}"#,
    );
    let out = tmp.path().join("run");
    let (code, _, _) = hjblab(&["yosida", "--config", &cfg, "--out", out.to_str().unwrap(), "--workers", "1"]);
    assert_eq!(code, 0);
    let manifest = out.join("manifest.json");
    let (code, _, err) = hjblab(&["replay", manifest.to_str().unwrap(), "--workers", "4"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(
        fs::read(out.join("yosida.csv")).unwrap(),
        fs::read(out.join("replay").join("yosida.csv")).unwrap()
    );
    let (code, _, err) = hjblab(&["replay", manifest.to_str().unwrap(), "--seed", "10"]);
    assert_eq!(code, 2);
    assert!(err.contains("hash mismatch"), "{err}");
}

#[test]
fn replay_reports_drift() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.json", r#"{"problem":{"preset":"ou"},"seed":1,"params":{"n_paths":16}}"#);
    let out = tmp.path().join("run");
    assert_eq!(hjblab(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]).0, 0);
    let paths = out.join("sim_paths.csv");
    let text = fs::read_to_string(&paths).unwrap();
    let edited = text.replacen("\n1,0,", "\n1,0,9", 1);
    assert_ne!(text, edited);
    fs::write(&paths, edited).unwrap();
    let (code, _, err) = hjblab(&["replay", out.join("manifest.json").to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("sim_paths.csv") && err.contains("line 3"), "{err}");
}

#[test]
fn config_errors_exit_with_two_and_name_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write(tmp.path(), "bad.json", r#"{"problem":{"preset":"ou"},"seed":1,"params":{"value":{"n_paths":"many"}}}"#);
    let (code, _, err) = hjblab(&["value", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("params.value.n_paths"), "{err}");
    let cfg = write(tmp.path(), "noseed.json", r#"{"problem":{"preset":"ou"}}"#);
    assert_eq!(hjblab(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]).0, 2);
    assert_eq!(hjblab(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "3"]).0, 0);
    let cfg = write(tmp.path(), "s.json", r#"{"problem":{"preset":"ou"},"seed":1}"#);
    assert_eq!(hjblab(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "2"]).0, 2);
    // residual needs a closed form
    assert_eq!(hjblab(&["residual", "--config", &cfg, "--out", out.to_str().unwrap()]).0, 2);
}

#[test]
fn failing_checks_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "r.json",
        r#"{"problem":{"preset":"lq"},"seed":1,"params":{"candidate":{"kind":"time_shifted","eps":0.01}}}"#,
    );
    let (code, stdout, err) = hjblab(&["residual", "--config", &cfg, "--out", tmp.path().join("run").to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(stdout.contains("FAIL hjb_residual") && err.contains("hjb_residual"));
}

#[test]
fn lq_dpp_run_records_a_gap_below_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "d.json",
        r#"{"problem":{"preset":"lq"},"seed":42,"params":{"x":[0.5],"value":{"n_paths":2048}}}"#,
    );
    let out = tmp.path().join("run");
    let (code, stdout, _) = hjblab(&["dpp-check", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");
    let ratio = csv_column(&out.join("dpp.csv"), "ratio")[0];
    assert!(ratio < 1.0);
    // the Monte Carlo value at (0, 0.5) against the Riccati closed form
    let (_, cf) = hjblab::library::build_lq_benchmark(&hjblab::library::LqSpec::scalar()).unwrap();
    let want = cf.value(0.0, &hjblab::StateVec::from(vec![0.5]));
    let lhs = csv_column(&out.join("dpp.csv"), "lhs")[0];
    let se = csv_column(&out.join("dpp.csv"), "lhs_stderr")[0];
    assert!((lhs - want).abs() <= 3.0 * se + 5.0 / 64.0, "{lhs} vs {want}");
}

#[test]
fn tabulated_bp_objective_is_verified_exhaustively() {
    let tmp = tempfile::tempdir().unwrap();
    let times = [0.0, 0.25, 0.5];
    let states = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let mut table = String::from("t_index,x_index,value\n");
    for (i, t) in times.iter().enumerate() {
        for (j, x) in states.iter().enumerate() {
            table.push_str(&format!("{i},{j},{}\n", -(x - 0.3f64).powi(2) - t));
        }
    }
    write(tmp.path(), "f.csv", &table);
    let cfg = write(
        tmp.path(),
        "bp.json",
        r#"{"problem":{"preset":"ou"},"seed":0,"params":{"times":[0,0.25,0.5],"states":[[-1],[-0.5],[0],[0.5],[1]],"objective":{"csv":"f.csv"},"start":[0,2],"eps":0.5}}"#,
    );
    let out = tmp.path().join("run");
    let (code, stdout, _) = hjblab(&["bp-solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");
    // the perturbed objective attains its strict maximum at the reported point
    let result: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("bp_result.json")).unwrap()).unwrap();
    let (ti, xi) = (
        result["maximizer"]["t_index"].as_u64().unwrap() as usize,
        result["maximizer"]["x_index"].as_u64().unwrap() as usize,
    );
    let perturbed = csv_column(&out.join("bp_perturbed.csv"), "perturbed");
    let best = perturbed[ti * states.len() + xi];
    for (k, v) in perturbed.iter().enumerate() {
        if k != ti * states.len() + xi {
            assert!(*v < best);
        }
    }
    // unperturbed the maximum sits at x = 0.5; the anchor at the start point
    // moves it to the start
    assert_eq!(result["anchors"][0]["x_index"], 2);
    assert_eq!((ti, xi), (0, 2));
}
