//! Runs a configured experiment into a directory, then replays it with a
//! different worker count and requires identical data files.

use hjblab::experiment::{replay, run, ExperimentConfig, Module, RunOptions};

fn main() -> hjblab::Result<()> {
    let cfg = ExperimentConfig::parse(
        r#"{"problem": {"preset": "lq"}, "seed": 7, "params": {"n_checks": 10, "bump_at": [0.4, [0.5]]}}"#,
        Some(Module::TouchCheck),
        None,
    )?;
    let dir = std::env::temp_dir().join("hjblab-experiment-run");
    let m = run(&cfg, &RunOptions { out_dir: dir.clone(), workers: 1 })?;
    println!("config hash {}", m.config_hash);
    for c in &m.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for o in &m.outputs {
        println!("  {:<16} {:>7} bytes", o.name, o.bytes);
    }
    let again = replay(&dir.join("manifest.json"), None, 4, None)?;
    println!("replay with 4 workers identical, passed {}", again.passed);
    Ok(())
}
