use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hjblab::experiment::{exit_code, replay, run, ExperimentConfig, Module, RunManifest, RunOptions};
use hjblab::Result;

#[derive(Parser)]
#[command(name = "hjblab", version, about = "Stochastic control experiments on spectral Galerkin models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (or HJBLAB_OUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (or HJBLAB_WORKERS); results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Must match the config seed when both are given.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    Simulate(RunArgs),
    Bsde(RunArgs),
    Value(RunArgs),
    DppCheck(RunArgs),
    BpSolve(RunArgs),
    VerifyAssumptions(RunArgs),
    Residual(RunArgs),
    TouchCheck(RunArgs),
    Stability(RunArgs),
    Regularity(RunArgs),
    Yosida(RunArgs),
    /// Re-run a recorded experiment and require byte-identical data files.
    Replay {
        manifest: PathBuf,
        /// Defaults to `<run dir>/replay`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn execute(module: Module, a: RunArgs) -> Result<RunManifest> {
    let cfg = ExperimentConfig::load(&a.config, Some(module), a.seed)?;
    let opts = RunOptions::resolve(a.out, a.workers)?;
    run(&cfg, &opts)
}

fn report(result: &Result<RunManifest>) {
    match result {
        Ok(m) => {
            for c in &m.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if !m.passed {
                eprintln!("failing checks: {}", m.failing.join(", "));
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => execute(Module::Simulate, a),
        Command::Bsde(a) => execute(Module::Bsde, a),
        Command::Value(a) => execute(Module::Value, a),
        Command::DppCheck(a) => execute(Module::DppCheck, a),
        Command::BpSolve(a) => execute(Module::BpSolve, a),
        Command::VerifyAssumptions(a) => execute(Module::VerifyAssumptions, a),
        Command::Residual(a) => execute(Module::Residual, a),
        Command::TouchCheck(a) => execute(Module::TouchCheck, a),
        Command::Stability(a) => execute(Module::Stability, a),
        Command::Regularity(a) => execute(Module::Regularity, a),
        Command::Yosida(a) => execute(Module::Yosida, a),
        Command::Replay {
            manifest,
            out,
            workers,
            seed,
        } => {
            let workers = RunOptions::resolve(Some(PathBuf::new()), workers).map(|o| o.workers);
            workers.and_then(|w| replay(&manifest, out, w, seed))
        }
    };
    report(&result);
    ExitCode::from(exit_code(&result) as u8)
}
