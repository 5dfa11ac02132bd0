//! Configuration ingestion, dispatch to the numerical modules, output files
//! and run manifests.
//!
//! A configuration names a problem preset, a seed and the parameters of one
//! module. Every run writes its data files plus `config.json` (the canonical
//! configuration) and `manifest.json` into the output directory. Data files
//! depend only on the configuration, never on the worker count.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::borwein_preiss::{bp_maximize, verify_bp, DiscreteDomain, Objective, Selection};
use crate::bsde::{solve_bsde, Terminal};
use crate::error::{Error, Result};
use crate::gauge::GaugeParams;
use crate::io::{fmt_f64, write_json, write_jsonl};
use crate::library::{audit_preset, AuditOptions, LqClosedForm, LqSpec, ProblemSpec};
use crate::problem::{ConstantPolicy, ControlProblem};
use crate::regression::RegressionBasis;
use crate::simulate::{check_increments, check_ito_inequality, simulate_see, simulate_yosida, sup_distance_moment, SimConfig};
use crate::spectral::StateVec;
use crate::value::{check_dpp, estimate_value, probe_regularity, write_value_table, RegularityOptions, ValueConfig, DEFAULT_FIT_STATES};
use crate::viscosity::{
    bump_counterexample, generated_touch_checks, hjb_residual, stability_experiment, Bumped, CandidateSolution, ProbeBox,
    StabilityMember, StabilityOptions, TimeShifted, TouchSide, CLOSED_FORM_TOL, TOUCH_SCAN_TOL,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
pub const ENV_OUT_DIR: &str = "HJBLAB_OUT_DIR";
pub const ENV_WORKERS: &str = "HJBLAB_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Module {
    Simulate,
    Bsde,
    Value,
    DppCheck,
    BpSolve,
    VerifyAssumptions,
    Residual,
    TouchCheck,
    Stability,
    Regularity,
    Yosida,
}

impl Module {
    pub const ALL: [Module; 11] = [
        Module::Simulate,
        Module::Bsde,
        Module::Value,
        Module::DppCheck,
        Module::BpSolve,
        Module::VerifyAssumptions,
        Module::Residual,
        Module::TouchCheck,
        Module::Stability,
        Module::Regularity,
        Module::Yosida,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Module::Simulate => "simulate",
            Module::Bsde => "bsde",
            Module::Value => "value",
            Module::DppCheck => "dpp-check",
            Module::BpSolve => "bp-solve",
            Module::VerifyAssumptions => "verify-assumptions",
            Module::Residual => "residual",
            Module::TouchCheck => "touch-check",
            Module::Stability => "stability",
            Module::Regularity => "regularity",
            Module::Yosida => "yosida",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub t0: f64,
    /// Defaults to the origin.
    pub x0: Option<Vec<f64>>,
    pub n_steps: usize,
    pub n_paths: usize,
    /// Index into the control grid, held constant.
    pub control: usize,
    /// Itô inequality exponent; `None` skips the check.
    pub ito_power: Option<u32>,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            t0: 0.0,
            x0: None,
            n_steps: 64,
            n_paths: 256,
            control: 0,
            ito_power: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BsdeParams {
    pub t0: f64,
    pub x0: Option<Vec<f64>>,
    pub n_steps: usize,
    pub n_paths: usize,
    pub control: usize,
    pub basis: Option<RegressionBasis>,
}

impl Default for BsdeParams {
    fn default() -> Self {
        Self {
            t0: 0.0,
            x0: None,
            n_steps: 64,
            n_paths: 4096,
            control: 0,
            basis: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueParams {
    /// `(t, x)`; defaults to the origin at `t = 0`.
    pub points: Vec<(f64, Vec<f64>)>,
    pub value: ValueConfig,
}

impl Default for ValueParams {
    fn default() -> Self {
        Self {
            points: vec![],
            value: ValueConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DppParams {
    pub t: f64,
    pub x: Option<Vec<f64>>,
    /// Defaults to `(T − t)/2`.
    pub delta: Option<f64>,
    pub fit_states: usize,
    pub value: ValueConfig,
}

impl Default for DppParams {
    fn default() -> Self {
        Self {
            t: 0.0,
            x: None,
            delta: None,
            fit_states: DEFAULT_FIT_STATES,
            value: ValueConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSource {
    /// `t-index,x-index,value` rows; relative paths resolve against the config file.
    Csv(String),
    /// Values in `[time][state]` order.
    Values(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpParams {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub objective: ObjectiveSource,
    #[serde(default)]
    pub start: (usize, usize),
    #[serde(default = "one")]
    pub eps: f64,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub selection: Selection,
}

fn one() -> f64 {
    1.0
}

fn default_deltas() -> Vec<f64> {
    vec![1.0]
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditParams {
    pub audit: AuditOptions,
}

/// Candidates built from the LQ closed form.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum CandidateSpec {
    #[default]
    ClosedForm,
    TimeShifted {
        eps: f64,
    },
    Bumped {
        center: Vec<f64>,
        height: f64,
        width: f64,
    },
}

impl CandidateSpec {
    fn build(&self, cf: LqClosedForm) -> Arc<dyn CandidateSolution> {
        let inner: Arc<dyn CandidateSolution> = Arc::new(cf);
        match self {
            CandidateSpec::ClosedForm => inner,
            CandidateSpec::TimeShifted { eps } => Arc::new(TimeShifted { inner, eps: *eps }),
            CandidateSpec::Bumped { center, height, width } => Arc::new(Bumped {
                inner,
                center: StateVec::from(center.clone()),
                height: *height,
                width: *width,
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualParams {
    pub candidate: CandidateSpec,
    /// Defaults to `[0, 0.95T] × [−2, 2]^d` with 7 points per axis.
    pub probe: Option<ProbeBox>,
    pub tolerance: f64,
}

impl Default for ResidualParams {
    fn default() -> Self {
        Self {
            candidate: CandidateSpec::ClosedForm,
            probe: None,
            tolerance: CLOSED_FORM_TOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TouchParams {
    pub candidate: CandidateSpec,
    pub probe: Option<ProbeBox>,
    pub n_checks: usize,
    pub tolerance: f64,
    /// Also run the bump counterexample at this `(t, x)`; it must fail.
    pub bump_at: Option<(f64, Vec<f64>)>,
}

impl Default for TouchParams {
    fn default() -> Self {
        Self {
            candidate: CandidateSpec::ClosedForm,
            probe: None,
            n_checks: 50,
            tolerance: TOUCH_SCAN_TOL,
            bump_at: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// Volatility scaled by `1 + ε`.
    VolScale,
    /// Drift shifted by `ε e₁`.
    DriftShift,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityParams {
    pub family: FamilyKind,
    pub eps: Vec<f64>,
    pub probe: Option<ProbeBox>,
    pub touch_checks: usize,
    pub value_points: Vec<(f64, Vec<f64>)>,
    pub value: ValueConfig,
}

impl Default for StabilityParams {
    fn default() -> Self {
        Self {
            family: FamilyKind::VolScale,
            eps: vec![1e-1, 1e-2, 1e-3],
            probe: None,
            touch_checks: 10,
            value_points: vec![],
            value: ValueConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularityParams {
    pub value: ValueConfig,
    pub options: RegularityOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct YosidaParams {
    pub mus: Vec<f64>,
    pub x0: Option<Vec<f64>>,
    pub n_steps: usize,
    pub n_paths: usize,
    pub control: usize,
    pub power: u32,
    /// Bound on the last rung.
    pub tolerance: f64,
}

impl Default for YosidaParams {
    fn default() -> Self {
        Self {
            mus: vec![1e1, 1e2, 1e3, 1e4],
            x0: None,
            n_steps: 64,
            n_paths: 4096,
            control: 0,
            power: 4,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Params {
    Simulate(SimulateParams),
    Bsde(BsdeParams),
    Value(ValueParams),
    Dpp(DppParams),
    Bp(BpParams),
    Audit(AuditParams),
    Residual(ResidualParams),
    Touch(TouchParams),
    Stability(StabilityParams),
    Regularity(RegularityParams),
    Yosida(YosidaParams),
}

/// A validated configuration with every default filled in.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub module: Module,
    pub problem: ProblemSpec,
    pub seed: u64,
    pub params: Params,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    module: Option<Module>,
    problem: ProblemSpec,
    seed: Option<u64>,
    #[serde(default = "empty_object")]
    params: serde_json::Value,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

fn typed<T: DeserializeOwned>(v: &serde_json::Value) -> Result<T> {
    serde_path_to_error::deserialize(v.clone())
        .map_err(|e| Error::config(format!("params.{}", e.path()), e.inner().to_string()))
}

fn parse_params(module: Module, v: &serde_json::Value) -> Result<Params> {
    Ok(match module {
        Module::Simulate => Params::Simulate(typed(v)?),
        Module::Bsde => Params::Bsde(typed(v)?),
        Module::Value => Params::Value(typed(v)?),
        Module::DppCheck => Params::Dpp(typed(v)?),
        Module::BpSolve => Params::Bp(typed(v)?),
        Module::VerifyAssumptions => Params::Audit(typed(v)?),
        Module::Residual => Params::Residual(typed(v)?),
        Module::TouchCheck => Params::Touch(typed(v)?),
        Module::Stability => Params::Stability(typed(v)?),
        Module::Regularity => Params::Regularity(typed(v)?),
        Module::Yosida => Params::Yosida(typed(v)?),
    })
}

impl ExperimentConfig {
    /// Parses configuration text. `module` and `seed` from the command line
    /// must agree with the file when both are present; a seed is required.
    pub fn parse(text: &str, module: Option<Module>, seed: Option<u64>) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "$".into() } else { path }, e.inner().to_string())
        })?;
        let module = match (raw.module, module) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::config("module", format!("config names {}, command is {}", a.name(), b.name())));
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err(Error::config("module", "no module selected")),
        };
        let seed = match (raw.seed, seed) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::config("seed", format!("config seed {a} differs from --seed {b}")));
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err(Error::config("seed", "a seed is required")),
        };
        let params = parse_params(module, &raw.params)?;
        Ok(Self {
            module,
            problem: raw.problem,
            seed,
            params,
        })
    }

    pub fn load(path: &Path, module: Option<Module>, seed: Option<u64>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        let mut cfg = Self::parse(&text, module, seed)?;
        // input files are pinned by absolute path so a replay from the run directory finds them
        if let Params::Bp(BpParams {
            objective: ObjectiveSource::Csv(f),
            ..
        }) = &mut cfg.params
        {
            let base = path.parent().unwrap_or(Path::new("."));
            let full = base.join(&*f);
            let full = full
                .canonicalize()
                .map_err(|e| Error::config("params.objective.csv", format!("{}: {e}", full.display())))?;
            *f = full.display().to_string();
        }
        Ok(cfg)
    }

    /// Key-sorted compact JSON of the configuration.
    pub fn canonical_json(&self) -> Result<String> {
        // serde_json::Map is a BTreeMap, so round-tripping through Value sorts keys
        Ok(serde_json::to_string(&serde_json::to_value(self)?)?)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.canonical_json()?.as_bytes())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    /// Absent for the manifest itself.
    pub sha256: Option<String>,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub module: Module,
    pub config_hash: String,
    pub seed: u64,
    pub workers: usize,
    pub started: String,
    pub finished: String,
    pub config_file: String,
    pub outputs: Vec<OutputFile>,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
    pub failing: Vec<String>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// `0` uses the rayon default.
    pub workers: usize,
}

impl RunOptions {
    /// Explicit values win over `HJBLAB_OUT_DIR` / `HJBLAB_WORKERS`.
    pub fn resolve(out_dir: Option<PathBuf>, workers: Option<usize>) -> Result<Self> {
        let out_dir = match out_dir {
            Some(d) => d,
            None => match std::env::var_os(ENV_OUT_DIR) {
                Some(d) => PathBuf::from(d),
                None => return Err(Error::config("--out", format!("no output directory (flag or {ENV_OUT_DIR})"))),
            },
        };
        let workers = match workers {
            Some(w) => w,
            None => match std::env::var(ENV_WORKERS) {
                Ok(w) => w
                    .parse()
                    .map_err(|_| Error::config(ENV_WORKERS, format!("not a worker count: {w}")))?,
                Err(_) => 0,
            },
        };
        Ok(Self { out_dir, workers })
    }
}

fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = fs::read(path)?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

fn list_outputs(dir: &Path) -> Result<Vec<OutputFile>> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != MANIFEST_FILE)
        .collect();
    names.sort();
    let mut out = Vec::with_capacity(names.len() + 1);
    for name in names {
        let (sha, bytes) = sha256_file(&dir.join(&name))?;
        out.push(OutputFile {
            name,
            sha256: Some(sha),
            bytes,
        });
    }
    out.push(OutputFile {
        name: MANIFEST_FILE.into(),
        sha256: None,
        bytes: 0,
    });
    Ok(out)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

/// Runs the configured module, writes its outputs, `config.json` and
/// `manifest.json`. Failing checks are reported in the manifest, not as errors.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    let started = now();
    fs::create_dir_all(&opts.out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    let checks = pool.install(|| dispatch(cfg, &opts.out_dir))?;
    fs::write(opts.out_dir.join(CONFIG_FILE), format!("{}\n", cfg.canonical_json()?))?;
    let failing: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        module: cfg.module,
        config_hash: cfg.hash()?,
        seed: cfg.seed,
        workers: pool.current_num_threads(),
        started,
        finished: now(),
        config_file: CONFIG_FILE.into(),
        outputs: list_outputs(&opts.out_dir)?,
        passed: failing.is_empty(),
        failing,
        checks,
    };
    write_json(&opts.out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn is_data_file(name: &str) -> bool {
    name.ends_with(".csv") || name.ends_with(".jsonl")
}

fn first_difference(a: &Path, b: &Path) -> String {
    match (fs::read_to_string(a), fs::read_to_string(b)) {
        (Ok(x), Ok(y)) => {
            let line = x.lines().zip(y.lines()).position(|(l, r)| l != r);
            match line {
                Some(i) => format!(
                    "line {}: {:?} vs {:?}",
                    i + 1,
                    x.lines().nth(i).unwrap_or(""),
                    y.lines().nth(i).unwrap_or("")
                ),
                None => format!("{} vs {} lines", x.lines().count(), y.lines().count()),
            }
        }
        _ => "unreadable".into(),
    }
}

/// Re-runs the configuration recorded next to `manifest_path` into `out_dir`
/// (default `<run dir>/replay`) and requires byte-identical CSV and JSONL
/// outputs. A `seed` different from the recorded one is refused.
pub fn replay(manifest_path: &Path, out_dir: Option<PathBuf>, workers: usize, seed: Option<u64>) -> Result<RunManifest> {
    let manifest = RunManifest::read(manifest_path)?;
    let run_dir = manifest_path.parent().unwrap_or(Path::new("."));
    let cfg = ExperimentConfig::load(&run_dir.join(&manifest.config_file), Some(manifest.module), None)?;
    let recorded = cfg.hash()?;
    if recorded != manifest.config_hash {
        return Err(Error::config(
            CONFIG_FILE,
            format!("config hash {recorded} does not match the manifest {}", manifest.config_hash),
        ));
    }
    let cfg = match seed {
        Some(s) if s != cfg.seed => {
            let changed = ExperimentConfig { seed: s, ..cfg };
            return Err(Error::config(
                "seed",
                format!("hash mismatch: seed {s} gives {} but the run recorded {}", changed.hash()?, manifest.config_hash),
            ));
        }
        _ => cfg,
    };
    let out_dir = out_dir.unwrap_or_else(|| run_dir.join("replay"));
    if out_dir.exists() {
        for f in &manifest.outputs {
            let p = out_dir.join(&f.name);
            if p.is_file() {
                fs::remove_file(p)?;
            }
        }
    }
    let fresh = run(
        &cfg,
        &RunOptions {
            out_dir: out_dir.clone(),
            workers,
        },
    )?;
    let mut drift = Vec::new();
    for f in manifest.outputs.iter().filter(|f| is_data_file(&f.name)) {
        let original = run_dir.join(&f.name);
        if original.is_file() && sha256_file(&original)?.0 != f.sha256.clone().unwrap_or_default() {
            drift.push(format!(
                "{}: edited since the run, {}",
                f.name,
                first_difference(&original, &out_dir.join(&f.name))
            ));
            continue;
        }
        let new = fresh.outputs.iter().find(|g| g.name == f.name);
        match new {
            None => drift.push(format!("{}: missing in replay", f.name)),
            Some(g) if g.sha256 != f.sha256 => drift.push(format!(
                "{}: {}",
                f.name,
                first_difference(&run_dir.join(&f.name), &out_dir.join(&f.name))
            )),
            _ => {}
        }
    }
    for g in fresh.outputs.iter().filter(|g| is_data_file(&g.name)) {
        if !manifest.outputs.iter().any(|f| f.name == g.name) {
            drift.push(format!("{}: not in the original run", g.name));
        }
    }
    if !drift.is_empty() {
        return Err(Error::Drift(drift.join("; ")));
    }
    Ok(fresh)
}

/// Process exit status: 0 pass, 1 check failure or replay drift, 2
/// configuration error, 3 numeric or other runtime error.
pub fn exit_code(result: &Result<RunManifest>) -> i32 {
    match result {
        Ok(m) if m.passed => 0,
        Ok(_) => 1,
        Err(Error::Drift(_)) => 1,
        Err(Error::Config { .. } | Error::Json(_) | Error::Argument(_)) => 2,
        Err(_) => 3,
    }
}

fn state_or_origin(x: &Option<Vec<f64>>, dim: usize) -> Result<StateVec> {
    match x {
        Some(v) => {
            crate::error::check_dim(dim, v.len())?;
            StateVec::new(v.clone())
        }
        None => Ok(StateVec::zeros(dim)),
    }
}

fn control_index(prob: &ControlProblem, i: usize) -> Result<ConstantPolicy> {
    if i >= prob.controls.len() {
        return Err(Error::config("params.control", format!("index {i} outside a grid of {}", prob.controls.len())));
    }
    Ok(ConstantPolicy(i))
}

fn lq_spec(cfg: &ExperimentConfig) -> Result<&LqSpec> {
    match &cfg.problem {
        ProblemSpec::Lq(s) => Ok(s),
        _ => Err(Error::config("problem.preset", format!("{} needs the lq preset", cfg.module.name()))),
    }
}

fn default_probe(prob: &ControlProblem, probe: &Option<ProbeBox>) -> ProbeBox {
    probe
        .clone()
        .unwrap_or_else(|| ProbeBox::cube(0.0, 0.95 * prob.horizon, prob.dim(), 2.0, 7))
}

fn csv_rows(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn x_header(prefix: &[&str], dim: usize, suffix: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    h.extend((1..=dim).map(|i| format!("x{i}")));
    h.extend(suffix.iter().map(|s| s.to_string()));
    h
}

fn dispatch(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<CheckOutcome>> {
    let prob = cfg.problem.build()?;
    match &cfg.params {
        Params::Simulate(p) => run_simulate(cfg, &prob, p, dir),
        Params::Bsde(p) => run_bsde(cfg, &prob, p, dir),
        Params::Value(p) => run_value(cfg, &prob, p, dir),
        Params::Dpp(p) => run_dpp(cfg, &prob, p, dir),
        Params::Bp(p) => run_bp(&prob, p, dir),
        Params::Audit(p) => {
            let report = audit_preset(&cfg.problem, &p.audit)?;
            write_json(&dir.join("audit.json"), &report)?;
            csv_rows(
                &dir.join("audit.csv"),
                &["check".into(), "worst_ratio".into(), "passed".into()],
                report
                    .checks
                    .iter()
                    .map(|c| vec![c.name.clone(), fmt_f64(c.worst_ratio), c.passed.to_string()]),
            )?;
            let mut checks: Vec<CheckOutcome> = report
                .checks
                .iter()
                .map(|c| CheckOutcome::new(&c.name, c.passed, format!("worst ratio {:.3e}", c.worst_ratio)))
                .collect();
            if let Some(t) = &report.tail {
                let last = t.ladder.last().map(|l| l.1).unwrap_or(0.0);
                checks.push(CheckOutcome::new("noise_tail", t.passed, format!("{last:.3e} vs {:.1e}", t.tolerance)));
            }
            Ok(checks)
        }
        Params::Residual(p) => run_residual(cfg, &prob, p, dir),
        Params::Touch(p) => run_touch(cfg, &prob, p, dir),
        Params::Stability(p) => run_stability(cfg, &prob, p, dir),
        Params::Regularity(p) => {
            let vc = ValueConfig {
                seed: cfg.seed,
                ..p.value.clone()
            };
            let r = probe_regularity(&prob, &vc, &p.options)?;
            write_json(&dir.join("regularity.json"), &r)?;
            let rows = r
                .lipschitz
                .iter()
                .map(|(d, v)| vec!["lipschitz".into(), fmt_f64(*d), fmt_f64(*v), String::new()])
                .chain(r.growth.iter().map(|(n, v)| vec!["growth".into(), fmt_f64(*n), fmt_f64(*v), String::new()]))
                .chain(r.time.iter().map(|(h, v, se)| vec!["time".into(), fmt_f64(*h), fmt_f64(*v), fmt_f64(*se)]));
            csv_rows(
                &dir.join("regularity.csv"),
                &["ladder".into(), "step".into(), "value".into(), "stderr".into()],
                rows,
            )?;
            Ok(vec![
                CheckOutcome::new("lipschitz", r.lipschitz_passed, format!("{:?}", r.lipschitz)),
                CheckOutcome::new("growth", r.growth_passed, format!("{:?}", r.growth)),
                CheckOutcome::new("time_exponent", r.time_passed, format!("{:?}", r.time_exponent)),
            ])
        }
        Params::Yosida(p) => run_yosida(cfg, &prob, p, dir),
    }
}

fn run_simulate(cfg: &ExperimentConfig, prob: &ControlProblem, p: &SimulateParams, dir: &Path) -> Result<Vec<CheckOutcome>> {
    let x0 = state_or_origin(&p.x0, prob.dim())?;
    let policy = control_index(prob, p.control)?;
    let bundle = simulate_see(prob, p.t0, &x0, &policy, &SimConfig::new(p.n_steps, p.n_paths, cfg.seed))?;
    bundle.write(dir, "sim", &prob.name)?;
    let inc = check_increments(&bundle);
    let mut checks = vec![CheckOutcome::new(
        "increments",
        inc.passed,
        format!("max |mean| {:.3e}, max rel var error {:.3e}", inc.max_abs_mean, inc.max_rel_var_error),
    )];
    if let ProblemSpec::Flow { .. } = cfg.problem {
        let mut worst: f64 = 0.0;
        for k in 0..=bundle.n_steps {
            let exact = prob.op.semigroup_apply(bundle.time(k) - p.t0, &x0)?;
            for path in 0..bundle.n_paths {
                worst = worst.max(bundle.state_vec(k, path).sub(&exact).norm());
            }
        }
        let tol = 1e-12 * (1.0 + x0.norm());
        checks.push(CheckOutcome::new("deterministic_flow", worst <= tol, format!("max deviation {worst:.3e}")));
    }
    if let Some(power) = p.ito_power {
        let gauge = GaugeParams::new(p.t0, StateVec::zeros(prob.dim()), power, prob.op.clone())?;
        let ito = check_ito_inequality(&bundle, prob, &gauge)?;
        write_json(&dir.join("ito.json"), &ito)?;
        checks.push(CheckOutcome::new("ito_inequality", ito.passed, format!("worst ratio {:.3}", ito.worst_ratio)));
    }
    Ok(checks)
}

fn run_bsde(cfg: &ExperimentConfig, prob: &ControlProblem, p: &BsdeParams, dir: &Path) -> Result<Vec<CheckOutcome>> {
    let x0 = state_or_origin(&p.x0, prob.dim())?;
    let policy = control_index(prob, p.control)?;
    let bundle = simulate_see(prob, p.t0, &x0, &policy, &SimConfig::new(p.n_steps, p.n_paths, cfg.seed))?;
    let basis = p.basis.unwrap_or_else(|| RegressionBasis::default_for(prob.dim()));
    basis.check(p.n_paths)?;
    let pair = solve_bsde(&bundle, prob, &basis, Terminal::Phi)?;
    pair.write_csv(&dir.join("bsde.csv"))?;
    let (y0, se) = (pair.y0(), pair.stderr());
    write_json(&dir.join("bsde.json"), &serde_json::json!({ "y0": y0, "stderr": se }))?;
    Ok(vec![CheckOutcome::new("finite", y0.is_finite() && se.is_finite(), format!("Y0 = {y0} ± {se}"))])
}

fn run_value(cfg: &ExperimentConfig, prob: &ControlProblem, p: &ValueParams, dir: &Path) -> Result<Vec<CheckOutcome>> {
    let vc = ValueConfig {
        seed: cfg.seed,
        ..p.value.clone()
    };
    let points = if p.points.is_empty() {
        vec![(0.0, vec![0.0; prob.dim()])]
    } else {
        p.points.clone()
    };
    let mut estimates = Vec::with_capacity(points.len());
    for (t, x) in &points {
        estimates.push(estimate_value(prob, *t, &StateVec::new(x.clone())?, &vc)?);
    }
    write_value_table(&dir.join("value.csv"), &estimates)?;
    write_jsonl(&dir.join("value.jsonl"), &estimates)?;
    let ok = estimates.iter().all(|e| e.value.is_finite() && e.stderr.is_finite());
    Ok(vec![CheckOutcome::new("finite", ok, format!("{} points", estimates.len()))])
}

fn run_dpp(cfg: &ExperimentConfig, prob: &ControlProblem, p: &DppParams, dir: &Path) -> Result<Vec<CheckOutcome>> {
    let vc = ValueConfig {
        seed: cfg.seed,
        ..p.value.clone()
    };
    let x = state_or_origin(&p.x, prob.dim())?;
    let delta = p.delta.unwrap_or((prob.horizon - p.t) / 2.0);
    let r = check_dpp(prob, p.t, &x, delta, &vc, p.fit_states)?;
    write_json(&dir.join("dpp.json"), &r)?;
    let ratio = r.gap / r.tolerance;
    csv_rows(
        &dir.join("dpp.csv"),
        &["t", "delta", "lhs", "lhs_stderr", "rhs", "rhs_stderr", "gap", "tolerance", "ratio"].map(String::from),
        [vec![
            fmt_f64(r.t),
            fmt_f64(r.delta),
            fmt_f64(r.lhs),
            fmt_f64(r.lhs_stderr),
            fmt_f64(r.rhs),
            fmt_f64(r.rhs_stderr),
            fmt_f64(r.gap),
            fmt_f64(r.tolerance),
            fmt_f64(ratio),
        ]],
    )?;
    Ok(vec![CheckOutcome::new("dpp", r.passed, format!("gap/tolerance {ratio:.3}"))])
}

fn run_bp(prob: &ControlProblem, p: &BpParams, dir: &Path) -> Result<Vec<CheckOutcome>> {
    let states = p
        .states
        .iter()
        .map(|s| StateVec::new(s.clone()))
        .collect::<Result<Vec<_>>>()?;
    let domain = DiscreteDomain::new(p.times.clone(), states, prob.op.clone())?;
    let f = match &p.objective {
        ObjectiveSource::Csv(path) => {
            let path = Path::new(path);
            if !path.is_file() {
                return Err(Error::config("params.objective.csv", format!("{} not found", path.display())));
            }
            Objective::read_csv(&domain, path)?
        }
        ObjectiveSource::Values(v) => Objective::from_values(&domain, v.clone())?,
    };
    let result = bp_maximize(&domain, &f, p.start, p.eps, &p.deltas, p.selection)?;
    let verification = verify_bp(&result, &f, &domain)?;
    write_json(&dir.join("bp_result.json"), &result)?;
    write_json(&dir.join("bp_verification.json"), &verification)?;
    let mut rows = Vec::new();
    for (ti, row) in result.perturbed_values.iter().enumerate() {
        for (xi, v) in row.iter().enumerate() {
            rows.push(vec![ti.to_string(), xi.to_string(), fmt_f64(f.get(ti, xi)), fmt_f64(*v)]);
        }
    }
    csv_rows(
        &dir.join("bp_perturbed.csv"),
        &["t_index", "x_index", "objective", "perturbed"].map(String::from),
        rows,
    )?;
    csv_rows(
        &dir.join("bp_anchors.csv"),
        &["i", "t_index", "x_index", "delta"].map(String::from),
        result
            .anchors
            .iter()
            .zip(&result.deltas)
            .enumerate()
            .map(|(i, (a, d))| vec![i.to_string(), a.t_index.to_string(), a.x_index.to_string(), fmt_f64(*d)]),
    )?;
    let mut checks: Vec<CheckOutcome> = ["i", "ii", "iii", "cauchy", "non_expansive"]
        .iter()
        .map(|c| {
            let v: Vec<&str> = verification
                .violations
                .iter()
                .filter(|v| v.condition == *c)
                .map(|v| v.detail.as_str())
                .collect();
            CheckOutcome::new(&format!("bp_{c}"), v.is_empty(), v.join("; "))
        })
        .collect();
    checks.push(CheckOutcome::new("bp_converged", result.converged, format!("{} iterations", result.iterations)));
    Ok(checks)
}

fn run_residual(cfg: &ExperimentConfig, prob: &ControlProblem, p: &ResidualParams, dir: &Path) -> Result<Vec<CheckOutcome>> {
    use rayon::prelude::*;
    let cand = p.candidate.build(LqClosedForm::new(lq_spec(cfg)?)?);
    let probe = default_probe(prob, &p.probe);
    let pts = probe.points();
    let res: Vec<f64> = pts
        .par_iter()
        .map(|(t, x)| hjb_residual(prob, cand.as_ref(), *t, x))
        .collect::<Result<_>>()?;
    csv_rows(
        &dir.join("residual.csv"),
        &x_header(&["t"], prob.dim(), &["residual"]),
        pts.iter().zip(&res).map(|((t, x), r)| {
            let mut row = vec![fmt_f64(*t)];
            row.extend(x.as_slice().iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(*r));
            row
        }),
    )?;
    let max = res.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    Ok(vec![CheckOutcome::new(
        "hjb_residual",
        max <= p.tolerance,
        format!("max |residual| {max:.3e} over {} points", pts.len()),
    )])
}

fn run_touch(cfg: &ExperimentConfig, prob: &ControlProblem, p: &TouchParams, dir: &Path) -> Result<Vec<CheckOutcome>> {
    let cf = LqClosedForm::new(lq_spec(cfg)?)?;
    let cand = p.candidate.build(cf.clone());
    let probe = default_probe(prob, &p.probe);
    let mut reports = generated_touch_checks(prob, cand, &probe, p.n_checks, cfg.seed, p.tolerance)?;
    let mut checks = Vec::new();
    for side in [TouchSide::Sub, TouchSide::Super] {
        let bad: Vec<&crate::viscosity::TouchReport> = reports.iter().filter(|r| r.side == side && !r.passed).collect();
        let name = match side {
            TouchSide::Sub => "touch_sub",
            TouchSide::Super => "touch_super",
        };
        checks.push(CheckOutcome::new(name, bad.is_empty(), format!("{} of {} failed", bad.len(), p.n_checks)));
    }
    if let Some((t, x)) = &p.bump_at {
        let r = bump_counterexample(prob, Arc::new(cf), *t, &StateVec::new(x.clone())?, &probe)?;
        checks.push(CheckOutcome::new(
            "bump_counterexample_fails",
            !r.passed,
            format!("sub inequality {:.4}", r.inequality_value),
        ));
        reports.push(r);
    }
    write_jsonl(&dir.join("touch.jsonl"), &reports)?;
    csv_rows(
        &dir.join("touch.csv"),
        &x_header(&["index", "side", "t"], prob.dim(), &["inequality", "passed"]),
        reports.iter().enumerate().map(|(i, r)| {
            let mut row = vec![i.to_string(), format!("{:?}", r.side).to_lowercase(), fmt_f64(r.t)];
            row.extend(r.x.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(r.inequality_value));
            row.push(r.passed.to_string());
            row
        }),
    )?;
    Ok(checks)
}

/// The family used by the stability module.
pub fn lq_family(spec: &LqSpec, kind: FamilyKind, eps: &[f64]) -> Result<Vec<StabilityMember>> {
    eps.iter()
        .map(|&e| {
            let member = match kind {
                FamilyKind::VolScale => LqSpec {
                    vol_scale: spec.vol_scale * (1.0 + e),
                    ..spec.clone()
                },
                FamilyKind::DriftShift => {
                    let mut shift = spec.drift_shift.clone();
                    shift[0] += e;
                    LqSpec {
                        drift_shift: shift,
                        ..spec.clone()
                    }
                }
            };
            let candidate: Option<Arc<dyn CandidateSolution>> = match kind {
                FamilyKind::VolScale => Some(Arc::new(LqClosedForm::new(&member)?)),
                FamilyKind::DriftShift => None,
            };
            Ok(StabilityMember {
                eps: e,
                problem: crate::library::lq::build_lq_problem(&member)?,
                candidate,
            })
        })
        .collect()
}

fn run_stability(cfg: &ExperimentConfig, prob: &ControlProblem, p: &StabilityParams, dir: &Path) -> Result<Vec<CheckOutcome>> {
    let spec = lq_spec(cfg)?;
    let family = lq_family(spec, p.family, &p.eps)?;
    let opts = StabilityOptions {
        probe: default_probe(prob, &p.probe),
        touch_checks: p.touch_checks,
        seed: cfg.seed,
        value_points: p.value_points.clone(),
        value: ValueConfig {
            seed: cfg.seed,
            ..p.value.clone()
        },
    };
    let limit: Arc<dyn CandidateSolution> = Arc::new(LqClosedForm::new(spec)?);
    let report = stability_experiment(prob, Some(limit), &family, &opts)?;
    report.write_csv(&dir.join("stability.csv"))?;
    write_json(&dir.join("stability.json"), &report)?;
    let mut checks = vec![CheckOutcome::new(
        "coefficients_converge",
        report.aborted.is_none(),
        report.aborted.clone().unwrap_or_default(),
    )];
    if let Some(m) = report.value_gap_monotone {
        checks.push(CheckOutcome::new("value_gap_monotone", m, ""));
    }
    if let Some(f) = report.final_gap_within_3se {
        checks.push(CheckOutcome::new("final_gap_within_3se", f, ""));
    }
    let touch_ok = report.rows.iter().all(|r| r.member_touch_passed != Some(false));
    checks.push(CheckOutcome::new("member_touch_checks", touch_ok, ""));
    Ok(checks)
}

fn run_yosida(cfg: &ExperimentConfig, prob: &ControlProblem, p: &YosidaParams, dir: &Path) -> Result<Vec<CheckOutcome>> {
    let x0 = state_or_origin(&p.x0, prob.dim())?;
    let policy = control_index(prob, p.control)?;
    let sim = SimConfig::new(p.n_steps, p.n_paths, cfg.seed);
    let base = simulate_see(prob, 0.0, &x0, &policy, &sim)?;
    let mut ladder = Vec::with_capacity(p.mus.len());
    for &mu in &p.mus {
        let approx = simulate_yosida(prob, mu, 0.0, &x0, &policy, &sim)?;
        let (m, se) = sup_distance_moment(&base, &approx, p.power)?;
        ladder.push((mu, m, se));
    }
    csv_rows(
        &dir.join("yosida.csv"),
        &["mu", "moment", "stderr"].map(String::from),
        ladder.iter().map(|(mu, m, se)| vec![fmt_f64(*mu), fmt_f64(*m), fmt_f64(*se)]),
    )?;
    let monotone = ladder.windows(2).all(|w| w[1].1 < w[0].1);
    let last = ladder.last().map(|l| l.1).unwrap_or(0.0);
    Ok(vec![
        CheckOutcome::new("monotone", monotone, format!("{:?}", ladder.iter().map(|l| l.1).collect::<Vec<_>>())),
        CheckOutcome::new("last_rung", last < p.tolerance, format!("{last:.3e} vs {:.1e}", p.tolerance)),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_errors_carry_json_paths() {
        let e = ExperimentConfig::parse(r#"{"problem":{"preset":"ou"},"seed":1,"params":{"n_paths":"x"}}"#, Some(Module::Simulate), None)
            .unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "params.n_paths"), "{e}");
        let e = ExperimentConfig::parse(r#"{"problem":{"preset":"ou"},"params":{}}"#, Some(Module::Simulate), None).unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "seed"));
        let e = ExperimentConfig::parse(r#"{"problem":{"preset":"ou"},"seed":1}"#, Some(Module::Simulate), Some(2)).unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "seed"));
        let e = ExperimentConfig::parse(r#"{"module":"bsde","problem":{"preset":"ou"},"seed":1}"#, Some(Module::Simulate), None)
            .unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "module"));
        let e = ExperimentConfig::parse(r#"{"problem":{"preset":"ou"},"seed":1,"params":{"bogus":1}}"#, Some(Module::Yosida), None)
            .unwrap_err();
        assert!(matches!(e, Error::Config { .. }));
    }

    #[test]
    fn hash_ignores_key_order_and_explicit_defaults() {
        let a = ExperimentConfig::parse(r#"{"seed":3,"problem":{"preset":"ou"}}"#, Some(Module::Simulate), None).unwrap();
        let b = ExperimentConfig::parse(
            r#"{"params":{"n_paths":256,"t0":0.0},"problem":{"rate":-1.0,"preset":"ou"},"seed":3}"#,
            Some(Module::Simulate),
            None,
        )
        .unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let c = ExperimentConfig { seed: 4, ..a.clone() };
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn every_module_parses_empty_params() {
        for m in Module::ALL {
            let text = if m == Module::BpSolve {
                r#"{"problem":{"preset":"ou"},"seed":0,"params":{"times":[0],"states":[[0]],"objective":{"values":[1]}}}"#
            } else {
                r#"{"problem":{"preset":"ou"},"seed":0}"#
            };
            let cfg = ExperimentConfig::parse(text, Some(m), None).unwrap();
            assert_eq!(cfg.module, m);
            let round: serde_json::Value = serde_json::from_str(&cfg.canonical_json().unwrap()).unwrap();
            assert_eq!(round["module"], m.name());
        }
    }

    #[test]
    fn exit_codes_follow_the_error_class() {
        assert_eq!(exit_code(&Err(Error::config("x", "y"))), 2);
        assert_eq!(exit_code(&Err(Error::Drift("d".into()))), 1);
        assert_eq!(
            exit_code(&Err(Error::Numeric {
                step: 0,
                path: 0,
                msg: String::new()
            })),
            3
        );
    }
}
