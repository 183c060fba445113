//! Command-line front end.
//!
//! Settings resolve in this order, first match wins: command-line flag,
//! JSON config file, `RIGIDREG_SEED` (seed only), built-in default.
//! Every command writes a manifest from which `replay` reproduces its
//! primary artifacts byte for byte.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::error::Error;
use crate::fen::load_checkpoint;
use crate::geom3d::ShapeKind;
use crate::trainer::{DatasetSpec, Registrar, TrainConfig};

pub use commands::{
    checkpoint_train_config, cloud_files, execute, state_from_checkpoint, BenchConfig, BenchReport,
    Invocation, MethodRow, RegisterOutput, ABLATION_CSV_NAME, ABLATION_JSON_NAME, CHECKPOINT_NAME,
    METRICS_NAME, NOISE_SWEEP_NAME, ROTATION_SWEEP_NAME, RUN_LOG_NAME,
};
pub use manifest::{
    sha256_file, version_string, Artifact, InputDigest, RunManifest, StageTiming, MANIFEST_NAME,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub const SEED_ENV: &str = "RIGIDREG_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "rigidreg",
    version,
    about = "Learned rigid point cloud registration"
)]
pub struct Cli {
    /// Worker threads for parallel stages; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides the config seed and RIGIDREG_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic shapes as XYZ files.
    Generate(GenerateArgs),
    /// Train the feature network on a directory of clouds.
    Train(TrainArgs),
    /// Register one source cloud onto a target cloud.
    Register(RegisterArgs),
    /// Metrics table plus rotation and noise sweeps on synthetic data.
    Bench(BenchArgs),
    /// Full method against every ablation on the same data and seed.
    Ablate(BenchArgs),
    /// Re-run a manifest and check its primary outputs are unchanged.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Shape kind, or `all` to cycle through every kind.
    #[arg(long, default_value = "all")]
    pub kind: String,
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Per-axis scale factors are drawn from [MIN, MAX].
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    pub scale_range: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags that override fields of the training configuration.
#[derive(Debug, Default, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub train_noise_sigma: Option<f64>,
    #[arg(long)]
    pub rotation_range: Option<f64>,
    #[arg(long)]
    pub k_groups: Option<usize>,
    #[arg(long, value_parser = parse_registrar)]
    pub registrar: Option<Registrar>,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.noise_sigma {
            cfg.noise_sigma = v;
        }
        if let Some(v) = self.train_noise_sigma {
            cfg.train_noise_sigma = Some(v);
        }
        if let Some(v) = self.rotation_range {
            cfg.rotation_range_deg = v;
        }
        if let Some(v) = self.k_groups {
            cfg.k_groups = v;
        }
        if let Some(v) = self.registrar {
            cfg.registrar = v;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON training configuration; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of .xyz / .ply training clouds.
    #[arg(long)]
    pub data: PathBuf,
    /// Continue from this checkpoint up to the configured epoch count.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Trained checkpoint; not needed with `--registrar icp`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub dst: PathBuf,
    #[arg(long, value_parser = parse_registrar)]
    pub registrar: Option<Registrar>,
    #[arg(long)]
    pub k_groups: Option<usize>,
    #[arg(long)]
    pub k_top: Option<usize>,
    /// Result JSON; the manifest is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// JSON recipe with `train`, `train_data`, `test_data`, `baselines`,
    /// `rotation_grid` and `noise_grid`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Fresh output directory for the re-run.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_registrar(s: &str) -> Result<Registrar, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown registrar `{s}` (expected consensus, full, topk or icp)"))
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration.
    Usage(String),
    /// The command started but failed.
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Parses a JSON config, naming the offending key on failure. Also returns
/// the raw document so callers can tell which keys were present.
pub fn load_config<C: DeserializeOwned>(path: &Path) -> Result<(C, serde_json::Value), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(Error::io(path, e)))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let cfg = serde_path_to_error::deserialize(&raw).map_err(|e| {
        usage(format!(
            "{}: key `{}`: {}",
            path.display(),
            e.path(),
            e.inner()
        ))
    })?;
    Ok((cfg, raw))
}

fn seed_from_env() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Flag, then config value, then environment, then zero.
fn resolve_seed(flag: Option<u64>, in_config: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag.or(in_config) {
        return Ok(s);
    }
    Ok(seed_from_env()?.unwrap_or(0))
}

fn json_seed(raw: &serde_json::Value, pointer: &str) -> Option<u64> {
    raw.pointer(pointer).and_then(serde_json::Value::as_u64)
}

fn train_config(path: Option<&Path>) -> Result<(TrainConfig, Option<u64>), CliError> {
    match path {
        Some(p) => {
            let (cfg, raw) = load_config::<TrainConfig>(p)?;
            Ok((cfg, json_seed(&raw, "/seed")))
        }
        None => Ok((TrainConfig::default(), None)),
    }
}

fn bench_config(path: Option<&Path>) -> Result<(BenchConfig, Option<u64>), CliError> {
    match path {
        Some(p) => {
            let (cfg, raw) = load_config::<BenchConfig>(p)?;
            Ok((cfg, json_seed(&raw, "/train/seed")))
        }
        None => Ok((BenchConfig::default(), None)),
    }
}

/// Turns parsed arguments into a fully resolved invocation and output directory.
pub fn resolve(cli: &Cli) -> Result<(Invocation, PathBuf), CliError> {
    match &cli.command {
        Command::Generate(a) => {
            let shapes = if a.kind == "all" {
                ShapeKind::ALL.to_vec()
            } else {
                vec![a.kind.parse::<ShapeKind>().map_err(usage)?]
            };
            let mut dataset = DatasetSpec {
                count: a.count,
                n_points: a.n,
                seed: resolve_seed(cli.seed, None)?,
                shapes,
                ..DatasetSpec::default()
            };
            if let Some(r) = &a.scale_range {
                dataset.scale_range = [r[0], r[1]];
            }
            Ok((Invocation::Generate { dataset }, a.out.clone()))
        }
        Command::Train(a) => {
            let (mut config, cfg_seed) = train_config(a.config.as_deref())?;
            a.overrides.apply(&mut config);
            config.seed = resolve_seed(cli.seed, cfg_seed)?;
            config.validate().map_err(usage)?;
            let inv = Invocation::Train {
                config,
                data: a.data.clone(),
                resume: a.resume.clone(),
            };
            Ok((inv, a.out.clone()))
        }
        Command::Register(a) => {
            let registrar = a.registrar.unwrap_or(Registrar::Consensus);
            // ICP never touches the network, so the checkpoint is not even read.
            let checkpoint = a.checkpoint.clone().filter(|_| registrar != Registrar::Icp);
            let stored = match (&checkpoint, registrar) {
                (Some(path), _) => checkpoint_train_config(&load_checkpoint(path)?)?,
                (None, Registrar::Icp) => None,
                (None, _) => return Err(usage("learned registrars need --checkpoint")),
            };
            let mut config = stored.unwrap_or_default();
            config.registrar = registrar;
            if let Some(k) = a.k_groups {
                config.k_groups = k;
            }
            if a.k_top.is_some() {
                config.k_top = a.k_top;
            }
            config.seed = resolve_seed(cli.seed, None)?;
            config.validate().map_err(usage)?;
            let output = a
                .out
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| usage("--out must name a file"))?
                .to_string();
            let dir = match a.out.parent() {
                Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
                _ => PathBuf::from("."),
            };
            let inv = Invocation::Register {
                config,
                checkpoint,
                src: a.src.clone(),
                dst: a.dst.clone(),
                output,
            };
            Ok((inv, dir))
        }
        Command::Bench(a) | Command::Ablate(a) => {
            let (mut config, cfg_seed) = bench_config(a.config.as_deref())?;
            a.overrides.apply(&mut config.train);
            config.train.seed = resolve_seed(cli.seed, cfg_seed)?;
            config.train.validate().map_err(usage)?;
            let inv = if matches!(cli.command, Command::Bench(_)) {
                Invocation::Bench { config }
            } else {
                Invocation::Ablate { config }
            };
            Ok((inv, a.out.clone()))
        }
        Command::Replay(a) => {
            let manifest = RunManifest::load(&a.manifest).map_err(usage)?;
            Ok((manifest.invocation, a.out.clone()))
        }
    }
}

/// Re-runs `manifest` into `out_dir` after checking its inputs are
/// unchanged; fails if any primary artifact differs.
pub fn replay(manifest: &RunManifest, out_dir: &Path) -> Result<RunManifest, Error> {
    for input in &manifest.inputs {
        let now = sha256_file(&input.path)?;
        if now != input.sha256 {
            return Err(Error::Config(format!(
                "input {} changed since the recorded run",
                input.path.display()
            )));
        }
    }
    let fresh = execute(&manifest.invocation, out_dir)?;
    let mismatched: Vec<&str> = manifest
        .primary()
        .filter(|a| {
            !fresh
                .artifacts
                .iter()
                .any(|b| b.name == a.name && b.sha256 == a.sha256)
        })
        .map(|a| a.name.as_str())
        .collect();
    if !mismatched.is_empty() {
        return Err(Error::Config(format!(
            "replay differs in {}",
            mismatched.join(", ")
        )));
    }
    Ok(fresh)
}

fn dispatch(cli: &Cli) -> Result<RunManifest, CliError> {
    let (inv, out_dir) = resolve(cli)?;
    match &cli.command {
        Command::Replay(a) => {
            let recorded = RunManifest::load(&a.manifest).map_err(usage)?;
            Ok(replay(&recorded, &out_dir)?)
        }
        _ => Ok(execute(&inv, &out_dir)?),
    }
}

/// Runs one command line and returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.threads {
        Some(0) => Err(usage("--threads must be >= 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(usage(e)),
        },
        None => dispatch(&cli),
    };
    match outcome {
        Ok(m) => {
            let listed: Vec<&str> = m.artifacts.iter().map(|a| a.name.as_str()).collect();
            println!("wrote {} [{}]", m.out_dir.display(), listed.join(", "));
            EXIT_OK
        }
        Err(e) => {
            eprintln!("rigidreg: {e}");
            e.exit_code()
        }
    }
}
