use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::consensus::write_experiments_json;
use crate::error::{Error, Result};
use crate::fen::{load_checkpoint, save_checkpoint, AdamState, Checkpoint, FenModel};
use crate::geom3d::{
    apply_transform, chamfer, euler_angles_deg, read_cloud, write_xyz, PointCloud, TransformRecord,
};
use crate::trainer::{
    ablate, evaluate, register_pair, stream_rng, sweep, synthetic_dataset, train, train_from,
    write_run_log, write_sweep_csv, AblationRow, DatasetSpec, MetricsReport, Registrar, SweepAxis,
    SweepRow, TrainConfig, TrainState, EVAL_STREAM,
};

use super::manifest::{Recorder, RunManifest, MANIFEST_NAME};

pub const CHECKPOINT_NAME: &str = "checkpoint.json";
pub const RUN_LOG_NAME: &str = "run_log.csv";
pub const METRICS_NAME: &str = "metrics.json";
pub const ROTATION_SWEEP_NAME: &str = "sweep_rotation.csv";
pub const NOISE_SWEEP_NAME: &str = "sweep_noise.csv";
pub const ABLATION_JSON_NAME: &str = "ablation.json";
pub const ABLATION_CSV_NAME: &str = "ablation.csv";

/// Benchmark and ablation recipe: training configuration, synthetic data
/// and sweep grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub train: TrainConfig,
    pub train_data: DatasetSpec,
    pub test_data: DatasetSpec,
    /// Registrars evaluated next to `train.registrar` with the same weights.
    pub baselines: Vec<Registrar>,
    /// Empty grids skip the sweep.
    pub rotation_grid: Vec<f64>,
    pub noise_grid: Vec<f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            train_data: DatasetSpec::default(),
            test_data: DatasetSpec {
                count: 50,
                seed: 1,
                ..DatasetSpec::default()
            },
            baselines: vec![Registrar::Full, Registrar::Icp],
            rotation_grid: vec![30.0, 90.0, 180.0],
            noise_grid: vec![0.0, 0.005, 0.01, 0.02],
        }
    }
}

/// A command with every setting resolved; replaying it reproduces the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case", deny_unknown_fields)]
pub enum Invocation {
    Generate {
        dataset: DatasetSpec,
    },
    Train {
        config: TrainConfig,
        data: PathBuf,
        resume: Option<PathBuf>,
    },
    Register {
        config: TrainConfig,
        checkpoint: Option<PathBuf>,
        src: PathBuf,
        dst: PathBuf,
        /// File name of the result inside the output directory.
        output: String,
    },
    Bench {
        config: BenchConfig,
    },
    Ablate {
        config: BenchConfig,
    },
}

impl Invocation {
    pub fn seed(&self) -> u64 {
        match self {
            Invocation::Generate { dataset } => dataset.seed,
            Invocation::Train { config, .. } | Invocation::Register { config, .. } => config.seed,
            Invocation::Bench { config } | Invocation::Ablate { config } => config.train.seed,
        }
    }

    fn manifest_name(&self) -> String {
        match self {
            Invocation::Register { output, .. } => {
                let stem = Path::new(output)
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("register");
                format!("{stem}.manifest.json")
            }
            _ => MANIFEST_NAME.to_string(),
        }
    }
}

/// Runs `inv`, writing every artifact plus the manifest into `out_dir`.
pub fn execute(inv: &Invocation, out_dir: &Path) -> Result<RunManifest> {
    let mut rec = Recorder::new(out_dir)?;
    match inv {
        Invocation::Generate { dataset } => generate(dataset, &mut rec)?,
        Invocation::Train {
            config,
            data,
            resume,
        } => train_cmd(config, data, resume.as_deref(), &mut rec)?,
        Invocation::Register {
            config,
            checkpoint,
            src,
            dst,
            output,
        } => register_cmd(config, checkpoint.as_deref(), src, dst, output, &mut rec)?,
        Invocation::Bench { config } => bench(config, &mut rec)?,
        Invocation::Ablate { config } => ablate_cmd(config, &mut rec)?,
    }
    rec.finish(&inv.manifest_name(), inv.seed(), inv.clone())
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn generate(spec: &DatasetSpec, rec: &mut Recorder) -> Result<()> {
    let clouds: Vec<PointCloud<f64>> = rec.time("generate", || synthetic_dataset(spec))?;
    for (i, cloud) in clouds.iter().enumerate() {
        let name = format!("{i:04}_{}.xyz", spec.shapes[i % spec.shapes.len()]);
        write_xyz(&rec.path(&name), cloud)?;
        rec.output(&name, true);
    }
    Ok(())
}

/// `.xyz` and `.ply` files directly inside `dir`, sorted by name.
pub fn cloud_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("xyz") || e.eq_ignore_ascii_case("ply"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(
            "data",
            format!("no .xyz or .ply files in {}", dir.display()),
        ));
    }
    Ok(files)
}

/// Restores model and optimizer; a checkpoint without optimizer state
/// restarts the moments at its recorded step.
pub fn state_from_checkpoint(ckpt: &Checkpoint) -> Result<TrainState<f64>> {
    let model: FenModel<f64> = ckpt.to_model()?;
    let optimizer = match &ckpt.optimizer {
        Some((_, state)) => state.clone(),
        None => {
            let mut s = AdamState::new(&model);
            s.step = ckpt.step;
            s
        }
    };
    Ok(TrainState { model, optimizer })
}

/// Training configuration stored by `train`, if any.
pub fn checkpoint_train_config(ckpt: &Checkpoint) -> Result<Option<TrainConfig>> {
    match ckpt.meta.get("train_config") {
        None => Ok(None),
        Some(v) => serde_path_to_error::deserialize(v).map(Some).map_err(|e| {
            Error::Checkpoint(format!("meta.train_config.{}: {}", e.path(), e.inner()))
        }),
    }
}

fn train_cmd(
    cfg: &TrainConfig,
    data: &Path,
    resume: Option<&Path>,
    rec: &mut Recorder,
) -> Result<()> {
    let mut clouds: Vec<PointCloud<f64>> = Vec::new();
    for f in cloud_files(data)? {
        rec.input(&f)?;
        clouds.push(read_cloud(&f)?);
    }
    let mut state = match resume {
        Some(path) => {
            rec.input(path)?;
            state_from_checkpoint(&load_checkpoint(path)?)?
        }
        None => TrainState::fresh(cfg)?,
    };
    let log = rec.time("train", || train_from(&clouds, cfg, &mut state))?;
    write_run_log(&rec.path(RUN_LOG_NAME), &log, false)?;
    rec.output(RUN_LOG_NAME, true);
    let mut ckpt = Checkpoint::from_model(&state.model, state.step());
    ckpt.optimizer = Some((cfg.adam(), state.optimizer.clone()));
    ckpt.meta = serde_json::json!({ "train_config": cfg });
    save_checkpoint(&rec.path(CHECKPOINT_NAME), &ckpt)?;
    rec.output(CHECKPOINT_NAME, true);
    Ok(())
}

/// Body of the JSON written by `register`. Angles are degrees, `R` is row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterOutput {
    #[serde(flatten)]
    pub transform: TransformRecord,
    pub chamfer: f64,
    /// Z-Y-X Euler angles of `R`.
    pub euler_deg: [f64; 3],
    pub registrar: Registrar,
    pub seed: u64,
}

fn register_cmd(
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
    src: &Path,
    dst: &Path,
    output: &str,
    rec: &mut Recorder,
) -> Result<()> {
    rec.input(src)?;
    rec.input(dst)?;
    let x: PointCloud<f64> = read_cloud(src)?;
    let y: PointCloud<f64> = read_cloud(dst)?;
    let model: Option<FenModel<f64>> = match (cfg.registrar, checkpoint) {
        (Registrar::Icp, _) => None,
        (_, Some(path)) => {
            rec.input(path)?;
            Some(load_checkpoint(path)?.to_model()?)
        }
        (_, None) => {
            return Err(Error::invalid(
                "checkpoint",
                "learned registrars need --checkpoint",
            ))
        }
    };
    let mut rng = stream_rng(cfg.seed, EVAL_STREAM);
    let reg = rec.time("register", || {
        register_pair(model.as_ref(), &x, &y, cfg, &mut rng)
    })?;
    let (a, b, c) = euler_angles_deg(&reg.transform.rotation);
    let out = RegisterOutput {
        transform: TransformRecord::from(&reg.transform),
        chamfer: chamfer(&apply_transform(&x, &reg.transform), &y),
        euler_deg: [a, b, c],
        registrar: reg.registrar,
        seed: cfg.seed,
    };
    write_json(&rec.path(output), &out)?;
    rec.output(output, true);
    if !reg.experiments.is_empty() {
        let stem = Path::new(output)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("register");
        let name = format!("{stem}.experiments.json");
        write_experiments_json(&rec.path(&name), &reg.experiments)?;
        rec.output(&name, true);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodRow {
    pub registrar: Registrar,
    pub metrics: MetricsReport,
}

/// Contents of `metrics.json` written by `bench`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub methods: Vec<MethodRow>,
    pub rotation_sweep: Vec<SweepRow>,
    pub noise_sweep: Vec<SweepRow>,
}

/// Train and test clouds.
type Split = (Vec<PointCloud<f64>>, Vec<PointCloud<f64>>);

fn datasets(cfg: &BenchConfig, rec: &mut Recorder) -> Result<Split> {
    rec.time("data", || {
        Ok((
            synthetic_dataset(&cfg.train_data)?,
            synthetic_dataset(&cfg.test_data)?,
        ))
    })
}

fn bench(cfg: &BenchConfig, rec: &mut Recorder) -> Result<()> {
    let (train_set, test_set) = datasets(cfg, rec)?;
    let mut registrars = vec![cfg.train.registrar];
    for &b in &cfg.baselines {
        if !registrars.contains(&b) {
            registrars.push(b);
        }
    }
    let model = if registrars.iter().any(|&r| r != Registrar::Icp) {
        Some(rec.time("train", || train(&train_set, &cfg.train))?.0.model)
    } else {
        None
    };
    let methods = rec.time("evaluate", || {
        registrars
            .iter()
            .map(|&registrar| {
                let c = TrainConfig {
                    registrar,
                    ..cfg.train.clone()
                };
                Ok(MethodRow {
                    registrar,
                    metrics: evaluate(model.as_ref(), &test_set, &c)?,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut run_sweep = |axis: SweepAxis, grid: &[f64], name: &str| -> Result<Vec<SweepRow>> {
        if grid.is_empty() {
            return Ok(Vec::new());
        }
        let rows = rec.time(axis.column(), || {
            sweep(
                &train_set,
                &test_set,
                &cfg.train,
                axis,
                grid,
                model.as_ref(),
            )
        })?;
        write_sweep_csv(&rec.path(name), &rows)?;
        rec.output(name, true);
        Ok(rows)
    };
    let rotation_sweep = run_sweep(
        SweepAxis::RotationRange,
        &cfg.rotation_grid,
        ROTATION_SWEEP_NAME,
    )?;
    let noise_sweep = run_sweep(SweepAxis::NoiseSigma, &cfg.noise_grid, NOISE_SWEEP_NAME)?;
    let report = BenchReport {
        methods,
        rotation_sweep,
        noise_sweep,
    };
    write_json(&rec.path(METRICS_NAME), &report)?;
    rec.output(METRICS_NAME, true);
    Ok(())
}

fn ablate_cmd(cfg: &BenchConfig, rec: &mut Recorder) -> Result<()> {
    let (train_set, test_set) = datasets(cfg, rec)?;
    let rows: Vec<AblationRow> =
        rec.time("ablate", || ablate(&train_set, &test_set, &cfg.train))?;
    write_json(
        &rec.path(ABLATION_JSON_NAME),
        &serde_json::json!({ "rows": rows }),
    )?;
    rec.output(ABLATION_JSON_NAME, true);
    let mut csv = String::from("mode,tag,switched_off,rmse_r,mae_r,rmse_t,mae_t\n");
    for r in &rows {
        let m = &r.metrics;
        let mode = serde_json::to_value(r.mode)?;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            mode.as_str().unwrap_or_default(),
            r.tag,
            r.switched_off,
            m.rmse_r,
            m.mae_r,
            m.rmse_t,
            m.mae_t
        ));
    }
    let path = rec.path(ABLATION_CSV_NAME);
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    rec.output(ABLATION_CSV_NAME, true);
    Ok(())
}
