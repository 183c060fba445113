use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{consensus_register, full_register, topk_register, ExperimentResult};
use crate::error::{Error, Result};
use crate::fen::{FenModel, GraphMode};
use crate::geom3d::{
    apply_transform, chamfer, euler_angles_deg, rotation_angle_deg, PointCloud, RigidTransform,
};
use crate::icp::{icp, IcpConfig};
use crate::scalar::Real;
use crate::softcorr::{sample_bag, soft_correspondence, ConfidenceDistribution};
use crate::trainer::{
    features, make_pair, sampling_distribution, stream_rng, train, Registrar, SamplingMode,
    TrainConfig, EVAL_STREAM,
};

/// Output of one registrar invocation.
#[derive(Clone, Debug)]
pub struct Registration<T: Real> {
    pub transform: RigidTransform<T>,
    pub registrar: Registrar,
    /// Consensus experiments; empty for the other registrars.
    pub experiments: Vec<ExperimentResult<T>>,
    /// Sampling distribution; absent for ICP.
    pub distribution: Option<ConfidenceDistribution<T>>,
}

/// Registers `x` onto `y` with `cfg.registrar`. ICP ignores `model`; the
/// learned registrars require it.
pub fn register_pair<T: Real, R: Rng + ?Sized>(
    model: Option<&FenModel<T>>,
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Registration<T>> {
    if cfg.registrar == Registrar::Icp {
        let fit = icp(x, y, &IcpConfig::default())?;
        return Ok(Registration {
            transform: fit.transform,
            registrar: Registrar::Icp,
            experiments: Vec::new(),
            distribution: None,
        });
    }
    let model =
        model.ok_or_else(|| Error::invalid("model", "learned registrars need a trained model"))?;
    let fx = features(x, cfg)?;
    let fy = features(y, cfg)?;
    let (ox, oy) = rayon::join(|| model.forward(&fx, x), || model.forward(&fy, y));
    let ((hx, _), (hy, _)) = (ox?, oy?);
    let p = soft_correspondence(&hx, &hy)?;
    let dist = sampling_distribution(&p, cfg)?;
    let bag_size = cfg.bag_size(x.len());
    let (transform, experiments) = match cfg.registrar {
        Registrar::Consensus => {
            let bag = sample_bag(&dist, bag_size, rng)?;
            consensus_register(x, y, &p, &bag, cfg.k_groups, rng)?
        }
        Registrar::Full => (full_register(x, y, &p)?, Vec::new()),
        Registrar::Topk => (
            topk_register(x, y, &p, cfg.k_top.unwrap_or(bag_size))?,
            Vec::new(),
        ),
        Registrar::Icp => unreachable!("handled above"),
    };
    Ok(Registration {
        transform,
        registrar: cfg.registrar,
        experiments,
        distribution: Some(dist),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub index: usize,
    /// Z-Y-X Euler angles of `R̂ᵀ·R_gt`, degrees.
    pub euler_residual_deg: [f64; 3],
    /// `t̂ − t_gt`.
    pub translation_residual: [f64; 3],
    /// Geodesic angle of `R̂ᵀ·R_gt`, degrees.
    pub rotation_error_deg: f64,
    pub chamfer: f64,
}

impl PairMetrics {
    pub fn new<T: Real>(
        index: usize,
        estimate: &RigidTransform<T>,
        truth: &RigidTransform<T>,
        chamfer: T,
    ) -> Self {
        let rel = estimate.rotation.transpose() * truth.rotation;
        let (a, b, c) = euler_angles_deg(&rel);
        let dt = estimate.translation - truth.translation;
        Self {
            index,
            euler_residual_deg: [a.as_f64(), b.as_f64(), c.as_f64()],
            translation_residual: [dt.x.as_f64(), dt.y.as_f64(), dt.z.as_f64()],
            rotation_error_deg: rotation_angle_deg(&rel).as_f64(),
            chamfer: chamfer.as_f64(),
        }
    }
}

/// Errors aggregated over pairs. The scalar RMSE/MAE fields pool all three
/// components of every pair; `*_components` keep them apart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pairs_evaluated: usize,
    pub rmse_r: f64,
    pub mae_r: f64,
    pub rmse_t: f64,
    pub mae_t: f64,
    pub rmse_r_components: [f64; 3],
    pub mae_r_components: [f64; 3],
    pub rmse_t_components: [f64; 3],
    pub mae_t_components: [f64; 3],
    pub chamfer_mean: f64,
    pub pairs: Vec<PairMetrics>,
}

fn rmse_mae(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let sq: f64 = values.clone().map(|v| v * v).sum();
    let abs: f64 = values.map(f64::abs).sum();
    ((sq / n).sqrt(), abs / n)
}

pub fn metrics_from_residuals(pairs: Vec<PairMetrics>) -> MetricsReport {
    let rot = |c: usize| pairs.iter().map(move |p| p.euler_residual_deg[c]);
    let tr = |c: usize| pairs.iter().map(move |p| p.translation_residual[c]);
    let (rmse_r, mae_r) = rmse_mae(pairs.iter().flat_map(|p| p.euler_residual_deg));
    let (rmse_t, mae_t) = rmse_mae(pairs.iter().flat_map(|p| p.translation_residual));
    let rc: Vec<(f64, f64)> = (0..3).map(|c| rmse_mae(rot(c))).collect();
    let tc: Vec<(f64, f64)> = (0..3).map(|c| rmse_mae(tr(c))).collect();
    let chamfer_mean = pairs.iter().map(|p| p.chamfer).sum::<f64>() / pairs.len().max(1) as f64;
    MetricsReport {
        pairs_evaluated: pairs.len(),
        rmse_r,
        mae_r,
        rmse_t,
        mae_t,
        rmse_r_components: [rc[0].0, rc[1].0, rc[2].0],
        mae_r_components: [rc[0].1, rc[1].1, rc[2].1],
        rmse_t_components: [tc[0].0, tc[1].0, tc[2].0],
        mae_t_components: [tc[0].1, tc[1].1, tc[2].1],
        chamfer_mean,
        pairs,
    }
}

/// Registers one synthetic pair per test cloud. Pair `i` draws from its own
/// RNG stream, so reports are independent of thread scheduling.
pub fn evaluate<T: Real>(
    model: Option<&FenModel<T>>,
    dataset: &[PointCloud<T>],
    cfg: &TrainConfig,
) -> Result<MetricsReport> {
    cfg.validate()?;
    if let Some(m) = model {
        if m.config().in_channels != cfg.fen_config().in_channels {
            return Err(Error::Config(
                "model input channels do not match `use_ri`".into(),
            ));
        }
    }
    let pairs: Result<Vec<PairMetrics>> = dataset
        .par_iter()
        .enumerate()
        .map(|(i, cloud)| {
            let mut rng = stream_rng(cfg.seed, EVAL_STREAM + i as u64);
            let (x, y, truth) = make_pair(cloud, cfg, &mut rng)?;
            let reg = register_pair(model, &x, &y, cfg, &mut rng)?;
            let cd = chamfer(&apply_transform(&x, &reg.transform), &y);
            Ok(PairMetrics::new(i, &reg.transform, &truth, cd))
        })
        .collect();
    Ok(metrics_from_residuals(pairs?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Retrains and evaluates at each rotation bound.
    RotationRange,
    /// Evaluates one trained model at each noise level.
    NoiseSigma,
}

impl SweepAxis {
    pub fn column(self) -> &'static str {
        match self {
            SweepAxis::RotationRange => "rotation_range_deg",
            SweepAxis::NoiseSigma => "noise_sigma",
        }
    }

    fn apply(self, cfg: &TrainConfig, value: f64) -> TrainConfig {
        let mut c = cfg.clone();
        match self {
            SweepAxis::RotationRange => c.rotation_range_deg = value,
            SweepAxis::NoiseSigma => c.noise_sigma = value,
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub metrics: MetricsReport,
}

/// One evaluation per grid value. A noise sweep reuses `trained` when
/// given, otherwise trains once under `cfg`.
pub fn sweep<T: Real>(
    train_set: &[PointCloud<T>],
    test_set: &[PointCloud<T>],
    cfg: &TrainConfig,
    axis: SweepAxis,
    grid: &[f64],
    trained: Option<&FenModel<T>>,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::invalid("grid", "sweep grid is empty"));
    }
    let learned = cfg.registrar != Registrar::Icp;
    let shared = match (axis, trained, learned) {
        (SweepAxis::NoiseSigma, Some(m), true) => Some(m.clone()),
        (SweepAxis::NoiseSigma, None, true) => Some(train(train_set, cfg)?.0.model),
        _ => None,
    };
    grid.iter()
        .map(|&value| {
            let c = axis.apply(cfg, value);
            let model = match (&shared, learned) {
                (Some(m), _) => Some(m.clone()),
                (None, true) => Some(train(train_set, &c)?.0.model),
                (None, false) => None,
            };
            Ok(SweepRow {
                axis,
                value,
                metrics: evaluate(model.as_ref(), test_set, &c)?,
            })
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let axis = rows.first().map_or("value", |r| r.axis.column());
    let mut out = format!("{axis},rmse_r,mae_r,rmse_t,mae_t,chamfer_mean\n");
    for r in rows {
        let m = &r.metrics;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.value, m.rmse_r, m.mae_r, m.rmse_t, m.mae_t, m.chamfer_mean
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Full,
    /// (i) Cartesian edge features instead of rotation-invariant descriptors.
    NoRi,
    /// (ii) no global branch.
    NoGlobal,
    /// (iii) feature-space graph in the second edge layer.
    DynamicGraph,
    /// (iv) uniform instead of confidence-based sampling.
    UniformSampling,
    /// (v) one Kabsch solve over all correspondences.
    FullSvd,
    /// (vi) one Kabsch solve over the most confident correspondences.
    Topk,
}

impl AblationMode {
    pub const ALL: [AblationMode; 7] = [
        AblationMode::Full,
        AblationMode::NoRi,
        AblationMode::NoGlobal,
        AblationMode::DynamicGraph,
        AblationMode::UniformSampling,
        AblationMode::FullSvd,
        AblationMode::Topk,
    ];

    /// Roman-numeral row tag; empty for the full method.
    pub fn tag(self) -> &'static str {
        match self {
            AblationMode::Full => "",
            AblationMode::NoRi => "i",
            AblationMode::NoGlobal => "ii",
            AblationMode::DynamicGraph => "iii",
            AblationMode::UniformSampling => "iv",
            AblationMode::FullSvd => "v",
            AblationMode::Topk => "vi",
        }
    }

    /// The component switched off, as shown in the comparison table.
    pub fn switched_off(self) -> &'static str {
        match self {
            AblationMode::Full => "none",
            AblationMode::NoRi => "rotation-invariant descriptors",
            AblationMode::NoGlobal => "global branch",
            AblationMode::DynamicGraph => "static graph",
            AblationMode::UniformSampling => "confidence sampling",
            AblationMode::FullSvd => "consensus (SVD on all points)",
            AblationMode::Topk => "consensus (top-k points)",
        }
    }

    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        let mut c = cfg.clone();
        match self {
            AblationMode::Full => {}
            AblationMode::NoRi => c.use_ri = false,
            AblationMode::NoGlobal => c.use_global_branch = false,
            AblationMode::DynamicGraph => c.graph_mode = GraphMode::Dynamic,
            AblationMode::UniformSampling => c.sampling_mode = SamplingMode::Uniform,
            AblationMode::FullSvd => c.registrar = Registrar::Full,
            AblationMode::Topk => c.registrar = Registrar::Topk,
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub tag: &'static str,
    pub switched_off: &'static str,
    pub metrics: MetricsReport,
}

/// Runs the full method and every ablation on the same data and seed.
/// Modes that only change the registrar reuse the full method's weights.
pub fn ablate<T: Real>(
    train_set: &[PointCloud<T>],
    test_set: &[PointCloud<T>],
    cfg: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    let base = TrainConfig {
        registrar: Registrar::Consensus,
        ..cfg.clone()
    };
    let mut trained: Vec<(TrainConfig, FenModel<T>)> = Vec::new();
    AblationMode::ALL
        .iter()
        .map(|&mode| {
            let c = mode.apply(&base);
            // training never reads the registrar fields
            let key = TrainConfig {
                registrar: Registrar::Consensus,
                k_top: None,
                ..c.clone()
            };
            let model = match trained.iter().find(|(k, _)| *k == key) {
                Some((_, m)) => m.clone(),
                None => {
                    let m = train(train_set, &c)?.0.model;
                    trained.push((key, m.clone()));
                    m
                }
            };
            Ok(AblationRow {
                mode,
                tag: mode.tag(),
                switched_off: mode.switched_off(),
                metrics: evaluate(Some(&model), test_set, &c)?,
            })
        })
        .collect()
}
