//! Self-supervised training on synthetic rigid pairs, evaluation metrics,
//! parameter sweeps and the ablation table.

mod data;
mod eval;

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fen::{adam_step, fen_init, Adam, AdamState, FenConfig, FenModel, GraphMode};
use crate::geom3d::{
    add_gaussian_noise, apply_transform, random_rotation, PointCloud, RigidTransform,
};
use crate::losses::{build_adjacency, total_loss, LossReport};
use crate::ri_desc::{
    cartesian_features, ri_features, FeatureTensor, CARTESIAN_CHANNELS, RI_CHANNELS,
};
use crate::scalar::Real;
use crate::softcorr::{
    bag_weights, confidence, cosine_backward, sample_bag, soft_correspondence,
    ConfidenceDistribution,
};

pub use data::{synthetic_dataset, DatasetSpec};
pub use eval::{
    ablate, evaluate, metrics_from_residuals, register_pair, sweep, write_sweep_csv, AblationMode,
    AblationRow, MetricsReport, PairMetrics, Registration, SweepAxis, SweepRow,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Draw the bag from the confidence PMF.
    Confidence,
    /// Draw the bag uniformly over source points.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Registrar {
    Consensus,
    /// One Kabsch solve over every correspondence.
    Full,
    /// One Kabsch solve over the `k_top` most confident correspondences.
    Topk,
    /// Model-free point-to-point ICP.
    Icp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Training pairs per epoch; `None` uses one pair per dataset cloud.
    pub pairs_per_epoch: Option<usize>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Bag size as a fraction of the source cloud.
    pub q_fraction: f64,
    pub k_descriptor: usize,
    pub k_graph: usize,
    pub k_loss: usize,
    pub m_p: f64,
    pub m_n: f64,
    /// Upper bound of the random rotation angle, degrees in `[0, 180]`.
    pub rotation_range_deg: f64,
    /// Translation components are drawn from `[-t, t]`.
    pub translation_range: f64,
    pub noise_sigma: f64,
    /// Noise for training pairs when it should differ from `noise_sigma`,
    /// which then only governs evaluation.
    pub train_noise_sigma: Option<f64>,
    pub seed: u64,
    pub k_groups: usize,
    /// Points used by the top-k registrar; `None` means the bag size.
    pub k_top: Option<usize>,
    pub edge_width: usize,
    pub l1: usize,
    pub l2: usize,
    pub fusion_width: usize,
    pub l3: usize,
    pub use_ri: bool,
    pub use_global_branch: bool,
    pub graph_mode: GraphMode,
    pub sampling_mode: SamplingMode,
    pub registrar: Registrar,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let fen = FenConfig::default();
        let adam = Adam::default();
        Self {
            epochs: 1,
            pairs_per_epoch: None,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            q_fraction: 0.1,
            k_descriptor: 16,
            k_graph: fen.k_graph,
            k_loss: 8,
            m_p: 0.8,
            m_n: 0.3,
            rotation_range_deg: 180.0,
            translation_range: 0.5,
            noise_sigma: 0.0,
            train_noise_sigma: None,
            seed: 0,
            k_groups: 8,
            k_top: None,
            edge_width: fen.edge_width,
            l1: fen.l1,
            l2: fen.l2,
            fusion_width: fen.fusion_width,
            l3: fen.l3,
            use_ri: true,
            use_global_branch: fen.use_global_branch,
            graph_mode: fen.graph_mode,
            sampling_mode: SamplingMode::Confidence,
            registrar: Registrar::Consensus,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=180.0).contains(&self.rotation_range_deg) {
            return bad(format!(
                "`rotation_range_deg` must lie in [0, 180], got {}",
                self.rotation_range_deg
            ));
        }
        if !(self.translation_range >= 0.0 && self.translation_range.is_finite()) {
            return bad(format!(
                "`translation_range` must be finite and >= 0, got {}",
                self.translation_range
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "`noise_sigma` must be finite and >= 0, got {}",
                self.noise_sigma
            ));
        }
        if let Some(s) = self.train_noise_sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!(
                    "`train_noise_sigma` must be finite and >= 0, got {s}"
                ));
            }
        }
        if !(self.q_fraction > 0.0 && self.q_fraction <= 1.0) {
            return bad(format!(
                "`q_fraction` must lie in (0, 1], got {}",
                self.q_fraction
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("`lr` must be finite and >= 0, got {}", self.lr));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0)
        {
            return bad("`beta1`, `beta2` must lie in [0, 1) and `eps` must be > 0".into());
        }
        if !(0.0 <= self.m_n && self.m_n < self.m_p && self.m_p <= 1.0) {
            return bad(format!(
                "margins need 0 <= m_n < m_p <= 1, got m_p={} m_n={}",
                self.m_p, self.m_n
            ));
        }
        for (name, v) in [
            ("k_descriptor", self.k_descriptor),
            ("k_loss", self.k_loss),
            ("k_groups", self.k_groups),
        ] {
            if v == 0 {
                return bad(format!("`{name}` must be >= 1"));
            }
        }
        if self.pairs_per_epoch == Some(0) {
            return bad("`pairs_per_epoch` must be >= 1".into());
        }
        self.fen_config().validate()
    }

    pub fn fen_config(&self) -> FenConfig {
        FenConfig {
            in_channels: if self.use_ri {
                RI_CHANNELS
            } else {
                CARTESIAN_CHANNELS
            },
            edge_width: self.edge_width,
            l1: self.l1,
            l2: self.l2,
            fusion_width: self.fusion_width,
            l3: self.l3,
            graph_mode: self.graph_mode,
            k_graph: self.k_graph,
            use_global_branch: self.use_global_branch,
        }
    }

    pub fn adam(&self) -> Adam {
        Adam {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// `|Q|` for a source cloud of `n` points.
    pub fn bag_size(&self, n: usize) -> usize {
        ((n as f64 * self.q_fraction).round() as usize).max(1)
    }

    /// The configuration training pairs are drawn under.
    pub fn for_training(&self) -> TrainConfig {
        TrainConfig {
            noise_sigma: self.train_noise_sigma.unwrap_or(self.noise_sigma),
            ..self.clone()
        }
    }

    pub fn total_steps(&self, dataset_len: usize) -> u64 {
        (self.epochs * self.pairs_per_epoch.unwrap_or(dataset_len)) as u64
    }
}

/// Per-edge input features selected by `use_ri`.
pub fn features<T: Real>(cloud: &PointCloud<T>, cfg: &TrainConfig) -> Result<FeatureTensor<T>> {
    if cfg.use_ri {
        ri_features(cloud, cfg.k_descriptor)
    } else {
        cartesian_features(cloud, cfg.k_descriptor)
    }
}

/// Random rigid transform within the configured ranges.
pub fn random_transform<T: Real, R: Rng + ?Sized>(
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<RigidTransform<T>> {
    let rotation = if cfg.rotation_range_deg > 0.0 {
        random_rotation(T::lit(cfg.rotation_range_deg), rng)?
    } else {
        Matrix3::identity()
    };
    let s = cfg.translation_range;
    let mut draw = || {
        T::lit(if s > 0.0 {
            rng.random_range(-s..=s)
        } else {
            0.0
        })
    };
    let translation = Vector3::new(draw(), draw(), draw());
    Ok(RigidTransform::new(rotation, translation))
}

/// `y = T(x) + noise`, index-aligned with `x`. The ground truth is returned
/// for evaluation only.
pub fn make_pair<T: Real, R: Rng + ?Sized>(
    x: &PointCloud<T>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(PointCloud<T>, PointCloud<T>, RigidTransform<T>)> {
    let gt = random_transform(cfg, rng)?;
    let y = add_gaussian_noise(&apply_transform(x, &gt), T::lit(cfg.noise_sigma), rng)?;
    Ok((x.clone(), y, gt))
}

/// Sampling distribution for the bag under `cfg.sampling_mode`.
pub fn sampling_distribution<T: Real>(
    p: &crate::softcorr::SoftCorrespondence<T>,
    cfg: &TrainConfig,
) -> Result<ConfidenceDistribution<T>> {
    match cfg.sampling_mode {
        SamplingMode::Confidence => confidence(p),
        SamplingMode::Uniform => ConfidenceDistribution::uniform(p.rows()),
    }
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Streams at or above this value are reserved for evaluation.
pub(crate) const EVAL_STREAM: u64 = 1 << 62;
const ORDER_STREAM: u64 = 1 << 61;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub step: u64,
    #[serde(flatten)]
    pub loss: LossReport,
}

/// Model plus optimizer state; `optimizer.step` counts completed steps.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T: Real> {
    pub model: FenModel<T>,
    pub optimizer: AdamState,
}

impl<T: Real> TrainState<T> {
    pub fn fresh(cfg: &TrainConfig) -> Result<Self> {
        let model = fen_init(&cfg.fen_config(), cfg.seed)?;
        let optimizer = AdamState::new(&model);
        Ok(Self { model, optimizer })
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }
}

/// One optimization step on the pair `(x, y)`; returns the loss before the update.
pub fn train_step<T: Real, R: Rng + ?Sized>(
    state: &mut TrainState<T>,
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<LossReport> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            src: x.len(),
            dst: y.len(),
        });
    }
    let fx = features(x, cfg)?;
    let fy = features(y, cfg)?;
    let model = &state.model;
    let (ox, oy) = rayon::join(|| model.forward(&fx, x), || model.forward(&fy, y));
    let ((hx, cx), (hy, cy)) = (ox?, oy?);
    let p = soft_correspondence(&hx, &hy)?;
    let dist = sampling_distribution(&p, cfg)?;
    let bag = sample_bag(&dist, cfg.bag_size(x.len()), rng)?;
    let w = bag_weights(&bag, x.len())?;
    let adj = build_adjacency(y, cfg.k_loss)?;
    let (report, dp) = total_loss(&p, &adj, &w, cfg.m_p, cfg.m_n)?;
    let (dhx, dhy) = cosine_backward(&hx, &hy, &p, &dp)?;
    state.model.zero_grad();
    state.model.backward(&cx, &dhx)?;
    state.model.backward(&cy, &dhy)?;
    adam_step(&mut state.model, &cfg.adam(), &mut state.optimizer)?;
    Ok(report)
}

/// Dataset index used at global step `step` (a fresh shuffle per epoch).
fn cloud_for_step(step: u64, dataset_len: usize, per_epoch: usize, seed: u64) -> usize {
    use rand::seq::SliceRandom;
    let epoch = step / per_epoch as u64;
    let within = (step % per_epoch as u64) as usize;
    let mut order: Vec<usize> = (0..dataset_len).collect();
    order.shuffle(&mut stream_rng(seed, ORDER_STREAM + epoch));
    order[within % dataset_len]
}

/// Trains from scratch for `cfg.epochs` epochs.
pub fn train<T: Real>(
    dataset: &[PointCloud<T>],
    cfg: &TrainConfig,
) -> Result<(TrainState<T>, Vec<LogRow>)> {
    cfg.validate()?;
    let mut state = TrainState::fresh(cfg)?;
    let log = train_from(dataset, cfg, &mut state)?;
    Ok((state, log))
}

/// Continues training until `cfg.total_steps` steps have been taken.
///
/// Step `s` draws its pair and bag from an RNG stream keyed by `(seed, s)`,
/// so an interrupted run resumed from a checkpoint matches an
/// uninterrupted one exactly.
pub fn train_from<T: Real>(
    dataset: &[PointCloud<T>],
    cfg: &TrainConfig,
    state: &mut TrainState<T>,
) -> Result<Vec<LogRow>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("dataset", "training set is empty"));
    }
    if state.model.config() != &cfg.fen_config() {
        return Err(Error::Config(
            "model architecture does not match the training configuration".into(),
        ));
    }
    let pair_cfg = cfg.for_training();
    let per_epoch = cfg.pairs_per_epoch.unwrap_or(dataset.len());
    let total = cfg.total_steps(dataset.len());
    let mut log = Vec::new();
    while state.step() < total {
        let step = state.step();
        let x = &dataset[cloud_for_step(step, dataset.len(), per_epoch, cfg.seed)];
        let mut rng = stream_rng(cfg.seed, step);
        let (x, y, _) = make_pair(x, &pair_cfg, &mut rng)?;
        let loss = train_step(state, &x, &y, cfg, &mut rng)?;
        if !loss.l_c.is_finite() || !state.model.all_finite() {
            return Err(Error::Config(format!(
                "training diverged at step {}",
                step + 1
            )));
        }
        log.push(LogRow {
            step: step + 1,
            loss,
        });
    }
    Ok(log)
}

pub const RUN_LOG_HEADER: &str = "step,l_h,l_pq,l_nq,l_c";

/// Appends rows to a run-log CSV, writing the header when the file is new.
pub fn write_run_log(path: &Path, rows: &[LogRow], append: bool) -> Result<()> {
    let exists = append && path.exists();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut out = String::new();
    if !exists {
        out.push_str(RUN_LOG_HEADER);
        out.push('\n');
    }
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.step, r.loss.l_h, r.loss.l_pq, r.loss.l_nq, r.loss.l_c
        ));
    }
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))
}
