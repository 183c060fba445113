//! Feature-extraction network: a local edge-convolution branch, a global
//! pooled branch, and a dense global-local fusion head, with a hand-written
//! reverse pass.
//!
//! Each branch runs two edge layers. The first consumes the per-edge
//! descriptor tensor directly; the second forms DGCNN edge features
//! `[h_p, h_x − h_p]` over a graph that is either the fixed Euclidean kNN
//! graph (static) or the kNN graph of the first layer's features (dynamic).
//! Aggregation is a max over neighbors, and the global branch additionally
//! max-pools over points.

mod adam;
mod checkpoint;
mod matrix;
mod network;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use adam::{adam_step, Adam, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_HEADER};
pub use matrix::Matrix;
pub use network::{fen_backward, fen_forward, ForwardCache};

/// Per-point embedding `ĥ ∈ R^{N×l3}`.
pub type Embedding<T> = Matrix<T>;

/// Slope of the leaky rectifier for negative inputs.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    /// Second edge layer reuses the Euclidean kNN graph.
    Static,
    /// Second edge layer rebuilds the graph in feature space.
    Dynamic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FenConfig {
    /// 7 for rotation-invariant descriptors, 6 for Cartesian edges.
    pub in_channels: usize,
    /// Width of the first edge layer in both branches.
    pub edge_width: usize,
    /// Local feature width `l1`.
    pub l1: usize,
    /// Global feature width `l2`.
    pub l2: usize,
    /// Hidden width of the fusion head.
    pub fusion_width: usize,
    /// Embedding width `l3`.
    pub l3: usize,
    pub graph_mode: GraphMode,
    /// Neighbors per point in the second edge layer.
    pub k_graph: usize,
    pub use_global_branch: bool,
}

impl Default for FenConfig {
    fn default() -> Self {
        Self {
            in_channels: crate::ri_desc::RI_CHANNELS,
            edge_width: 32,
            l1: 64,
            l2: 64,
            fusion_width: 64,
            l3: 32,
            graph_mode: GraphMode::Static,
            k_graph: 16,
            use_global_branch: true,
        }
    }
}

impl FenConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("in_channels", self.in_channels),
            ("edge_width", self.edge_width),
            ("l1", self.l1),
            ("l2", self.l2),
            ("fusion_width", self.fusion_width),
            ("k_graph", self.k_graph),
        ];
        for (name, w) in widths {
            if w == 0 {
                return Err(Error::Config(format!("`{name}` must be >= 1")));
            }
        }
        if self.l3 < 4 {
            return Err(Error::Config(format!("`l3` must be >= 4, got {}", self.l3)));
        }
        Ok(())
    }

    fn fusion_input(&self) -> usize {
        if self.use_global_branch {
            self.l1 + self.l2
        } else {
            self.l1
        }
    }
}

/// A named parameter tensor with its gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Real> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    fn zeros(name: &str, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.to_string(),
            shape,
            value: vec![T::zero(); len],
            grad: vec![T::zero(); len],
        }
    }
}

/// Parameter slots of one edge-convolution branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct BranchSlots {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub local: BranchSlots,
    pub global: Option<BranchSlots>,
    pub fuse_w1: usize,
    pub fuse_b1: usize,
    pub out_w: usize,
    pub out_b: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FenModel<T: Real> {
    config: FenConfig,
    params: Vec<Param<T>>,
    layout: Layout,
}

impl<T: Real> FenModel<T> {
    /// Zero-valued parameters laid out for `config`.
    fn allocate(config: FenConfig) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::new();
        let mut push = |name: &str, shape: Vec<usize>| {
            params.push(Param::zeros(name, shape));
            params.len() - 1
        };
        let branch = |prefix: &str, out: usize, push: &mut dyn FnMut(&str, Vec<usize>) -> usize| {
            BranchSlots {
                w1: push(
                    &format!("{prefix}.edge1.weight"),
                    vec![config.in_channels, config.edge_width],
                ),
                b1: push(&format!("{prefix}.edge1.bias"), vec![config.edge_width]),
                w2: push(
                    &format!("{prefix}.edge2.weight"),
                    vec![2 * config.edge_width, out],
                ),
                b2: push(&format!("{prefix}.edge2.bias"), vec![out]),
            }
        };
        let local = branch("local", config.l1, &mut push);
        let global = config
            .use_global_branch
            .then(|| branch("global", config.l2, &mut push));
        let fuse_w1 = push(
            "fusion.dense1.weight",
            vec![config.fusion_input(), config.fusion_width],
        );
        let fuse_b1 = push("fusion.dense1.bias", vec![config.fusion_width]);
        let out_w = push("fusion.out.weight", vec![config.fusion_width, config.l3]);
        let out_b = push("fusion.out.bias", vec![config.l3]);
        let layout = Layout {
            local,
            global,
            fuse_w1,
            fuse_b1,
            out_w,
            out_b,
        };
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &FenConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// All parameter values concatenated in layout order.
    pub fn flat_values(&self) -> Vec<T> {
        self.params
            .iter()
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }

    /// All gradients concatenated in layout order.
    pub fn flat_grads(&self) -> Vec<T> {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter().copied())
            .collect()
    }

    /// Mutable access to the `i`-th scalar parameter in flat order.
    pub fn flat_value_mut(&mut self, mut i: usize) -> &mut T {
        for p in &mut self.params {
            if i < p.value.len() {
                return &mut p.value[i];
            }
            i -= p.value.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.value.iter().all(|v| v.is_finite()))
    }
}

/// Glorot-uniform weights, zero biases; deterministic per seed.
pub fn fen_init<T: Real>(config: &FenConfig, seed: u64) -> Result<FenModel<T>> {
    let mut model = FenModel::allocate(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in &mut model.params {
        if p.shape.len() != 2 {
            continue;
        }
        let s = (6.0 / (p.shape[0] + p.shape[1]) as f64).sqrt();
        for v in &mut p.value {
            *v = T::lit(rng.random_range(-s..=s));
        }
    }
    Ok(model)
}
