use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom3d::{generate_shape, PointCloud, ShapeKind};
use crate::scalar::Real;
use crate::trainer::stream_rng;

/// Recipe for a synthetic shape collection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub count: usize,
    pub n_points: usize,
    pub seed: u64,
    /// Kinds cycled in order.
    pub shapes: Vec<ShapeKind>,
    /// Per-axis scale factors are drawn from `[lo, hi]`.
    pub scale_range: [f64; 2],
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            count: 200,
            n_points: 256,
            seed: 0,
            shapes: ShapeKind::ALL.to_vec(),
            scale_range: [0.7, 1.3],
        }
    }
}

/// Generates `spec.count` centered clouds with random anisotropic scaling,
/// so no two instances of a kind are congruent.
pub fn synthetic_dataset<T: Real>(spec: &DatasetSpec) -> Result<Vec<PointCloud<T>>> {
    if spec.shapes.is_empty() {
        return Err(Error::invalid("shapes", "at least one shape kind required"));
    }
    let [lo, hi] = spec.scale_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::invalid(
            "scale_range",
            format!("need 0 < lo <= hi, got [{lo}, {hi}]"),
        ));
    }
    (0..spec.count)
        .map(|i| {
            let mut rng = stream_rng(spec.seed, i as u64);
            let kind = spec.shapes[i % spec.shapes.len()];
            let base: PointCloud<f64> = generate_shape(kind, spec.n_points, rng.random())?;
            let scale = Vector3::from_fn(|_, _| {
                if lo < hi {
                    rng.random_range(lo..=hi)
                } else {
                    lo
                }
            });
            let c = base.centroid();
            let points = base
                .points()
                .iter()
                .map(|p| (p - c).component_mul(&scale).map(T::lit))
                .collect();
            PointCloud::new(points)
        })
        .collect()
}
