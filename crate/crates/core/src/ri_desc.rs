//! Rotation-invariant per-edge descriptors and the Cartesian ablation input.
//!
//! For every source point `p` with neighborhood `N_p` (its k nearest
//! neighbors, `p` itself excluded), neighborhood centroid `m` and cloud
//! centroid `O`, each neighbor `x ∈ N_p` yields seven channels:
//!
//! | channel | value |
//! |---|---|
//! | 0 | ∠(x − m, p − m) |
//! | 1 | ∠(x − p, m − p) |
//! | 2 | ‖x − m‖ |
//! | 3 | ‖x − p‖ |
//! | 4 | ∠(x − O, p − O) |
//! | 5 | ∠(x − O, m − O) |
//! | 6 | ‖x − O‖ |
//!
//! Every channel is an angle or a distance, so the tensor is unchanged by any
//! rigid motion of the cloud.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geom3d::{knn, NeighborhoodIndex, PointCloud};
use crate::scalar::Real;

/// Number of rotation-invariant channels.
pub const RI_CHANNELS: usize = 7;
/// Number of Cartesian edge channels (`x − p` then `p`).
pub const CARTESIAN_CHANNELS: usize = 6;

/// Vectors shorter than this have no direction; angles involving them are 0.
const DEGENERATE_NORM: f64 = 1e-12;

/// Dense `N × k × C` per-edge feature tensor with its neighborhood index.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor<T: Real> {
    channels: usize,
    values: Vec<T>,
    neighborhood: NeighborhoodIndex,
}

impl<T: Real> FeatureTensor<T> {
    pub fn new(channels: usize, values: Vec<T>, neighborhood: NeighborhoodIndex) -> Result<Self> {
        let expected = neighborhood.len() * neighborhood.k() * channels;
        if channels == 0 || values.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "feature tensor",
                expected: expected.to_string(),
                actual: values.len().to_string(),
            });
        }
        Ok(Self {
            channels,
            values,
            neighborhood,
        })
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn num_points(&self) -> usize {
        self.neighborhood.len()
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.neighborhood.k()
    }

    pub fn neighborhood(&self) -> &NeighborhoodIndex {
        &self.neighborhood
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Channels of the `j`-th neighbor of point `p`.
    #[inline]
    pub fn edge(&self, p: usize, j: usize) -> &[T] {
        let start = (p * self.k() + j) * self.channels;
        &self.values[start..start + self.channels]
    }

    /// All `k × C` values of point `p`.
    #[inline]
    pub fn point_block(&self, p: usize) -> &[T] {
        let len = self.k() * self.channels;
        &self.values[p * len..(p + 1) * len]
    }
}

/// Rotation-invariant descriptor tensor (7 channels).
pub type RiDescriptorTensor<T> = FeatureTensor<T>;

/// Angle between `u` and `v` in `[0, π]`; 0 when either vector is degenerate.
///
/// Evaluated as `atan2(‖u × v‖, u · v)`, which equals the arccosine of the
/// normalized dot product but stays accurate near 0 and π.
pub fn angle_between<T: Real>(u: &Vector3<T>, v: &Vector3<T>) -> T {
    let eps = T::lit(DEGENERATE_NORM);
    if u.norm() < eps || v.norm() < eps {
        return T::zero();
    }
    u.cross(v).norm().atan2(u.dot(v))
}

/// Seven-channel descriptors over the `k` nearest neighbors of every point.
pub fn ri_features<T: Real>(cloud: &PointCloud<T>, k: usize) -> Result<RiDescriptorTensor<T>> {
    let neighborhood = knn(cloud, k, false)?;
    let o = cloud.centroid();
    let mut values = Vec::with_capacity(cloud.len() * k * RI_CHANNELS);
    let inv_k = T::one() / T::from_count(k);
    for (pi, row) in neighborhood.rows().enumerate() {
        let p = *cloud.point(pi);
        let m = row
            .iter()
            .fold(Vector3::zeros(), |acc, &j| acc + cloud.point(j))
            * inv_k;
        let mp = p - m;
        let pm = m - p;
        let op = p - o;
        let om = m - o;
        for &xi in row {
            let x = *cloud.point(xi);
            let mx = x - m;
            let px = x - p;
            let ox = x - o;
            values.extend_from_slice(&[
                angle_between(&mx, &mp),
                angle_between(&px, &pm),
                mx.norm(),
                px.norm(),
                angle_between(&ox, &op),
                angle_between(&ox, &om),
                ox.norm(),
            ]);
        }
    }
    FeatureTensor::new(RI_CHANNELS, values, neighborhood)
}

/// Cartesian edge features `[x − p, p]` over the same neighborhoods.
pub fn cartesian_features<T: Real>(cloud: &PointCloud<T>, k: usize) -> Result<FeatureTensor<T>> {
    let neighborhood = knn(cloud, k, false)?;
    let mut values = Vec::with_capacity(cloud.len() * k * CARTESIAN_CHANNELS);
    for (pi, row) in neighborhood.rows().enumerate() {
        let p = *cloud.point(pi);
        for &xi in row {
            let d = cloud.point(xi) - p;
            values.extend_from_slice(&[d.x, d.y, d.z, p.x, p.y, p.z]);
        }
    }
    FeatureTensor::new(CARTESIAN_CHANNELS, values, neighborhood)
}
