//! Core 3D types: point clouds, rigid transforms, exact kNN, chamfer distance
//! and noise augmentation.

mod io;
mod kdtree;
mod rotation;
mod shapes;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use io::{read_cloud, read_ply, read_xyz, write_ply, write_xyz, CloudFormat};
pub use kdtree::KdTree;
pub use rotation::{
    euler_angles_deg, random_rotation, rotation_angle_deg, rotation_from_axis_angle,
    rotation_from_euler_deg,
};
pub use shapes::{generate_shape, ShapeKind};

/// A point (or free vector) in 3D space.
pub type Point3<T> = Vector3<T>;

/// Ordered list of points with a cached centroid.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud<T: Real> {
    points: Vec<Point3<T>>,
    centroid: Point3<T>,
}

impl<T: Real> PointCloud<T> {
    /// Builds a cloud, rejecting empty input and non-finite coordinates.
    pub fn new(points: Vec<Point3<T>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(index) = points
            .iter()
            .position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            return Err(Error::NonFinitePoint { index });
        }
        let centroid = mean(&points);
        Ok(Self { points, centroid })
    }

    pub fn from_xyz(coords: &[[T; 3]]) -> Result<Self> {
        Self::new(
            coords
                .iter()
                .map(|c| Point3::new(c[0], c[1], c[2]))
                .collect(),
        )
    }

    #[inline]
    pub fn points(&self) -> &[Point3<T>] {
        &self.points
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; an empty cloud cannot be constructed.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn centroid(&self) -> Point3<T> {
        self.centroid
    }

    #[inline]
    pub fn point(&self, i: usize) -> &Point3<T> {
        &self.points[i]
    }

    /// Translates the cloud so its centroid sits at the origin.
    pub fn centered(&self) -> Self {
        let c = self.centroid;
        let points: Vec<_> = self.points.iter().map(|p| p - c).collect();
        let centroid = mean(&points);
        Self { points, centroid }
    }

    /// Selects points by index (indices may repeat).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.points[i]).collect())
    }

    pub fn into_points(self) -> Vec<Point3<T>> {
        self.points
    }

    /// Converts the cloud to another scalar type.
    pub fn cast<U: Real>(&self) -> PointCloud<U> {
        let points = self
            .points
            .iter()
            .map(|p| {
                Point3::new(
                    U::lit(p.x.as_f64()),
                    U::lit(p.y.as_f64()),
                    U::lit(p.z.as_f64()),
                )
            })
            .collect::<Vec<_>>();
        let centroid = mean(&points);
        PointCloud { points, centroid }
    }
}

fn mean<T: Real>(points: &[Point3<T>]) -> Point3<T> {
    let sum = points.iter().fold(Point3::zeros(), |acc, p| acc + p);
    sum / T::from_count(points.len())
}

/// Arithmetic mean of the cloud's points.
pub fn centroid<T: Real>(cloud: &PointCloud<T>) -> Point3<T> {
    cloud.centroid()
}

/// Rotation matrix plus translation vector, acting as `y = R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform<T: Real> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    #[inline]
    pub fn apply(&self, p: &Point3<T>) -> Point3<T> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn compose(&self, first: &Self) -> Self {
        Self::new(
            self.rotation * first.rotation,
            self.rotation * first.translation + self.translation,
        )
    }

    /// Checks `RᵀR = I` and `det R = +1` entrywise within `tol`.
    pub fn is_proper(&self, tol: T) -> bool {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        gram.iter().all(|v| v.abs() <= tol) && (self.rotation.determinant() - T::one()).abs() <= tol
    }

    /// Rotation matrix in row-major order.
    pub fn rotation_row_major(&self) -> [T; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    pub fn from_row_major(r: &[T; 9], t: &[T; 3]) -> Self {
        Self::new(Matrix3::from_row_slice(r), Vector3::new(t[0], t[1], t[2]))
    }
}

/// Applies `y_i = R x_i + t` to every point, preserving order.
pub fn apply_transform<T: Real>(
    cloud: &PointCloud<T>,
    transform: &RigidTransform<T>,
) -> PointCloud<T> {
    let points: Vec<_> = cloud.points().iter().map(|p| transform.apply(p)).collect();
    let centroid = transform.apply(&cloud.centroid());
    PointCloud { points, centroid }
}

/// Per-point k-nearest-neighbor lists, each row sorted by distance with ties
/// broken towards the lower point index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborhoodIndex {
    k: usize,
    neighbors: Vec<usize>,
}

impl NeighborhoodIndex {
    /// Wraps a flat `n × k` neighbor table.
    pub fn from_rows(k: usize, neighbors: Vec<usize>) -> Result<Self> {
        if k == 0 || !neighbors.len().is_multiple_of(k) {
            return Err(Error::ShapeMismatch {
                context: "neighborhood index",
                expected: format!("multiple of k={k}"),
                actual: neighbors.len().to_string(),
            });
        }
        Ok(Self { k, neighbors })
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.neighbors.len() / self.k
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn as_flat(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.neighbors.chunks_exact(self.k)
    }
}

/// Exact k-nearest neighbors of every cloud point.
pub fn knn<T: Real>(
    cloud: &PointCloud<T>,
    k: usize,
    include_self: bool,
) -> Result<NeighborhoodIndex> {
    let n = cloud.len();
    let in_range = if include_self { k <= n } else { k < n };
    if k == 0 || !in_range {
        return Err(Error::NeighborCount { k, n, include_self });
    }
    let tree = KdTree::new(cloud.points());
    let mut neighbors = Vec::with_capacity(n * k);
    for (i, p) in cloud.points().iter().enumerate() {
        let exclude = if include_self { None } else { Some(i) };
        neighbors.extend(tree.knn(p, k, exclude).into_iter().map(|(_, j)| j));
    }
    Ok(NeighborhoodIndex { k, neighbors })
}

/// Mean squared nearest-neighbor distance from each point of `from` into `tree`.
fn directed_chamfer<T: Real>(from: &[Point3<T>], tree: &KdTree<T>) -> T {
    let sum = from
        .iter()
        .fold(T::zero(), |acc, p| acc + tree.nearest(p, None).0);
    sum / T::from_count(from.len())
}

/// Symmetric chamfer distance: mean squared NN distance `a → b` plus `b → a`.
pub fn chamfer<T: Real>(a: &PointCloud<T>, b: &PointCloud<T>) -> T {
    let tree_b = KdTree::new(b.points());
    chamfer_with_target_tree(a, b, &tree_b)
}

/// Chamfer distance reusing a prebuilt tree over `b`.
pub fn chamfer_with_target_tree<T: Real>(
    a: &PointCloud<T>,
    b: &PointCloud<T>,
    tree_b: &KdTree<T>,
) -> T {
    let tree_a = KdTree::new(a.points());
    directed_chamfer(a.points(), tree_b) + directed_chamfer(b.points(), &tree_a)
}

/// Adds i.i.d. zero-mean Gaussian noise of standard deviation `sigma` to every
/// coordinate. No clipping is applied.
pub fn add_gaussian_noise<T: Real, R: Rng + ?Sized>(
    cloud: &PointCloud<T>,
    sigma: T,
    rng: &mut R,
) -> Result<PointCloud<T>> {
    if !(sigma >= T::zero()) || !sigma.is_finite() {
        return Err(Error::invalid(
            "sigma",
            format!("must be finite and >= 0, got {sigma}"),
        ));
    }
    let mut draw = || T::lit(rng.sample::<f64, _>(StandardNormal)) * sigma;
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            let dx = draw();
            let dy = draw();
            let dz = draw();
            Point3::new(p.x + dx, p.y + dy, p.z + dz)
        })
        .collect();
    PointCloud::new(points)
}

/// Serializable row-major form of a rigid transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    pub t: [f64; 3],
}

impl<T: Real> From<&RigidTransform<T>> for TransformRecord {
    fn from(tr: &RigidTransform<T>) -> Self {
        let r = tr.rotation_row_major();
        TransformRecord {
            rotation: r.map(|v| v.as_f64()),
            t: [
                tr.translation.x.as_f64(),
                tr.translation.y.as_f64(),
                tr.translation.z.as_f64(),
            ],
        }
    }
}
