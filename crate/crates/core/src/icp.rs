//! Point-to-point iterative closest point.

use rayon::prelude::*;

use crate::consensus::kabsch;
use crate::error::{Error, Result};
use crate::geom3d::{KdTree, Point3, PointCloud, RigidTransform};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct IcpConfig<T: Real> {
    pub max_iters: usize,
    /// Stop once the mean squared NN distance changes by less than this.
    pub tol: T,
    pub init: RigidTransform<T>,
}

impl<T: Real> Default for IcpConfig<T> {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: T::lit(1e-10),
            init: RigidTransform::identity(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpResult<T: Real> {
    pub transform: RigidTransform<T>,
    pub iterations: usize,
    /// Mean squared distance from each transformed source point to its match.
    pub mse: T,
    /// `mse` before the first update and after every update.
    pub history: Vec<T>,
}

fn matches<T: Real>(x: &PointCloud<T>, tree: &KdTree<T>, t: &RigidTransform<T>) -> (Vec<usize>, T) {
    let found: Vec<(T, usize)> = x
        .points()
        .par_iter()
        .map(|p| tree.nearest(&t.apply(p), None))
        .collect();
    let sum = found.iter().fold(T::zero(), |a, f| a + f.0);
    (
        found.into_iter().map(|f| f.1).collect(),
        sum / T::from_count(x.len()),
    )
}

/// Aligns `x` onto `y`. Hitting `max_iters` is reported through
/// `iterations`, not as an error.
pub fn icp<T: Real>(
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    cfg: &IcpConfig<T>,
) -> Result<IcpResult<T>> {
    if cfg.max_iters == 0 {
        return Err(Error::invalid("max_iters", "must be >= 1"));
    }
    if !(cfg.tol > T::zero()) {
        return Err(Error::invalid("tol", "must be > 0"));
    }
    if x.len() < 3 {
        return Err(Error::TooFewPoints {
            required: 3,
            actual: x.len(),
        });
    }
    let tree = KdTree::new(y.points());
    let mut current = cfg.init;
    let (mut nn, mut mse) = matches(x, &tree, &current);
    let mut history = vec![mse];
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        if mse == T::zero() {
            break;
        }
        let dst: Vec<Point3<T>> = nn.iter().map(|&j| *y.point(j)).collect();
        current = kabsch(x.points(), &dst)?;
        let (next_nn, next_mse) = matches(x, &tree, &current);
        let delta = (mse - next_mse).abs();
        nn = next_nn;
        mse = next_mse;
        history.push(mse);
        if delta < cfg.tol {
            break;
        }
    }
    Ok(IcpResult {
        transform: current,
        iterations,
        mse,
        history,
    })
}
