//! Closed-form rigid alignment and the confidence-weighted consensus
//! registrar, plus the full and top-k registrars used in ablations.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom3d::{
    apply_transform, chamfer_with_target_tree, KdTree, Point3, PointCloud, RigidTransform,
    TransformRecord,
};
use crate::scalar::Real;
use crate::softcorr::{confidence, hard_map, SampleBag, SoftCorrespondence};

/// Relative singular-value floor below which a covariance counts as rank < 2.
const RANK_TOL: f64 = 1e-9;

/// Kabsch solution plus a flag for collinear or coincident input.
#[derive(Clone, Debug, PartialEq)]
pub struct KabschFit<T: Real> {
    pub transform: RigidTransform<T>,
    pub degenerate: bool,
}

/// Least-squares rigid transform mapping `src[i]` onto `dst[i]`; the flag
/// marks inputs whose cross-covariance has rank < 2.
pub fn kabsch_fit<T: Real>(src: &[Point3<T>], dst: &[Point3<T>]) -> Result<KabschFit<T>> {
    if src.len() != dst.len() {
        return Err(Error::LengthMismatch {
            src: src.len(),
            dst: dst.len(),
        });
    }
    if src.len() < 3 {
        return Err(Error::TooFewPoints {
            required: 3,
            actual: src.len(),
        });
    }
    let n = T::from_count(src.len());
    let xm = src.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let ym = dst.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut h = Matrix3::zeros();
    for (x, y) in src.iter().zip(dst) {
        h += (x - xm) * (y - ym).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v = svd.v_t.expect("svd computed with v").transpose();
    let d = if (v * u.transpose()).determinant() < T::zero() {
        -T::one()
    } else {
        T::one()
    };
    let r = v * Matrix3::from_diagonal(&Vector3::new(T::one(), T::one(), d)) * u.transpose();
    let t = ym - r * xm;
    let sv = svd.singular_values;
    let top = sv.max();
    let degenerate = !(top > T::zero()) || sv[1] <= top * T::lit(RANK_TOL);
    Ok(KabschFit {
        transform: RigidTransform::new(r, t),
        degenerate,
    })
}

pub fn kabsch<T: Real>(src: &[Point3<T>], dst: &[Point3<T>]) -> Result<RigidTransform<T>> {
    kabsch_fit(src, dst).map(|f| f.transform)
}

fn pairs<T: Real>(
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    map: &[usize],
    idx: &[usize],
) -> (Vec<Point3<T>>, Vec<Point3<T>>) {
    idx.iter().map(|&i| (*x.point(i), *y.point(map[i]))).unzip()
}

fn check_map<T: Real>(x: &PointCloud<T>, y: &PointCloud<T>, map: &[usize]) -> Result<()> {
    if map.len() != x.len() {
        return Err(Error::LengthMismatch {
            src: x.len(),
            dst: map.len(),
        });
    }
    if let Some(&j) = map.iter().find(|&&j| j >= y.len()) {
        return Err(Error::invalid(
            "map",
            format!("target index {j} out of range for {} points", y.len()),
        ));
    }
    Ok(())
}

/// One consensus experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult<T: Real> {
    pub transform: RigidTransform<T>,
    /// Chamfer distance after alignment; `+∞` for degenerate groups.
    pub score: T,
    pub group: Vec<usize>,
}

/// Splits a shuffled copy of the bag into `k_groups` groups of `⌊|Q|/k⌋`
/// indices, each sorted ascending.
pub fn draw_groups<R: Rng + ?Sized>(
    bag: &SampleBag,
    k_groups: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if k_groups == 0 {
        return Err(Error::invalid("k_groups", "must be >= 1"));
    }
    let r = bag.len() / k_groups;
    if r < 3 {
        return Err(Error::invalid(
            "k_groups",
            format!("group size |Q|/k = {}/{k_groups} is below 3", bag.len()),
        ));
    }
    let mut shuffled = bag.indices.clone();
    shuffled.shuffle(rng);
    Ok(shuffled
        .chunks_exact(r)
        .take(k_groups)
        .map(|c| {
            let mut g = c.to_vec();
            g.sort_unstable();
            g
        })
        .collect())
}

/// Consensus voting given an explicit correspondence map `π`.
pub fn consensus_with_map<T: Real, R: Rng + ?Sized>(
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    map: &[usize],
    bag: &SampleBag,
    k_groups: usize,
    rng: &mut R,
) -> Result<(RigidTransform<T>, Vec<ExperimentResult<T>>)> {
    check_map(x, y, map)?;
    if let Some(&i) = bag.indices.iter().find(|&&i| i >= x.len()) {
        return Err(Error::invalid(
            "bag",
            format!("source index {i} out of range"),
        ));
    }
    let groups = draw_groups(bag, k_groups, rng)?;
    let tree_y = KdTree::new(y.points());
    let results: Vec<ExperimentResult<T>> = groups
        .into_par_iter()
        .map(|group| {
            let (src, dst) = pairs(x, y, map, &group);
            let fit = kabsch_fit(&src, &dst).expect("group holds >= 3 pairs");
            let score = if fit.degenerate {
                T::lit(f64::INFINITY)
            } else {
                chamfer_with_target_tree(&apply_transform(x, &fit.transform), y, &tree_y)
            };
            ExperimentResult {
                transform: fit.transform,
                score,
                group,
            }
        })
        .collect();
    let best = results.iter().enumerate().fold(0, |best, (i, e)| {
        if e.score < results[best].score {
            i
        } else {
            best
        }
    });
    Ok((results[best].transform, results))
}

/// Samples `k_groups` groups from the bag, solves Kabsch on each against
/// `π = hard_map(P)` and keeps the candidate with the lowest full-cloud
/// chamfer distance. Groups are solved in parallel; ties go to the earliest group.
pub fn consensus_register<T: Real, R: Rng + ?Sized>(
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    p: &SoftCorrespondence<T>,
    bag: &SampleBag,
    k_groups: usize,
    rng: &mut R,
) -> Result<(RigidTransform<T>, Vec<ExperimentResult<T>>)> {
    check_shape(x, y, p)?;
    consensus_with_map(x, y, &hard_map(p), bag, k_groups, rng)
}

fn check_shape<T: Real>(
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    p: &SoftCorrespondence<T>,
) -> Result<()> {
    if p.rows() != x.len() || p.cols() != y.len() {
        return Err(Error::ShapeMismatch {
            context: "correspondence vs clouds",
            expected: format!("{}x{}", x.len(), y.len()),
            actual: format!("{}x{}", p.rows(), p.cols()),
        });
    }
    Ok(())
}

/// Kabsch over all `N` pairs `(x_i, y_π(i))`.
pub fn full_register<T: Real>(
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    p: &SoftCorrespondence<T>,
) -> Result<RigidTransform<T>> {
    check_shape(x, y, p)?;
    let all: Vec<usize> = (0..x.len()).collect();
    let (src, dst) = pairs(x, y, &hard_map(p), &all);
    kabsch(&src, &dst)
}

/// Source indices of the `k_top` most confident points (ties to lower
/// index), returned ascending.
pub fn top_confident(p_m: &[impl Real], k_top: usize) -> Result<Vec<usize>> {
    if k_top < 3 || k_top > p_m.len() {
        return Err(Error::invalid(
            "k_top",
            format!("must lie in [3, {}], got {k_top}", p_m.len()),
        ));
    }
    let mut order: Vec<usize> = (0..p_m.len()).collect();
    order.sort_by(|&a, &b| {
        p_m[b]
            .partial_cmp(&p_m[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut chosen = order[..k_top].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Kabsch over the `k_top` highest-confidence source points.
pub fn topk_register<T: Real>(
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    p: &SoftCorrespondence<T>,
    k_top: usize,
) -> Result<RigidTransform<T>> {
    check_shape(x, y, p)?;
    let dist = confidence(p)?;
    let chosen = top_confident(&dist.p_m, k_top)?;
    let (src, dst) = pairs(x, y, &hard_map(p), &chosen);
    kabsch(&src, &dst)
}

#[derive(Serialize)]
struct ExperimentRecord<'a> {
    #[serde(flatten)]
    transform: TransformRecord,
    /// `null` marks a degenerate group.
    score: Option<f64>,
    group: &'a [usize],
}

/// Writes every experiment as a JSON array.
pub fn write_experiments_json<T: Real>(path: &Path, results: &[ExperimentResult<T>]) -> Result<()> {
    let records: Vec<ExperimentRecord> = results
        .iter()
        .map(|e| ExperimentRecord {
            transform: TransformRecord::from(&e.transform),
            score: Some(e.score.as_f64()).filter(|s| s.is_finite()),
            group: &e.group,
        })
        .collect();
    let text = serde_json::to_string_pretty(&records)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
