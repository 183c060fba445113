//! Self-supervised objective on the soft correspondence matrix: a hard
//! mapping term on the diagonal plus confidence-weighted positive and
//! negative margin hinges over the target's Euclidean neighborhoods.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom3d::{knn, NeighborhoodIndex, PointCloud};
use crate::scalar::Real;
use crate::softcorr::SoftCorrespondence;

/// Euclidean kNN sets of the target cloud; the complement excludes the
/// point itself.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencySets {
    neighbors: NeighborhoodIndex,
    /// `mask[i * n + j]` is true iff `j ∈ 𝒩_i`.
    mask: Vec<bool>,
}

impl AdjacencySets {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn k(&self) -> usize {
        self.neighbors.k()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.neighbors.row(i)
    }

    pub fn is_neighbor(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.len() + j]
    }

    /// `Σ A`.
    pub fn positive_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// `Σ Ā`, off-diagonal non-neighbors.
    pub fn negative_count(&self) -> usize {
        let n = self.len();
        n * n - n - self.positive_count()
    }
}

pub fn build_adjacency<T: Real>(y: &PointCloud<T>, k_loss: usize) -> Result<AdjacencySets> {
    let neighbors = knn(y, k_loss, false)?;
    let n = y.len();
    let mut mask = vec![false; n * n];
    for (i, row) in neighbors.rows().enumerate() {
        for &j in row {
            mask[i * n + j] = true;
        }
    }
    Ok(AdjacencySets { neighbors, mask })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub l_h: f64,
    pub l_pq: f64,
    pub l_nq: f64,
    pub l_c: f64,
}

fn check_margins(m_p: f64, m_n: f64) -> Result<()> {
    if !(0.0 <= m_n && m_n < m_p && m_p <= 1.0) {
        return Err(Error::MarginOrder { m_p, m_n });
    }
    Ok(())
}

fn check_square<T: Real>(p: &SoftCorrespondence<T>, n: usize) -> Result<()> {
    if p.rows() != n || p.cols() != n {
        return Err(Error::ShapeMismatch {
            context: "loss correspondence",
            expected: format!("{n}x{n}"),
            actual: format!("{}x{}", p.rows(), p.cols()),
        });
    }
    Ok(())
}

/// `(1/N) Σ_i (1 − P_ii)`.
pub fn hard_loss<T: Real>(p: &SoftCorrespondence<T>) -> Result<T> {
    check_square(p, p.rows())?;
    let n = p.rows();
    let sum = (0..n).fold(T::zero(), |acc, i| acc + T::one() - p.get(i, i));
    Ok(sum / T::from_count(n))
}

struct Normalizers<T> {
    pos: T,
    neg: T,
}

fn normalizers<T: Real>(adj: &AdjacencySets, w: &[usize]) -> Normalizers<T> {
    let q = T::from_count(w.iter().sum());
    let guard = |v: T| {
        if v > T::zero() {
            T::one() / v
        } else {
            T::zero()
        }
    };
    Normalizers {
        pos: guard(q * T::from_count(adj.positive_count())),
        neg: guard(q * T::from_count(adj.negative_count())),
    }
}

fn check_inputs<T: Real>(
    p: &SoftCorrespondence<T>,
    adj: &AdjacencySets,
    w: &[usize],
    m_p: f64,
    m_n: f64,
) -> Result<()> {
    check_margins(m_p, m_n)?;
    check_square(p, adj.len())?;
    if w.len() != adj.len() {
        return Err(Error::ShapeMismatch {
            context: "bag weights",
            expected: adj.len().to_string(),
            actual: w.len().to_string(),
        });
    }
    Ok(())
}

/// Weighted positive and negative hinge losses `(ℒ_pQ, ℒ_nQ)`.
pub fn contrastive_losses<T: Real>(
    p: &SoftCorrespondence<T>,
    adj: &AdjacencySets,
    w: &[usize],
    m_p: f64,
    m_n: f64,
) -> Result<(T, T)> {
    check_inputs(p, adj, w, m_p, m_n)?;
    let (mp, mn) = (T::lit(m_p), T::lit(m_n));
    let n = adj.len();
    let norm = normalizers::<T>(adj, w);
    let (mut lp, mut ln) = (T::zero(), T::zero());
    for (i, &wi) in w.iter().enumerate().filter(|(_, &wi)| wi > 0) {
        let (mut pi, mut ni) = (T::zero(), T::zero());
        for j in (0..n).filter(|&j| j != i) {
            let v = p.get(i, j);
            if adj.is_neighbor(i, j) {
                pi += (mp - v).max(T::zero());
            } else {
                ni += (v - mn).max(T::zero());
            }
        }
        lp += T::from_count(wi) * pi;
        ln += T::from_count(wi) * ni;
    }
    Ok((lp * norm.pos, ln * norm.neg))
}

/// `ℒ_C = ℒ_h + ℒ_pQ + ℒ_nQ` and its gradient with respect to every entry of `P`.
///
/// Hinge subgradients are 0 exactly at the kink.
pub fn total_loss<T: Real>(
    p: &SoftCorrespondence<T>,
    adj: &AdjacencySets,
    w: &[usize],
    m_p: f64,
    m_n: f64,
) -> Result<(LossReport, SoftCorrespondence<T>)> {
    let l_h = hard_loss(p)?;
    let (l_pq, l_nq) = contrastive_losses(p, adj, w, m_p, m_n)?;
    let (mp, mn) = (T::lit(m_p), T::lit(m_n));
    let n = adj.len();
    let norm = normalizers::<T>(adj, w);
    let mut dp = vec![T::zero(); n * n];
    let diag = -T::one() / T::from_count(n);
    for i in 0..n {
        dp[i * n + i] = diag;
        let wi = w[i];
        if wi == 0 {
            continue;
        }
        let wt = T::from_count(wi);
        for j in (0..n).filter(|&j| j != i) {
            let v = p.get(i, j);
            dp[i * n + j] = if adj.is_neighbor(i, j) {
                if mp - v > T::zero() {
                    -wt * norm.pos
                } else {
                    T::zero()
                }
            } else if v - mn > T::zero() {
                wt * norm.neg
            } else {
                T::zero()
            };
        }
    }
    let report = LossReport {
        l_h: l_h.as_f64(),
        l_pq: l_pq.as_f64(),
        l_nq: l_nq.as_f64(),
        l_c: (l_h + l_pq + l_nq).as_f64(),
    };
    Ok((report, SoftCorrespondence::from_values(n, n, dp)?))
}
