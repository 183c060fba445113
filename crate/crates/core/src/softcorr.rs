//! Soft correspondence between two embeddings, the hard map derived from it,
//! the per-point confidence and confidence-driven sampling.

use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::fen::Embedding;
use crate::scalar::Real;

/// Row-major `N_x × N_y` cosine similarity matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftCorrespondence<T: Real> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Real> SoftCorrespondence<T> {
    pub fn from_values(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                context: "soft correspondence",
                expected: format!("{rows}x{cols}"),
                actual: values.len().to_string(),
            });
        }
        Ok(Self { rows, cols, values })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

/// Euclidean row norms, with zero rows reported as zero.
fn row_norms<T: Real>(h: &Embedding<T>) -> Vec<T> {
    (0..h.rows())
        .map(|i| {
            h.row(i)
                .iter()
                .fold(T::zero(), |acc, &v| acc + v * v)
                .sqrt()
        })
        .collect()
}

/// `P_ij = cos(hx_i, hy_j)`; rows with zero norm are similar to nothing (0).
pub fn soft_correspondence<T: Real>(
    hx: &Embedding<T>,
    hy: &Embedding<T>,
) -> Result<SoftCorrespondence<T>> {
    if hx.cols() != hy.cols() {
        return Err(Error::ShapeMismatch {
            context: "embedding width",
            expected: hx.cols().to_string(),
            actual: hy.cols().to_string(),
        });
    }
    let nx = row_norms(hx);
    let ny = row_norms(hy);
    let mut values = Vec::with_capacity(hx.rows() * hy.rows());
    for i in 0..hx.rows() {
        let a = hx.row(i);
        for j in 0..hy.rows() {
            let denom = nx[i] * ny[j];
            if denom == T::zero() {
                values.push(T::zero());
                continue;
            }
            let b = hy.row(j);
            let dot = a.iter().zip(b).fold(T::zero(), |acc, (&u, &v)| acc + u * v);
            let c = dot / denom;
            values.push(c.max(-T::one()).min(T::one()));
        }
    }
    SoftCorrespondence::from_values(hx.rows(), hy.rows(), values)
}

/// Gradients of a scalar loss with respect to both embeddings, given
/// `dP = ∂loss/∂P`.
///
/// For `P_ij = âᵢ·b̂ⱼ`: `∂/∂aᵢ = (Σⱼ dP_ij b̂ⱼ − (Σⱼ dP_ij P_ij) âᵢ) / ‖aᵢ‖`, and
/// symmetrically for `bⱼ`. Zero-norm rows receive zero gradient.
pub fn cosine_backward<T: Real>(
    hx: &Embedding<T>,
    hy: &Embedding<T>,
    p: &SoftCorrespondence<T>,
    dp: &SoftCorrespondence<T>,
) -> Result<(Embedding<T>, Embedding<T>)> {
    if dp.rows != p.rows || dp.cols != p.cols || p.rows != hx.rows() || p.cols != hy.rows() {
        return Err(Error::ShapeMismatch {
            context: "cosine backward",
            expected: format!("{}x{}", hx.rows(), hy.rows()),
            actual: format!("{}x{}", dp.rows, dp.cols),
        });
    }
    let w = hx.cols();
    let nx = row_norms(hx);
    let ny = row_norms(hy);
    let unit = |h: &Embedding<T>, norms: &[T]| {
        let mut u = h.clone();
        for (i, &n) in norms.iter().enumerate() {
            let inv = if n == T::zero() {
                T::zero()
            } else {
                T::one() / n
            };
            u.row_mut(i).iter_mut().for_each(|v| *v *= inv);
        }
        u
    };
    let ux = unit(hx, &nx);
    let uy = unit(hy, &ny);
    let mut dx = Embedding::zeros(hx.rows(), w);
    let mut dy = Embedding::zeros(hy.rows(), w);
    let mut col_scale = vec![T::zero(); hy.rows()];
    for i in 0..hx.rows() {
        let mut row_scale = T::zero();
        let dxi = dx.row_mut(i);
        for j in 0..hy.rows() {
            let g = dp.get(i, j);
            if g == T::zero() {
                continue;
            }
            row_scale += g * p.get(i, j);
            col_scale[j] += g * p.get(i, j);
            for (d, &v) in dxi.iter_mut().zip(uy.row(j)) {
                *d += g * v;
            }
        }
        if nx[i] == T::zero() {
            dxi.iter_mut().for_each(|v| *v = T::zero());
            continue;
        }
        let inv = T::one() / nx[i];
        for (d, &u) in dxi.iter_mut().zip(ux.row(i)) {
            *d = (*d - row_scale * u) * inv;
        }
    }
    for i in 0..hx.rows() {
        let uxi = ux.row(i);
        for j in 0..hy.rows() {
            let g = dp.get(i, j);
            if g == T::zero() {
                continue;
            }
            for (d, &v) in dy.row_mut(j).iter_mut().zip(uxi) {
                *d += g * v;
            }
        }
    }
    for j in 0..hy.rows() {
        let dyj = dy.row_mut(j);
        if ny[j] == T::zero() {
            dyj.iter_mut().for_each(|v| *v = T::zero());
            continue;
        }
        let inv = T::one() / ny[j];
        for (d, &u) in dyj.iter_mut().zip(uy.row(j)) {
            *d = (*d - col_scale[j] * u) * inv;
        }
    }
    Ok((dx, dy))
}

/// Row-wise argmax `π(i)`, ties resolved to the lowest column.
pub fn hard_map<T: Real>(p: &SoftCorrespondence<T>) -> Vec<usize> {
    (0..p.rows)
        .map(|i| {
            let row = p.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Per-point confidence `p_m` and the sampling PMF `s` derived from it.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceDistribution<T: Real> {
    pub p_m: Vec<T>,
    pub s: Vec<T>,
}

impl<T: Real> ConfidenceDistribution<T> {
    /// Normalizes nonnegative confidences; all-zero input yields a uniform PMF.
    pub fn from_confidences(p_m: Vec<T>) -> Result<Self> {
        if p_m.is_empty() {
            return Err(Error::invalid("p_m", "empty confidence vector"));
        }
        if p_m.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
            return Err(Error::invalid(
                "p_m",
                "confidences must be finite and nonnegative",
            ));
        }
        let total = p_m.iter().fold(T::zero(), |acc, &v| acc + v);
        let s = if total > T::zero() {
            p_m.iter().map(|&v| v / total).collect()
        } else {
            vec![T::one() / T::from_count(p_m.len()); p_m.len()]
        };
        Ok(Self { p_m, s })
    }

    /// Uniform distribution over `n` points (confidence sampling switched off).
    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_confidences(vec![T::one(); n])
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

/// `p_m_i = max(0, max_j P_ij)` normalized into a PMF.
pub fn confidence<T: Real>(p: &SoftCorrespondence<T>) -> Result<ConfidenceDistribution<T>> {
    let p_m = (0..p.rows)
        .map(|i| p.row(i).iter().fold(T::zero(), |acc, &v| acc.max(v)))
        .collect();
    ConfidenceDistribution::from_confidences(p_m)
}

/// Multiset of sampled source indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleBag {
    pub indices: Vec<usize>,
}

impl SampleBag {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Draws `size` i.i.d. indices from `dist.s`, with replacement.
pub fn sample_bag<T: Real, R: Rng + ?Sized>(
    dist: &ConfidenceDistribution<T>,
    size: usize,
    rng: &mut R,
) -> Result<SampleBag> {
    if size == 0 {
        return Err(Error::invalid(
            "size",
            "sample bag must hold at least one index",
        ));
    }
    let weights: Vec<f64> = dist.s.iter().map(|v| v.as_f64()).collect();
    let sampler = WeightedIndex::new(&weights).map_err(|e| Error::invalid("s", e.to_string()))?;
    Ok(SampleBag {
        indices: (0..size).map(|_| sampler.sample(rng)).collect(),
    })
}

/// Multiplicity of each source index in the bag.
pub fn bag_weights(bag: &SampleBag, n_source: usize) -> Result<Vec<usize>> {
    let mut w = vec![0usize; n_source];
    for &i in &bag.indices {
        *w.get_mut(i).ok_or_else(|| {
            Error::invalid(
                "bag",
                format!("index {i} out of range for {n_source} source points"),
            )
        })? += 1;
    }
    Ok(w)
}

/// Writes `P` as CSV, one row per source point.
pub fn write_correspondence_csv<T: Real>(path: &Path, p: &SoftCorrespondence<T>) -> Result<()> {
    let mut out = String::new();
    for i in 0..p.rows {
        let line: Vec<String> = p.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes `index,p_m,s` rows.
pub fn write_confidence_csv<T: Real>(path: &Path, dist: &ConfidenceDistribution<T>) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::from("index,p_m,s\n");
    for (i, (pm, s)) in dist.p_m.iter().zip(&dist.s).enumerate() {
        out.push_str(&format!("{i},{pm},{s}\n"));
    }
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn emb(rows: usize, cols: usize, seed: u64) -> Embedding<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Embedding::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_unit_rows_give_unit_diagonal() {
        let h =
            Embedding::from_vec(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let p = soft_correspondence(&h, &h).unwrap();
        for i in 0..3 {
            assert_eq!(p.get(i, i), 1.0);
            for j in 0..3 {
                if i != j {
                    assert_eq!(p.get(i, j), 0.0);
                }
            }
        }
        assert_eq!(hard_map(&p), vec![0, 1, 2]);
    }

    #[test]
    fn matches_double_loop_oracle() {
        let a = emb(8, 4, 1);
        let b = emb(6, 4, 2);
        let p = soft_correspondence(&a, &b).unwrap();
        for i in 0..8 {
            for j in 0..6 {
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for c in 0..4 {
                    dot += a.row(i)[c] * b.row(j)[c];
                    na += a.row(i)[c] * a.row(i)[c];
                    nb += b.row(j)[c] * b.row(j)[c];
                }
                assert!((p.get(i, j) - dot / (na.sqrt() * nb.sqrt())).abs() <= 1e-12);
            }
        }
        assert!(soft_correspondence(&a, &emb(6, 5, 3)).is_err());
    }

    #[test]
    fn zero_rows_are_dissimilar() {
        let a = Embedding::from_vec(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let p = soft_correspondence(&a, &a).unwrap();
        assert_eq!(p.row(0), &[0.0, 0.0]);
        assert_eq!(p.get(1, 0), 0.0);
    }

    #[test]
    fn hard_map_examples() {
        let p = SoftCorrespondence::from_values(2, 3, vec![0.5; 6]).unwrap();
        assert_eq!(hard_map(&p), vec![0, 0]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vals: Vec<f64> = (0..70).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = SoftCorrespondence::from_values(7, 10, vals.clone()).unwrap();
        let oracle: Vec<usize> = (0..7)
            .map(|i| {
                let mut best = (f64::NEG_INFINITY, 0);
                for j in 0..10 {
                    if vals[i * 10 + j] > best.0 {
                        best = (vals[i * 10 + j], j);
                    }
                }
                best.1
            })
            .collect();
        assert_eq!(hard_map(&p), oracle);
    }

    #[test]
    fn confidence_examples() {
        let p = SoftCorrespondence::from_values(2, 2, vec![0.9, 0.1, -0.2, -0.5]).unwrap();
        let c = confidence(&p).unwrap();
        assert_eq!(c.p_m, vec![0.9, 0.0]);
        assert_eq!(c.s, vec![1.0, 0.0]);

        let neg = SoftCorrespondence::from_values(2, 2, vec![-0.1; 4]).unwrap();
        let c = confidence(&neg).unwrap();
        assert_eq!(c.s, vec![0.5, 0.5]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = confidence(&SoftCorrespondence::from_values(20, 20, vals).unwrap()).unwrap();
        assert!((c.s.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn sampling_examples() {
        let point_mass =
            ConfidenceDistribution::from_confidences(vec![0.0, 0.0, 0.0, 0.7, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bag = sample_bag(&point_mass, 50, &mut rng).unwrap();
        assert!(bag.indices.iter().all(|&i| i == 3));

        let two = ConfidenceDistribution::<f64>::uniform(2).unwrap();
        let bag = sample_bag(&two, 100_000, &mut rng).unwrap();
        let ones = bag.indices.iter().filter(|&&i| i == 1).count() as f64 / 1e5;
        assert!((ones - 0.5).abs() < 0.02 * 0.5);

        let d = ConfidenceDistribution::from_confidences(vec![0.3, 0.9, 0.1]).unwrap();
        let a = sample_bag(&d, 40, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_bag(&d, 40, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(sample_bag(&d, 0, &mut rng).is_err());
    }

    #[test]
    fn bag_weight_examples() {
        let w = bag_weights(
            &SampleBag {
                indices: vec![0, 0, 1],
            },
            3,
        )
        .unwrap();
        assert_eq!(w, vec![2, 1, 0]);
        assert!(bag_weights(&SampleBag { indices: vec![3] }, 3).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let d = ConfidenceDistribution::<f64>::uniform(17).unwrap();
        let bag = sample_bag(&d, 123, &mut rng).unwrap();
        let w = bag_weights(&bag, 17).unwrap();
        assert_eq!(w.iter().sum::<usize>(), 123);
        let mut hist = vec![0usize; 17];
        for &i in &bag.indices {
            hist[i] += 1;
        }
        assert_eq!(w, hist);
    }

    #[test]
    fn cosine_backward_matches_finite_differences() {
        let a = emb(5, 4, 11);
        let b = emb(6, 4, 12);
        let g = emb(5, 6, 13);
        let probe = |a: &Embedding<f64>, b: &Embedding<f64>| {
            let p = soft_correspondence(a, b).unwrap();
            p.values()
                .iter()
                .zip(g.as_slice())
                .map(|(u, v)| u * v)
                .sum::<f64>()
        };
        let p = soft_correspondence(&a, &b).unwrap();
        let dp = SoftCorrespondence::from_values(5, 6, g.as_slice().to_vec()).unwrap();
        let (da, db) = cosine_backward(&a, &b, &p, &dp).unwrap();
        let eps = 1e-6;
        for idx in 0..20 {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap.as_mut_slice()[idx] += eps;
            am.as_mut_slice()[idx] -= eps;
            let num = (probe(&ap, &b) - probe(&am, &b)) / (2.0 * eps);
            assert!((num - da.as_slice()[idx]).abs() < 1e-8);
        }
        for idx in 0..24 {
            let mut bp = b.clone();
            let mut bm = b.clone();
            bp.as_mut_slice()[idx] += eps;
            bm.as_mut_slice()[idx] -= eps;
            let num = (probe(&a, &bp) - probe(&a, &bm)) / (2.0 * eps);
            assert!((num - db.as_slice()[idx]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn positive_row_scaling_leaves_everything_unchanged(
            seed in 0u64..1000,
            scales in prop::collection::vec(0.01f64..100.0, 6),
        ) {
            let a = emb(6, 5, seed);
            let b = emb(7, 5, seed + 1);
            let mut scaled = a.clone();
            for (i, s) in scales.iter().enumerate() {
                scaled.row_mut(i).iter_mut().for_each(|v| *v *= s);
            }
            let p = soft_correspondence(&a, &b).unwrap();
            let q = soft_correspondence(&scaled, &b).unwrap();
            for (u, v) in p.values().iter().zip(q.values()) {
                prop_assert!((u - v).abs() <= 1e-12);
            }
            prop_assert_eq!(hard_map(&p), hard_map(&q));
            let (cp, cq) = (confidence(&p).unwrap(), confidence(&q).unwrap());
            for (u, v) in cp.s.iter().zip(&cq.s) {
                prop_assert!((u - v).abs() <= 1e-12);
            }
        }

        #[test]
        fn hard_map_invariant_to_increasing_row_maps(
            seed in 0u64..1000,
            slopes in prop::collection::vec(0.1f64..10.0, 5),
            offsets in prop::collection::vec(-3.0f64..3.0, 5),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mapped: Vec<f64> = vals.iter().enumerate().map(|(k, v)| slopes[k / 8] * v + offsets[k / 8]).collect();
            let p = SoftCorrespondence::from_values(5, 8, vals).unwrap();
            let q = SoftCorrespondence::from_values(5, 8, mapped).unwrap();
            prop_assert_eq!(hard_map(&p), hard_map(&q));
        }

        #[test]
        fn pmf_invariant_to_rescaling(pm in prop::collection::vec(0.0f64..1.0, 1..30), scale in 0.01f64..100.0) {
            let a = ConfidenceDistribution::from_confidences(pm.clone()).unwrap();
            let b = ConfidenceDistribution::from_confidences(pm.iter().map(|v| v * scale).collect()).unwrap();
            for (u, v) in a.s.iter().zip(&b.s) {
                prop_assert!((u - v).abs() <= 1e-12);
            }
        }
    }
}
