use std::cmp::Ordering;

use crate::geom3d::Point3;
use crate::scalar::Real;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
enum Node<T> {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: T,
        left: usize,
        right: usize,
    },
}

/// Exact 3D kd-tree with bucketed leaves.
///
/// Query results are ordered by squared distance, ties resolved towards the
/// lower point index, so answers match an exhaustive scan exactly.
#[derive(Clone, Debug)]
pub struct KdTree<T: Real> {
    points: Vec<Point3<T>>,
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

#[inline]
fn key_less<T: Real>(a: (T, usize), b: (T, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Bounded candidate list kept sorted by (distance², index).
struct Candidates<T> {
    k: usize,
    items: Vec<(T, usize)>,
}

impl<T: Real> Candidates<T> {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    #[inline]
    fn full(&self) -> bool {
        self.items.len() == self.k
    }

    #[inline]
    fn worst(&self) -> T {
        self.items
            .last()
            .map(|c| c.0)
            .unwrap_or_else(T::max_value_or_inf)
    }

    #[inline]
    fn offer(&mut self, cand: (T, usize)) {
        if self.full() && !key_less(cand, *self.items.last().expect("k >= 1")) {
            return;
        }
        let pos = self.items.partition_point(|&c| key_less(c, cand));
        self.items.insert(pos, cand);
        self.items.truncate(self.k);
    }
}

trait MaxValue {
    fn max_value_or_inf() -> Self;
}

impl<T: Real> MaxValue for T {
    fn max_value_or_inf() -> Self {
        T::max_value().unwrap_or_else(|| T::lit(f64::INFINITY))
    }
}

impl<T: Real> KdTree<T> {
    pub fn new(points: &[Point3<T>]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // split along the axis of largest extent
        let mut lo = self.points[self.order[start]];
        let mut hi = lo;
        for &i in &self.order[start..end] {
            let p = &self.points[i];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = hi - lo;
        let axis = (0..3)
            .max_by(|&a, &b| extent[a].partial_cmp(&extent[b]).unwrap_or(Ordering::Equal))
            .unwrap_or(0);
        let mid = (start + end) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis]
                .partial_cmp(&points[b][axis])
                .unwrap_or(Ordering::Equal)
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    fn search(
        &self,
        node: usize,
        q: &Point3<T>,
        exclude: Option<usize>,
        cands: &mut Candidates<T>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    cands.offer(((self.points[i] - q).norm_squared(), i));
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < T::zero() {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, exclude, cands);
                if !cands.full() || diff * diff <= cands.worst() {
                    self.search(far, q, exclude, cands);
                }
            }
        }
    }

    /// The `k` nearest points to `q` as `(squared distance, index)` pairs,
    /// optionally skipping one index. Returns fewer than `k` entries only when
    /// the tree holds fewer candidates.
    pub fn knn(&self, q: &Point3<T>, k: usize, exclude: Option<usize>) -> Vec<(T, usize)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut cands = Candidates::new(k);
        self.search(0, q, exclude, &mut cands);
        cands.items
    }

    /// Nearest point to `q` as `(squared distance, index)`.
    ///
    /// Panics if the tree is empty or every point is excluded.
    pub fn nearest(&self, q: &Point3<T>, exclude: Option<usize>) -> (T, usize) {
        self.knn(q, 1, exclude)
            .into_iter()
            .next()
            .expect("nearest query on an empty tree")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(
        points: &[Point3<f64>],
        q: &Point3<f64>,
        k: usize,
        exclude: Option<usize>,
    ) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(i, p)| ((p - q).norm_squared(), i))
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all.truncate(k);
        all
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn matches_exhaustive_scan(
            coords in prop::collection::vec((-5i32..5, -5i32..5, -5i32..5), 1..500),
            k in 1usize..20,
        ) {
            // integer grid coordinates produce many exact distance ties
            let points: Vec<Point3<f64>> = coords
                .iter()
                .map(|&(x, y, z)| Point3::new(x as f64 * 0.25, y as f64 * 0.25, z as f64 * 0.25))
                .collect();
            let tree = KdTree::new(&points);
            for (i, q) in points.iter().enumerate().step_by(7) {
                prop_assert_eq!(tree.knn(q, k, Some(i)), brute(&points, q, k, Some(i)));
                prop_assert_eq!(tree.knn(q, k, None), brute(&points, q, k, None));
            }
        }
    }

    #[test]
    fn duplicates_resolve_by_index() {
        let points = vec![Point3::new(1.0, 1.0, 1.0); 20];
        let tree = KdTree::new(&points);
        let got: Vec<usize> = tree
            .knn(&points[0], 5, Some(3))
            .into_iter()
            .map(|c| c.1)
            .collect();
        assert_eq!(got, vec![0, 1, 2, 4, 5]);
    }
}
