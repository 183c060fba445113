use crate::error::{Error, Result};
use crate::fen::matrix::{gemm_nn, gemm_nt, gemm_tn, Matrix};
use crate::fen::{BranchSlots, Embedding, FenConfig, FenModel, GraphMode, LEAKY_SLOPE};
use crate::geom3d::{knn, NeighborhoodIndex, PointCloud};
use crate::ri_desc::FeatureTensor;
use crate::scalar::Real;

#[inline]
fn leaky<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        v * T::lit(LEAKY_SLOPE)
    }
}

#[inline]
fn leaky_grad<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else {
        T::lit(LEAKY_SLOPE)
    }
}

/// Intermediates of one edge-convolution branch.
#[derive(Clone, Debug)]
struct BranchCache<T: Real> {
    /// Max pre-activation of the first edge layer, `N × edge_width`.
    pre1: Vec<T>,
    /// Neighbor slot attaining `pre1`.
    arg1: Vec<usize>,
    h1: Vec<T>,
    graph: NeighborhoodIndex,
    /// Max pre-activation of the second edge layer, `N × out`.
    pre2: Vec<T>,
    /// Neighbor point index attaining `pre2`.
    arg2: Vec<usize>,
    out: Vec<T>,
}

#[derive(Clone, Debug)]
struct GlobalCache<T: Real> {
    branch: BranchCache<T>,
    pooled: Vec<T>,
    /// Point index attaining each pooled channel.
    arg: Vec<usize>,
}

/// Intermediates recorded by [`FenModel::forward`] for the reverse pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T: Real> {
    config: FenConfig,
    n: usize,
    k_desc: usize,
    features: Vec<T>,
    local: BranchCache<T>,
    global: Option<GlobalCache<T>>,
    fuse_pre: Vec<T>,
    fuse_act: Vec<T>,
}

impl<T: Real> ForwardCache<T> {
    pub fn num_points(&self) -> usize {
        self.n
    }

    /// Graph used by the local branch's second edge layer.
    pub fn local_graph(&self) -> &NeighborhoodIndex {
        &self.local.graph
    }

    /// Every discrete choice of the pass: max/argmax winners, graph
    /// neighbors and leaky-ReLU branches. Gradients from
    /// [`FenModel::backward`] are exact derivatives only on parameter
    /// neighborhoods where this pattern does not change.
    pub fn activation_pattern(&self) -> Vec<usize> {
        fn branch<T: Real>(b: &BranchCache<T>, out: &mut Vec<usize>) {
            out.extend_from_slice(&b.arg1);
            out.extend_from_slice(&b.arg2);
            out.extend_from_slice(b.graph.as_flat());
            out.extend(
                b.pre1
                    .iter()
                    .chain(&b.pre2)
                    .map(|&v| usize::from(v > T::zero())),
            );
        }
        let mut out = Vec::new();
        branch(&self.local, &mut out);
        if let Some(g) = &self.global {
            branch(&g.branch, &mut out);
            out.extend_from_slice(&g.arg);
        }
        out.extend(self.fuse_pre.iter().map(|&v| usize::from(v > T::zero())));
        out
    }
}

/// Exact kNN among the rows of an `n × w` feature matrix, self excluded.
fn feature_knn<T: Real>(h: &[T], n: usize, w: usize, k: usize) -> Result<NeighborhoodIndex> {
    if k >= n {
        return Err(Error::NeighborCount {
            k,
            n,
            include_self: false,
        });
    }
    let mut out = Vec::with_capacity(n * k);
    let mut cand: Vec<(T, usize)> = Vec::with_capacity(n);
    for p in 0..n {
        let hp = &h[p * w..(p + 1) * w];
        cand.clear();
        for q in (0..n).filter(|&q| q != p) {
            let d = hp
                .iter()
                .zip(&h[q * w..(q + 1) * w])
                .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
            cand.push((d, q));
        }
        let cmp = |a: &(T, usize), b: &(T, usize)| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        };
        cand.select_nth_unstable_by(k - 1, cmp);
        cand[..k].sort_by(cmp);
        out.extend(cand[..k].iter().map(|c| c.1));
    }
    NeighborhoodIndex::from_rows(k, out)
}

impl<T: Real> FenModel<T> {
    fn value(&self, slot: usize) -> &[T] {
        &self.params[slot].value
    }

    fn branch_forward(
        &self,
        slots: BranchSlots,
        features: &FeatureTensor<T>,
        static_graph: &NeighborhoodIndex,
        out_width: usize,
    ) -> Result<BranchCache<T>> {
        let n = features.num_points();
        let k = features.k();
        let c_in = features.channels();
        let w1 = self.config.edge_width;

        let weight1 = self.value(slots.w1);
        let bias1 = self.value(slots.b1);
        let mut pre1 = vec![T::zero(); n * w1];
        let mut arg1 = vec![0usize; n * w1];
        for p in 0..n {
            let edges = gemm_nn(features.point_block(p), k, c_in, weight1, w1);
            let best = &mut pre1[p * w1..(p + 1) * w1];
            let besti = &mut arg1[p * w1..(p + 1) * w1];
            best.copy_from_slice(&edges[..w1]);
            for j in 1..k {
                for c in 0..w1 {
                    let v = edges[j * w1 + c];
                    if v > best[c] {
                        best[c] = v;
                        besti[c] = j;
                    }
                }
            }
            for (b, &bias) in best.iter_mut().zip(bias1) {
                *b += bias;
            }
        }
        let h1: Vec<T> = pre1.iter().map(|&v| leaky(v)).collect();

        let graph = match self.config.graph_mode {
            GraphMode::Static => static_graph.clone(),
            GraphMode::Dynamic => feature_knn(&h1, n, w1, self.config.k_graph)?,
        };

        let weight2 = self.value(slots.w2);
        let bias2 = self.value(slots.b2);
        let (wa, wb) = weight2.split_at(w1 * out_width);
        let wd: Vec<T> = wa.iter().zip(wb).map(|(&a, &b)| a - b).collect();
        let center = gemm_nn(&h1, n, w1, &wd, out_width);
        let neighbor = gemm_nn(&h1, n, w1, wb, out_width);
        let mut pre2 = vec![T::zero(); n * out_width];
        let mut arg2 = vec![0usize; n * out_width];
        for (p, row) in graph.rows().enumerate() {
            let best = &mut pre2[p * out_width..(p + 1) * out_width];
            let besti = &mut arg2[p * out_width..(p + 1) * out_width];
            best.copy_from_slice(&neighbor[row[0] * out_width..(row[0] + 1) * out_width]);
            besti.iter_mut().for_each(|i| *i = row[0]);
            for &x in &row[1..] {
                for (&v, (b, bi)) in neighbor[x * out_width..(x + 1) * out_width]
                    .iter()
                    .zip(best.iter_mut().zip(besti.iter_mut()))
                {
                    if v > *b {
                        *b = v;
                        *bi = x;
                    }
                }
            }
            for ((b, &a), &bias) in best
                .iter_mut()
                .zip(&center[p * out_width..(p + 1) * out_width])
                .zip(bias2)
            {
                *b += a + bias;
            }
        }
        let out = pre2.iter().map(|&v| leaky(v)).collect();
        Ok(BranchCache {
            pre1,
            arg1,
            h1,
            graph,
            pre2,
            arg2,
            out,
        })
    }

    /// Embeds a cloud from its per-edge feature tensor.
    ///
    /// Returns the `N × l3` embedding and the intermediates needed by
    /// [`FenModel::backward`].
    pub fn forward(
        &self,
        features: &FeatureTensor<T>,
        cloud: &PointCloud<T>,
    ) -> Result<(Embedding<T>, ForwardCache<T>)> {
        let cfg = &self.config;
        if features.channels() != cfg.in_channels {
            return Err(Error::ShapeMismatch {
                context: "feature channels",
                expected: cfg.in_channels.to_string(),
                actual: features.channels().to_string(),
            });
        }
        if features.num_points() != cloud.len() {
            return Err(Error::ShapeMismatch {
                context: "feature rows vs cloud size",
                expected: cloud.len().to_string(),
                actual: features.num_points().to_string(),
            });
        }
        let n = cloud.len();
        let static_graph = knn(cloud, cfg.k_graph, false)?;
        let local = self.branch_forward(self.layout.local, features, &static_graph, cfg.l1)?;
        let global = match self.layout.global {
            Some(slots) => {
                let branch = self.branch_forward(slots, features, &static_graph, cfg.l2)?;
                let mut pooled = branch.out[..cfg.l2].to_vec();
                let mut arg = vec![0usize; cfg.l2];
                for p in 1..n {
                    for c in 0..cfg.l2 {
                        let v = branch.out[p * cfg.l2 + c];
                        if v > pooled[c] {
                            pooled[c] = v;
                            arg[c] = p;
                        }
                    }
                }
                Some(GlobalCache {
                    branch,
                    pooled,
                    arg,
                })
            }
            None => None,
        };

        let f = cfg.fusion_width;
        let w_fuse = self.value(self.layout.fuse_w1);
        let (w_top, w_bot) = w_fuse.split_at(cfg.l1 * f);
        let mut fuse_pre = gemm_nn(&local.out, n, cfg.l1, w_top, f);
        let mut shift = self.value(self.layout.fuse_b1).to_vec();
        if let Some(g) = &global {
            let proj = gemm_nn(&g.pooled, 1, cfg.l2, w_bot, f);
            for (s, p) in shift.iter_mut().zip(proj) {
                *s += p;
            }
        }
        for row in fuse_pre.chunks_exact_mut(f) {
            for (v, &s) in row.iter_mut().zip(&shift) {
                *v += s;
            }
        }
        let fuse_act: Vec<T> = fuse_pre.iter().map(|&v| leaky(v)).collect();
        let mut out = gemm_nn(&fuse_act, n, f, self.value(self.layout.out_w), cfg.l3);
        let out_b = self.value(self.layout.out_b);
        for row in out.chunks_exact_mut(cfg.l3) {
            for (v, &b) in row.iter_mut().zip(out_b) {
                *v += b;
            }
        }
        let cache = ForwardCache {
            config: cfg.clone(),
            n,
            k_desc: features.k(),
            features: features.values().to_vec(),
            local,
            global,
            fuse_pre,
            fuse_act,
        };
        Ok((Embedding::from_vec(n, cfg.l3, out)?, cache))
    }

    fn add_grad(&mut self, slot: usize, delta: &[T]) {
        for (g, &d) in self.params[slot].grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    fn branch_backward(
        &mut self,
        slots: BranchSlots,
        cache: &BranchCache<T>,
        features: &[T],
        k_desc: usize,
        d_out: &[T],
        out_width: usize,
    ) {
        let w1 = self.config.edge_width;
        let c_in = self.config.in_channels;
        let n = cache.h1.len() / w1;

        let d_pre2: Vec<T> = d_out
            .iter()
            .zip(&cache.pre2)
            .map(|(&g, &v)| g * leaky_grad(v))
            .collect();
        let mut d_neighbor = vec![T::zero(); n * out_width];
        for p in 0..n {
            for c in 0..out_width {
                let x = cache.arg2[p * out_width + c];
                d_neighbor[x * out_width + c] += d_pre2[p * out_width + c];
            }
        }
        let col = |m: &[T]| {
            let mut s = vec![T::zero(); out_width];
            for row in m.chunks_exact(out_width) {
                for (a, &v) in s.iter_mut().zip(row) {
                    *a += v;
                }
            }
            s
        };
        self.add_grad(slots.b2, &col(&d_pre2));
        let d_wd = gemm_tn(&cache.h1, n, w1, &d_pre2, out_width);
        let d_wb_direct = gemm_tn(&cache.h1, n, w1, &d_neighbor, out_width);
        let mut d_w2 = d_wd.clone();
        d_w2.extend(d_wb_direct.iter().zip(&d_wd).map(|(&b, &d)| b - d));
        self.add_grad(slots.w2, &d_w2);

        let weight2 = &self.params[slots.w2].value;
        let (wa, wb) = weight2.split_at(w1 * out_width);
        let wd: Vec<T> = wa.iter().zip(wb).map(|(&a, &b)| a - b).collect();
        let mut d_h1 = gemm_nt(&d_pre2, n, out_width, &wd, w1);
        let d_h1_nb = gemm_nt(&d_neighbor, n, out_width, wb, w1);
        for (a, b) in d_h1.iter_mut().zip(d_h1_nb) {
            *a += b;
        }

        let mut d_w1 = vec![T::zero(); c_in * w1];
        let mut d_b1 = vec![T::zero(); w1];
        for p in 0..n {
            for c in 0..w1 {
                let g = d_h1[p * w1 + c] * leaky_grad(cache.pre1[p * w1 + c]);
                if g == T::zero() {
                    continue;
                }
                d_b1[c] += g;
                let j = cache.arg1[p * w1 + c];
                let edge = &features[(p * k_desc + j) * c_in..(p * k_desc + j + 1) * c_in];
                for (i, &f) in edge.iter().enumerate() {
                    d_w1[i * w1 + c] += f * g;
                }
            }
        }
        self.add_grad(slots.w1, &d_w1);
        self.add_grad(slots.b1, &d_b1);
    }

    /// Reverse pass: adds `∂loss/∂θ` into the gradient buffers given
    /// `d_embedding = ∂loss/∂ĥ`.
    ///
    /// Gradients accumulate, so two backward calls against one zeroed buffer
    /// sum their contributions; trainers call [`FenModel::zero_grad`] once per
    /// step. The graph and max/argmax selections are treated as constants.
    pub fn backward(&mut self, cache: &ForwardCache<T>, d_embedding: &Embedding<T>) -> Result<()> {
        if cache.config != self.config {
            return Err(Error::ShapeMismatch {
                context: "forward cache",
                expected: format!("{:?}", self.config),
                actual: format!("{:?}", cache.config),
            });
        }
        let cfg = self.config.clone();
        let n = cache.n;
        if d_embedding.rows() != n || d_embedding.cols() != cfg.l3 {
            return Err(Error::ShapeMismatch {
                context: "embedding gradient",
                expected: format!("{n}x{}", cfg.l3),
                actual: format!("{}x{}", d_embedding.rows(), d_embedding.cols()),
            });
        }
        let f = cfg.fusion_width;
        let d_e = d_embedding.as_slice();
        let layout = self.layout;

        self.add_grad(layout.out_w, &gemm_tn(&cache.fuse_act, n, f, d_e, cfg.l3));
        self.add_grad(layout.out_b, &d_embedding.col_sums());
        let d_act = gemm_nt(d_e, n, cfg.l3, &self.params[layout.out_w].value, f);
        let d_pre: Vec<T> = d_act
            .iter()
            .zip(&cache.fuse_pre)
            .map(|(&g, &v)| g * leaky_grad(v))
            .collect();
        let d_pre_mat = Matrix::from_vec(n, f, d_pre)?;
        let col = d_pre_mat.col_sums();
        self.add_grad(layout.fuse_b1, &col);

        let mut d_fuse_w = gemm_tn(&cache.local.out, n, cfg.l1, d_pre_mat.as_slice(), f);
        let w_fuse = self.params[layout.fuse_w1].value.clone();
        let (w_top, w_bot) = w_fuse.split_at(cfg.l1 * f);
        let d_local = gemm_nt(d_pre_mat.as_slice(), n, f, w_top, cfg.l1);

        let mut d_global_out = None;
        if let Some(g) = &cache.global {
            for &gr in &g.pooled {
                d_fuse_w.extend(col.iter().map(|&c| gr * c));
            }
            let d_pooled = gemm_nt(&col, 1, f, w_bot, cfg.l2);
            let mut d_out = vec![T::zero(); n * cfg.l2];
            for (c, (&p, &d)) in g.arg.iter().zip(&d_pooled).enumerate() {
                d_out[p * cfg.l2 + c] += d;
            }
            d_global_out = Some(d_out);
        }
        self.add_grad(layout.fuse_w1, &d_fuse_w);

        self.branch_backward(
            layout.local,
            &cache.local,
            &cache.features,
            cache.k_desc,
            &d_local,
            cfg.l1,
        );
        if let (Some(slots), Some(g), Some(d_out)) = (layout.global, &cache.global, d_global_out) {
            self.branch_backward(
                slots,
                &g.branch,
                &cache.features,
                cache.k_desc,
                &d_out,
                cfg.l2,
            );
        }
        Ok(())
    }
}

/// Free-function form of [`FenModel::forward`].
pub fn fen_forward<T: Real>(
    model: &FenModel<T>,
    features: &FeatureTensor<T>,
    cloud: &PointCloud<T>,
) -> Result<(Embedding<T>, ForwardCache<T>)> {
    model.forward(features, cloud)
}

/// Free-function form of [`FenModel::backward`].
pub fn fen_backward<T: Real>(
    model: &mut FenModel<T>,
    cache: &ForwardCache<T>,
    d_embedding: &Embedding<T>,
) -> Result<()> {
    model.backward(cache, d_embedding)
}
