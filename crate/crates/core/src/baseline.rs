//! Non-equivariant comparison encoder: a scalar edge-convolution network on
//! absolute point coordinates. It emits outputs with the same shapes as the
//! vector-neuron encoder so the heads can be reused unchanged.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{knn_graph, KnnGraph, PointCloud};
use crate::nn::Dense;
use crate::real::Real;
use crate::tensor::{prefixed, Module, Tensor};
use crate::vn::{EncoderConfig, EncoderOutput, InvFeature, VnFeature};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub encoder: EncoderConfig,
    /// Scalar channels per layer.
    pub width: usize,
}

impl BaselineConfig {
    pub fn new(encoder: EncoderConfig) -> Self {
        BaselineConfig {
            encoder,
            width: 3 * encoder.d,
        }
    }
}

/// `out_n = mean_m relu(P x_m + Q x_n)` over the neighbors `m` of `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarEdgeConv<S> {
    pub p: Dense<S>,
    pub q: Dense<S>,
}

impl<S: Real> ScalarEdgeConv<S> {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        ScalarEdgeConv {
            p: Dense::new(c_in, c_out, 1.0, rng),
            q: Dense::new(c_in, c_out, 1.0, rng),
        }
    }

    fn project(&self, layer: &Dense<S>, x: &[S], n: usize) -> Vec<S> {
        let c_in = layer.c_in();
        let mut out = Vec::with_capacity(n * layer.c_out());
        let mut buf = Vec::new();
        for row in x.chunks_exact(c_in) {
            layer.forward_into(row, &mut buf);
            out.extend_from_slice(&buf);
        }
        out
    }

    /// Returns the output and the two projections needed for backward.
    fn forward(&self, x: &[S], graph: &KnnGraph) -> (Vec<S>, Vec<S>, Vec<S>) {
        let n = graph.n();
        let h = self.p.c_out();
        let pm = self.project(&self.p, x, n);
        let qn = self.project(&self.q, x, n);
        let inv_k = S::one() / S::of(graph.k() as f64);
        let mut out = vec![S::zero(); n * h];
        for i in 0..n {
            let o = &mut out[i * h..(i + 1) * h];
            let qi = &qn[i * h..(i + 1) * h];
            for &m in graph.neighbors(i) {
                for ((acc, &a), &b) in o.iter_mut().zip(&pm[m * h..(m + 1) * h]).zip(qi) {
                    *acc += (a + b).max(S::zero());
                }
            }
            o.iter_mut().for_each(|v| *v *= inv_k);
        }
        (out, pm, qn)
    }

    fn backward(&self, x: &[S], graph: &KnnGraph, pm: &[S], qn: &[S], g_out: &[S], grads: &mut Self) -> Vec<S> {
        let n = graph.n();
        let h = self.p.c_out();
        let c_in = self.p.c_in();
        let inv_k = S::one() / S::of(graph.k() as f64);
        let mut g_p = vec![S::zero(); n * h];
        let mut g_q = vec![S::zero(); n * h];
        for i in 0..n {
            let go = &g_out[i * h..(i + 1) * h];
            let qi = &qn[i * h..(i + 1) * h];
            for &m in graph.neighbors(i) {
                let pmm = &pm[m * h..(m + 1) * h];
                for c in 0..h {
                    if pmm[c] + qi[c] > S::zero() {
                        let g = go[c] * inv_k;
                        g_p[m * h + c] += g;
                        g_q[i * h + c] += g;
                    }
                }
            }
        }
        let mut g_x = vec![S::zero(); n * c_in];
        for i in 0..n {
            let xi = &x[i * c_in..(i + 1) * c_in];
            let gx = &mut g_x[i * c_in..(i + 1) * c_in];
            self.p.backward(xi, &g_p[i * h..(i + 1) * h], &mut grads.p, Some(&mut *gx));
            self.q.backward(xi, &g_q[i * h..(i + 1) * h], &mut grads.q, Some(gx));
        }
        g_x
    }
}

impl<S: Real> Module<S> for ScalarEdgeConv<S> {
    fn params(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out: Vec<_> = prefixed("p", self.p.params()).collect();
        out.extend(prefixed("q", self.q.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = self.p.params_mut();
        out.extend(self.q.params_mut());
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineEncoder<S> {
    pub config: BaselineConfig,
    pub blocks: Vec<ScalarEdgeConv<S>>,
    pub global: Dense<S>,
    pub fuse: Dense<S>,
    pub inv_out: Dense<S>,
    pub eqv_out: Dense<S>,
}

pub struct BaselineCache<S> {
    graph: KnnGraph,
    /// Input of each block; `inputs[0]` is the raw coordinates.
    inputs: Vec<Vec<S>>,
    projections: Vec<(Vec<S>, Vec<S>)>,
    skip: Vec<S>,
    pool_idx: Vec<usize>,
    pooled: Vec<S>,
    fused: Vec<S>,
}

impl<S: Real> BaselineEncoder<S> {
    pub fn new<R: Rng + ?Sized>(config: BaselineConfig, rng: &mut R) -> Self {
        let h = config.width;
        let e = config.encoder;
        BaselineEncoder {
            config,
            blocks: (0..e.depth)
                .map(|b| ScalarEdgeConv::new(if b == 0 { 3 } else { h }, h, rng))
                .collect(),
            global: Dense::new(e.depth * h, h, 1.0, rng),
            fuse: Dense::new((e.depth + 1) * h, h, 2f64.sqrt(), rng),
            inv_out: Dense::new(h, e.d_i, 1.0, rng),
            eqv_out: Dense::new(h, 3 * e.d, 1.0, rng),
        }
    }

    pub fn forward(&self, cloud: &PointCloud) -> Result<(EncoderOutput<S>, BaselineCache<S>)> {
        let graph = knn_graph(cloud, self.config.encoder.k_nn)?;
        self.forward_with_graph(cloud, graph)
    }

    pub fn forward_with_graph(&self, cloud: &PointCloud, graph: KnnGraph) -> Result<(EncoderOutput<S>, BaselineCache<S>)> {
        let n = cloud.len();
        let h = self.config.width;
        let depth = self.config.encoder.depth;
        let x0: Vec<S> = cloud.points().iter().flat_map(|p| (0..3).map(move |j| S::of(p[j]))).collect();
        let mut inputs = vec![x0];
        let mut projections = Vec::with_capacity(depth);
        for block in &self.blocks {
            let (out, pm, qn) = block.forward(inputs.last().expect("non-empty"), &graph);
            inputs.push(out);
            projections.push((pm, qn));
        }
        let mut skip = Vec::with_capacity(n * depth * h);
        for i in 0..n {
            for x in &inputs[1..] {
                skip.extend_from_slice(&x[i * h..(i + 1) * h]);
            }
        }
        let mut pre_pool = Vec::with_capacity(n * h);
        let mut buf = Vec::new();
        for row in skip.chunks_exact(depth * h) {
            self.global.forward_into(row, &mut buf);
            pre_pool.extend_from_slice(&buf);
        }
        let mut pooled = vec![S::neg_infinity(); h];
        let mut pool_idx = vec![0; h];
        for i in 0..n {
            for c in 0..h {
                if pre_pool[i * h + c] > pooled[c] {
                    pooled[c] = pre_pool[i * h + c];
                    pool_idx[c] = i;
                }
            }
        }
        let mut fused = Vec::with_capacity(n * h);
        let mut row_in = Vec::with_capacity((depth + 1) * h);
        for row in skip.chunks_exact(depth * h) {
            row_in.clear();
            row_in.extend_from_slice(row);
            row_in.extend_from_slice(&pooled);
            self.fuse.forward_into(&row_in, &mut buf);
            fused.extend(buf.iter().map(|v| v.max(S::zero())));
        }
        let d_i = self.config.encoder.d_i;
        let d = self.config.encoder.d;
        let mut inv = Vec::with_capacity(n * d_i);
        let mut eqv = Vec::with_capacity(n * d * 3);
        for row in fused.chunks_exact(h) {
            self.inv_out.forward_into(row, &mut buf);
            inv.extend_from_slice(&buf);
            self.eqv_out.forward_into(row, &mut buf);
            eqv.extend_from_slice(&buf);
        }
        let out = EncoderOutput {
            inv: InvFeature::from_vec(n, d_i, inv)?,
            eqv: VnFeature::from_vec(n, d, eqv)?,
        };
        Ok((
            out,
            BaselineCache {
                graph,
                inputs,
                projections,
                skip,
                pool_idx,
                pooled,
                fused,
            },
        ))
    }

    pub fn backward(&self, cache: &BaselineCache<S>, g_inv: &InvFeature<S>, g_eqv: &VnFeature<S>, grads: &mut Self) {
        let h = self.config.width;
        let depth = self.config.encoder.depth;
        let n = cache.graph.n();
        let d_i = self.config.encoder.d_i;
        let d3 = 3 * self.config.encoder.d;

        let mut g_fused = vec![S::zero(); n * h];
        for i in 0..n {
            let x = &cache.fused[i * h..(i + 1) * h];
            let gf = &mut g_fused[i * h..(i + 1) * h];
            self.inv_out.backward(x, &g_inv.data()[i * d_i..(i + 1) * d_i], &mut grads.inv_out, Some(&mut *gf));
            self.eqv_out.backward(x, &g_eqv.data()[i * d3..(i + 1) * d3], &mut grads.eqv_out, Some(&mut *gf));
            for (g, v) in gf.iter_mut().zip(x) {
                if *v <= S::zero() {
                    *g = S::zero();
                }
            }
        }

        let sk = depth * h;
        let mut g_skip = vec![S::zero(); n * sk];
        let mut g_pooled = vec![S::zero(); h];
        let mut row_in = Vec::with_capacity(sk + h);
        let mut g_row = vec![S::zero(); sk + h];
        for i in 0..n {
            row_in.clear();
            row_in.extend_from_slice(&cache.skip[i * sk..(i + 1) * sk]);
            row_in.extend_from_slice(&cache.pooled);
            g_row.iter_mut().for_each(|v| *v = S::zero());
            self.fuse.backward(&row_in, &g_fused[i * h..(i + 1) * h], &mut grads.fuse, Some(&mut g_row));
            for (a, b) in g_skip[i * sk..(i + 1) * sk].iter_mut().zip(&g_row[..sk]) {
                *a += *b;
            }
            for (a, b) in g_pooled.iter_mut().zip(&g_row[sk..]) {
                *a += *b;
            }
        }
        let mut g_pre = vec![S::zero(); n * h];
        for c in 0..h {
            g_pre[cache.pool_idx[c] * h + c] = g_pooled[c];
        }
        for i in 0..n {
            let gp = &g_pre[i * h..(i + 1) * h];
            if gp.iter().all(|v| *v == S::zero()) {
                continue;
            }
            self.global.backward(
                &cache.skip[i * sk..(i + 1) * sk],
                gp,
                &mut grads.global,
                Some(&mut g_skip[i * sk..(i + 1) * sk]),
            );
        }

        let mut g_x: Vec<Vec<S>> = (0..depth)
            .map(|b| {
                let mut g = vec![S::zero(); n * h];
                for i in 0..n {
                    g[i * h..(i + 1) * h].copy_from_slice(&g_skip[i * sk + b * h..i * sk + (b + 1) * h]);
                }
                g
            })
            .collect();
        for b in (0..depth).rev() {
            let (pm, qn) = &cache.projections[b];
            let g_in = self.blocks[b].backward(&cache.inputs[b], &cache.graph, pm, qn, &g_x[b], &mut grads.blocks[b]);
            if b > 0 {
                for (a, v) in g_x[b - 1].iter_mut().zip(&g_in) {
                    *a += *v;
                }
            }
        }
    }
}

impl<S: Real> Module<S> for BaselineEncoder<S> {
    fn params(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(prefixed(&format!("block{i}"), b.params()));
        }
        out.extend(prefixed("global", self.global.params()));
        out.extend(prefixed("fuse", self.fuse.params()));
        out.extend(prefixed("inv_out", self.inv_out.params()));
        out.extend(prefixed("eqv_out", self.eqv_out.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend(b.params_mut());
        }
        out.extend(self.global.params_mut());
        out.extend(self.fuse.params_mut());
        out.extend(self.inv_out.params_mut());
        out.extend(self.eqv_out.params_mut());
        out
    }
}
