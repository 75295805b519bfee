//! Segmentation-style VN edge-convolution encoder producing, for every point,
//! a rotation-equivariant vector feature and a rotation-invariant scalar
//! feature. Translation is removed by centering, so both hold for full rigid
//! motions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{knn_graph, KnnGraph, PointCloud};
use crate::real::Real;
use crate::tensor::{prefixed, Module, Tensor};
use crate::vn::feature::{InvFeature, VnFeature};
use crate::vn::layers::{
    linear_bwd, linear_fwd, max_norm_pool, relu_bwd, relu_fwd, EdgeConv, EdgeConvCache, Invariantizer,
    InvariantizerCache,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub k_nn: usize,
    /// Equivariant channels per point (also the hidden width).
    pub d: usize,
    /// Invariant scalars per point.
    pub d_i: usize,
    /// Number of edge-convolution blocks.
    pub depth: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            k_nn: 16,
            d: 32,
            d_i: 64,
            depth: 3,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_nn == 0 || self.d < 3 || self.d_i == 0 || self.depth == 0 {
            return Err(Error::InvalidInput(format!("invalid encoder config {self:?}")));
        }
        Ok(())
    }
}

/// Per-point encoder outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput<S> {
    pub inv: InvFeature<S>,
    pub eqv: VnFeature<S>,
}

/// Cloud centroid with per-axis sums taken over sorted coordinates, making
/// the result independent of point order.
pub fn centroid(c: &PointCloud) -> [f64; 3] {
    let n = c.len().max(1) as f64;
    std::array::from_fn(|axis| {
        let mut vals: Vec<f64> = c.points().iter().map(|p| p[axis]).collect();
        vals.sort_by(f64::total_cmp);
        vals.iter().sum::<f64>() / n
    })
}

/// Centered coordinates as a one-channel vector feature.
pub fn centered_input<S: Real>(c: &PointCloud) -> VnFeature<S> {
    let ctr = centroid(c);
    let data = c
        .points()
        .iter()
        .flat_map(|p| [S::of(p.x - ctr[0]), S::of(p.y - ctr[1]), S::of(p.z - ctr[2])])
        .collect();
    VnFeature::from_vec(c.len(), 1, data).expect("sized by construction")
}

#[derive(Clone, Debug, PartialEq)]
pub struct VnEncoder<S> {
    pub config: EncoderConfig,
    pub blocks: Vec<EdgeConv<S>>,
    /// `d × depth·d`, feeds the global max-norm pool.
    pub global: Tensor<S>,
    /// `d × (depth + 1)·d` over `[skip features, global]`.
    pub fuse: Tensor<S>,
    /// `d × d` direction map of the fused nonlinearity.
    pub fuse_dir: Tensor<S>,
    /// `d × d` output projection.
    pub head: Tensor<S>,
    pub invariant: Invariantizer<S>,
}

pub struct VnEncoderCache<S> {
    graph: KnnGraph,
    inputs: Vec<VnFeature<S>>,
    block_caches: Vec<EdgeConvCache<S>>,
    skip: VnFeature<S>,
    pool_idx: Vec<usize>,
    pooled: VnFeature<S>,
    fused: VnFeature<S>,
    fused_dir: Vec<S>,
    activated: VnFeature<S>,
    eqv: VnFeature<S>,
    inv_cache: InvariantizerCache<S>,
}

impl<S: Real> VnEncoder<S> {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Self {
        let d = config.d;
        let blocks = (0..config.depth)
            .map(|b| EdgeConv::new(if b == 0 { 1 } else { d }, d, rng))
            .collect();
        VnEncoder {
            config,
            blocks,
            global: Tensor::fan_in(d, config.depth * d, 1.0, rng),
            fuse: Tensor::fan_in(d, (config.depth + 1) * d, 2f64.sqrt(), rng),
            fuse_dir: Tensor::fan_in(d, d, 1.0, rng),
            head: Tensor::fan_in(d, d, 1.0, rng),
            invariant: Invariantizer::new(d, config.d_i, rng),
        }
    }

    pub fn forward(&self, cloud: &PointCloud) -> Result<(EncoderOutput<S>, VnEncoderCache<S>)> {
        let graph = knn_graph(cloud, self.config.k_nn)?;
        self.forward_with_graph(cloud, graph)
    }

    pub fn forward_with_graph(
        &self,
        cloud: &PointCloud,
        graph: KnnGraph,
    ) -> Result<(EncoderOutput<S>, VnEncoderCache<S>)> {
        let d = self.config.d;
        let depth = self.config.depth;
        let n = cloud.len();
        let mut inputs = vec![centered_input::<S>(cloud)];
        let mut block_caches = Vec::with_capacity(depth);
        for block in &self.blocks {
            let (out, cache) = block.forward(inputs.last().expect("non-empty"), &graph)?;
            inputs.push(out);
            block_caches.push(cache);
        }
        let skip = VnFeature::concat(&inputs[1..].iter().collect::<Vec<_>>())?;
        let pre_pool = linear_fwd(&self.global.data, d, depth * d, skip.data(), n);
        let (pooled, pool_idx) = max_norm_pool(&VnFeature::from_vec(n, d, pre_pool)?);

        let (w_skip, w_glob) = self.split_fuse();
        let mut fused = linear_fwd(&w_skip, d, depth * d, skip.data(), n);
        let glob = linear_fwd(&w_glob, d, d, pooled.data(), 1);
        for p in 0..n {
            for (x, g) in fused[p * d * 3..(p + 1) * d * 3].iter_mut().zip(&glob) {
                *x += *g;
            }
        }
        let fused = VnFeature::from_vec(n, d, fused)?;
        let fused_dir = linear_fwd(&self.fuse_dir.data, d, d, fused.data(), n);
        let mut activated = VnFeature::zeros(n, d);
        for p in 0..n {
            for ch in 0..d {
                let o = (p * d + ch) * 3;
                let q = [fused_dir[o], fused_dir[o + 1], fused_dir[o + 2]];
                activated.set(p, ch, relu_fwd(&fused.get(p, ch), &q));
            }
        }
        let eqv = VnFeature::from_vec(n, d, linear_fwd(&self.head.data, d, d, activated.data(), n))?;
        let (inv, inv_cache) = self.invariant.forward(&eqv)?;
        let out = EncoderOutput { inv, eqv: eqv.clone() };
        Ok((
            out,
            VnEncoderCache {
                graph,
                inputs,
                block_caches,
                skip,
                pool_idx,
                pooled,
                fused,
                fused_dir,
                activated,
                eqv,
                inv_cache,
            },
        ))
    }

    fn split_fuse(&self) -> (Vec<S>, Vec<S>) {
        let d = self.config.d;
        let skip_cols = self.config.depth * d;
        let cols = skip_cols + d;
        let mut w_skip = Vec::with_capacity(d * skip_cols);
        let mut w_glob = Vec::with_capacity(d * d);
        for j in 0..d {
            let row = &self.fuse.data[j * cols..(j + 1) * cols];
            w_skip.extend_from_slice(&row[..skip_cols]);
            w_glob.extend_from_slice(&row[skip_cols..]);
        }
        (w_skip, w_glob)
    }

    /// Backpropagates output gradients, accumulating into `grads`.
    pub fn backward(
        &self,
        cache: &VnEncoderCache<S>,
        g_inv: &InvFeature<S>,
        g_eqv: &VnFeature<S>,
        grads: &mut VnEncoder<S>,
    ) {
        let d = self.config.d;
        let depth = self.config.depth;
        let n = cache.eqv.points();

        let mut g_head = g_eqv.clone();
        let g_from_inv = self
            .invariant
            .backward(&cache.eqv, &cache.inv_cache, g_inv, &mut grads.invariant);
        g_head.add_assign(&g_from_inv);

        let mut g_act = vec![S::zero(); n * d * 3];
        linear_bwd(
            &self.head.data,
            d,
            d,
            cache.activated.data(),
            n,
            g_head.data(),
            Some(&mut grads.head.data),
            Some(&mut g_act),
        );

        let mut g_fused = vec![S::zero(); n * d * 3];
        let mut g_dir = vec![S::zero(); n * d * 3];
        for p in 0..n {
            for ch in 0..d {
                let o = (p * d + ch) * 3;
                let q = [cache.fused_dir[o], cache.fused_dir[o + 1], cache.fused_dir[o + 2]];
                let g = [g_act[o], g_act[o + 1], g_act[o + 2]];
                let (gv, gq) = relu_bwd(&cache.fused.get(p, ch), &q, &g);
                g_fused[o..o + 3].copy_from_slice(&gv);
                g_dir[o..o + 3].copy_from_slice(&gq);
            }
        }
        linear_bwd(
            &self.fuse_dir.data,
            d,
            d,
            cache.fused.data(),
            n,
            &g_dir,
            Some(&mut grads.fuse_dir.data),
            Some(&mut g_fused),
        );

        // fused = W_skip·skip + W_glob·pooled (broadcast over points)
        let (w_skip, w_glob) = self.split_fuse();
        let skip_cols = depth * d;
        let mut gw_skip = vec![S::zero(); d * skip_cols];
        let mut g_skip = vec![S::zero(); n * skip_cols * 3];
        linear_bwd(
            &w_skip,
            d,
            skip_cols,
            cache.skip.data(),
            n,
            &g_fused,
            Some(&mut gw_skip),
            Some(&mut g_skip),
        );
        let mut g_glob_out = vec![S::zero(); d * 3];
        for p in 0..n {
            for (acc, g) in g_glob_out.iter_mut().zip(&g_fused[p * d * 3..(p + 1) * d * 3]) {
                *acc += *g;
            }
        }
        let mut gw_glob = vec![S::zero(); d * d];
        let mut g_pooled = vec![S::zero(); d * 3];
        linear_bwd(
            &w_glob,
            d,
            d,
            cache.pooled.data(),
            1,
            &g_glob_out,
            Some(&mut gw_glob),
            Some(&mut g_pooled),
        );
        let cols = skip_cols + d;
        for j in 0..d {
            let row = &mut grads.fuse.data[j * cols..(j + 1) * cols];
            for (r, g) in row[..skip_cols].iter_mut().zip(&gw_skip[j * skip_cols..(j + 1) * skip_cols]) {
                *r += *g;
            }
            for (r, g) in row[skip_cols..].iter_mut().zip(&gw_glob[j * d..(j + 1) * d]) {
                *r += *g;
            }
        }

        // max-norm pool routes each channel's gradient to its winning point
        let mut g_pre_pool = vec![S::zero(); n * d * 3];
        for (ch, &p) in cache.pool_idx.iter().enumerate() {
            for x in 0..3 {
                g_pre_pool[(p * d + ch) * 3 + x] += g_pooled[ch * 3 + x];
            }
        }
        linear_bwd(
            &self.global.data,
            d,
            skip_cols,
            cache.skip.data(),
            n,
            &g_pre_pool,
            Some(&mut grads.global.data),
            Some(&mut g_skip),
        );

        let g_skip = VnFeature::from_vec(n, skip_cols, g_skip).expect("sized");
        let mut g_blocks = g_skip.split(&vec![d; depth]);
        for b in (0..depth).rev() {
            let g_in = self.blocks[b].backward(
                &cache.inputs[b],
                &cache.graph,
                &cache.block_caches[b],
                &g_blocks[b],
                &mut grads.blocks[b],
            );
            if b > 0 {
                g_blocks[b - 1].add_assign(&g_in);
            }
        }
    }
}

impl<S: Real> Module<S> for VnEncoder<S> {
    fn params(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(prefixed(&format!("block{i}"), b.params()));
        }
        out.push(("global".into(), &self.global));
        out.push(("fuse".into(), &self.fuse));
        out.push(("fuse_dir".into(), &self.fuse_dir));
        out.push(("head".into(), &self.head));
        out.extend(prefixed("invariant", self.invariant.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend(b.params_mut());
        }
        out.push(&mut self.global);
        out.push(&mut self.fuse);
        out.push(&mut self.fuse_dir);
        out.push(&mut self.head);
        out.extend(self.invariant.params_mut());
        out
    }
}

/// One forward pass: per-point invariant and equivariant features.
pub fn encode<S: Real>(c: &PointCloud, params: &VnEncoder<S>, k_nn: usize) -> Result<EncoderOutput<S>> {
    if k_nn != params.config.k_nn {
        return Err(Error::InvalidInput(format!(
            "k_nn {k_nn} differs from the encoder's configured {}",
            params.config.k_nn
        )));
    }
    params.forward(c).map(|(out, _)| out)
}
