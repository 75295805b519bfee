//! Vector-neuron primitives. Every layer acts on channel vectors only through
//! linear channel mixing, inner products, and norms, so rotating all input
//! vectors rotates all output vectors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{dot3, KnnGraph};
use crate::real::Real;
use crate::tensor::{Module, Tensor};
use crate::vn::feature::{InvFeature, VnFeature};

/// Direction norms below this leave the input vector untouched.
pub const DIRECTION_EPS: f64 = 1e-8;

// ---------------------------------------------------------------------------
// raw kernels on `[point][channel][xyz]` slices

pub(crate) fn linear_fwd<S: Real>(w: &[S], c_out: usize, c_in: usize, f: &[S], n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n * c_out * 3];
    for p in 0..n {
        let fin = &f[p * c_in * 3..(p + 1) * c_in * 3];
        let fout = &mut out[p * c_out * 3..(p + 1) * c_out * 3];
        for j in 0..c_out {
            let row = &w[j * c_in..(j + 1) * c_in];
            let (mut x, mut y, mut z) = (S::zero(), S::zero(), S::zero());
            for (i, &wi) in row.iter().enumerate() {
                x += wi * fin[i * 3];
                y += wi * fin[i * 3 + 1];
                z += wi * fin[i * 3 + 2];
            }
            fout[j * 3] = x;
            fout[j * 3 + 1] = y;
            fout[j * 3 + 2] = z;
        }
    }
    out
}

/// Accumulates `∂L/∂w` into `g_w` and `∂L/∂f` into `g_f` (either may be skipped).
pub(crate) fn linear_bwd<S: Real>(
    w: &[S],
    c_out: usize,
    c_in: usize,
    f: &[S],
    n: usize,
    g_out: &[S],
    mut g_w: Option<&mut [S]>,
    mut g_f: Option<&mut [S]>,
) {
    for p in 0..n {
        let fin = &f[p * c_in * 3..(p + 1) * c_in * 3];
        let gout = &g_out[p * c_out * 3..(p + 1) * c_out * 3];
        for j in 0..c_out {
            let g = [gout[j * 3], gout[j * 3 + 1], gout[j * 3 + 2]];
            if g[0] == S::zero() && g[1] == S::zero() && g[2] == S::zero() {
                continue;
            }
            if let Some(gw) = g_w.as_deref_mut() {
                let row = &mut gw[j * c_in..(j + 1) * c_in];
                for (i, r) in row.iter_mut().enumerate() {
                    *r += g[0] * fin[i * 3] + g[1] * fin[i * 3 + 1] + g[2] * fin[i * 3 + 2];
                }
            }
            if let Some(gf) = g_f.as_deref_mut() {
                let gf = &mut gf[p * c_in * 3..(p + 1) * c_in * 3];
                let row = &w[j * c_in..(j + 1) * c_in];
                for (i, &wi) in row.iter().enumerate() {
                    gf[i * 3] += wi * g[0];
                    gf[i * 3 + 1] += wi * g[1];
                    gf[i * 3 + 2] += wi * g[2];
                }
            }
        }
    }
}

/// Keeps `v` when it points into the half-space of `q`, otherwise removes its
/// component along `q`.
#[inline]
pub(crate) fn relu_fwd<S: Real>(v: &[S; 3], q: &[S; 3]) -> [S; 3] {
    let dot = dot3(v, q);
    if dot >= S::zero() {
        return *v;
    }
    let qq = dot3(q, q);
    if qq < S::of(DIRECTION_EPS * DIRECTION_EPS) {
        return *v;
    }
    let s = dot / qq;
    [v[0] - s * q[0], v[1] - s * q[1], v[2] - s * q[2]]
}

#[inline]
pub(crate) fn relu_bwd<S: Real>(v: &[S; 3], q: &[S; 3], g: &[S; 3]) -> ([S; 3], [S; 3]) {
    let zero = [S::zero(); 3];
    let dot = dot3(v, q);
    if dot >= S::zero() {
        return (*g, zero);
    }
    let qq = dot3(q, q);
    if qq < S::of(DIRECTION_EPS * DIRECTION_EPS) {
        return (*g, zero);
    }
    let s = dot / qq;
    let gq_dot = dot3(g, q) / qq;
    let two = S::of(2.0);
    let gv = std::array::from_fn(|i| g[i] - gq_dot * q[i]);
    let gq = std::array::from_fn(|i| -s * g[i] - gq_dot * (v[i] - two * s * q[i]));
    (gv, gq)
}

fn check_weight<S: Real>(w: &Tensor<S>, c_in: usize, what: &str) -> Result<usize> {
    if w.shape.len() != 2 || w.cols() != c_in {
        return Err(Error::ShapeMismatch(format!(
            "{what}: weight {:?} incompatible with {c_in} input channels",
            w.shape
        )));
    }
    Ok(w.rows())
}

// ---------------------------------------------------------------------------
// public primitives

/// Channel mixing: output channel `j` is `Σ_i w[j][i] · f_i`. Spatial
/// coordinates are never mixed.
pub fn vn_linear<S: Real>(weights: &Tensor<S>, f: &VnFeature<S>) -> Result<VnFeature<S>> {
    let c_out = check_weight(weights, f.channels(), "vn_linear")?;
    let out = linear_fwd(&weights.data, c_out, f.channels(), f.data(), f.points());
    VnFeature::from_vec(f.points(), c_out, out)
}

/// Gradients of [`vn_linear`]: `(∂L/∂w, ∂L/∂f)`.
pub fn vn_linear_backward<S: Real>(
    weights: &Tensor<S>,
    f: &VnFeature<S>,
    g_out: &VnFeature<S>,
) -> (Tensor<S>, VnFeature<S>) {
    let mut gw = Tensor::zeros(&weights.shape);
    let mut gf = VnFeature::zeros(f.points(), f.channels());
    linear_bwd(
        &weights.data,
        weights.rows(),
        weights.cols(),
        f.data(),
        f.points(),
        g_out.data(),
        Some(&mut gw.data),
        Some(gf.data_mut()),
    );
    (gw, gf)
}

/// Vector-neuron ReLU with a learned direction `q = direction_weights · f`.
pub fn vn_nonlinearity<S: Real>(f: &VnFeature<S>, direction_weights: &Tensor<S>) -> Result<VnFeature<S>> {
    let c = f.channels();
    if direction_weights.shape != [c, c] {
        return Err(Error::ShapeMismatch(format!(
            "direction weights {:?} for {c} channels",
            direction_weights.shape
        )));
    }
    let q = vn_linear(direction_weights, f)?;
    let mut out = VnFeature::zeros(f.points(), c);
    for p in 0..f.points() {
        for ch in 0..c {
            out.set(p, ch, relu_fwd(&f.get(p, ch), &q.get(p, ch)));
        }
    }
    Ok(out)
}

/// Gradients of [`vn_nonlinearity`]: `(∂L/∂f, ∂L/∂direction_weights)`.
pub fn vn_nonlinearity_backward<S: Real>(
    f: &VnFeature<S>,
    direction_weights: &Tensor<S>,
    g_out: &VnFeature<S>,
) -> (VnFeature<S>, Tensor<S>) {
    let c = f.channels();
    let n = f.points();
    let q = linear_fwd(&direction_weights.data, c, c, f.data(), n);
    let mut gf = VnFeature::zeros(n, c);
    let mut gq = vec![S::zero(); n * c * 3];
    for p in 0..n {
        for ch in 0..c {
            let o = (p * c + ch) * 3;
            let qv = [q[o], q[o + 1], q[o + 2]];
            let (gv, gqv) = relu_bwd(&f.get(p, ch), &qv, &g_out.get(p, ch));
            gf.set(p, ch, gv);
            gq[o..o + 3].copy_from_slice(&gqv);
        }
    }
    let mut gu = Tensor::zeros(&direction_weights.shape);
    linear_bwd(
        &direction_weights.data,
        c,
        c,
        f.data(),
        n,
        &gq,
        Some(&mut gu.data),
        Some(gf.data_mut()),
    );
    (gf, gu)
}

/// For every channel, the vector of largest norm across points; ties go to
/// the lowest point index. Returns the pooled `1 × c` feature and the winning
/// point per channel.
pub fn max_norm_pool<S: Real>(f: &VnFeature<S>) -> (VnFeature<S>, Vec<usize>) {
    let c = f.channels();
    let mut best = vec![0usize; c];
    let mut best_norm = vec![S::neg_infinity(); c];
    for p in 0..f.points() {
        for ch in 0..c {
            let v = f.get(p, ch);
            let nn = dot3(&v, &v);
            if nn > best_norm[ch] {
                best_norm[ch] = nn;
                best[ch] = p;
            }
        }
    }
    let mut out = VnFeature::zeros(1, c);
    for ch in 0..c {
        if f.points() > 0 {
            out.set(0, ch, f.get(best[ch], ch));
        }
    }
    (out, best)
}

// ---------------------------------------------------------------------------
// edge convolution

/// One VN edge-convolution block: per edge `(n → m)` the feature
/// `[f_m − f_n, f_n]` passes through a channel mix and a VN ReLU, then edges
/// are averaged per centre point.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeConv<S> {
    /// `c_out × 2·c_in`; the first `c_in` columns act on `f_m − f_n`.
    pub w: Tensor<S>,
    /// `c_out × c_out` direction map of the nonlinearity.
    pub u: Tensor<S>,
}

pub struct EdgeConvCache<S> {
    c_in: usize,
    p: Vec<S>,
    q: Vec<S>,
    up: Vec<S>,
    uq: Vec<S>,
}

impl<S: Real> EdgeConv<S> {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        EdgeConv {
            w: Tensor::fan_in(c_out, 2 * c_in, 2f64.sqrt(), rng),
            u: Tensor::fan_in(c_out, c_out, 1.0, rng),
        }
    }

    pub fn c_in(&self) -> usize {
        self.w.cols() / 2
    }

    pub fn c_out(&self) -> usize {
        self.w.rows()
    }

    /// Splits `w` into the neighbour weight `A` and the centre weight `B − A`,
    /// so that `W·[f_m − f_n, f_n] = A·f_m + (B − A)·f_n`.
    fn split_weights(&self) -> (Vec<S>, Vec<S>) {
        let (c_out, c_in) = (self.c_out(), self.c_in());
        let mut a = Vec::with_capacity(c_out * c_in);
        let mut b = Vec::with_capacity(c_out * c_in);
        for j in 0..c_out {
            let row = &self.w.data[j * 2 * c_in..(j + 1) * 2 * c_in];
            a.extend_from_slice(&row[..c_in]);
            b.extend(row[c_in..].iter().zip(&row[..c_in]).map(|(&ctr, &nbr)| ctr - nbr));
        }
        (a, b)
    }

    pub fn forward(&self, f: &VnFeature<S>, graph: &KnnGraph) -> Result<(VnFeature<S>, EdgeConvCache<S>)> {
        let (c_out, c_in) = (self.c_out(), self.c_in());
        if f.channels() != c_in {
            return Err(Error::ShapeMismatch(format!(
                "edge conv expects {c_in} channels, got {}",
                f.channels()
            )));
        }
        let n = f.points();
        if graph.n() != n {
            return Err(Error::ShapeMismatch(format!(
                "graph over {} points applied to {n} points",
                graph.n()
            )));
        }
        let (a, b) = self.split_weights();
        let p = linear_fwd(&a, c_out, c_in, f.data(), n);
        let q = linear_fwd(&b, c_out, c_in, f.data(), n);
        let up = linear_fwd(&self.u.data, c_out, c_out, &p, n);
        let uq = linear_fwd(&self.u.data, c_out, c_out, &q, n);
        let k = graph.k();
        let inv_k = S::one() / S::of(k as f64);
        let mut out = VnFeature::zeros(n, c_out);
        for ctr in 0..n {
            let dst = out.point_mut(ctr);
            for &m in graph.neighbors(ctr) {
                for ch in 0..c_out {
                    let oc = (ctr * c_out + ch) * 3;
                    let om = (m * c_out + ch) * 3;
                    let v = [p[om] + q[oc], p[om + 1] + q[oc + 1], p[om + 2] + q[oc + 2]];
                    let dir = [up[om] + uq[oc], up[om + 1] + uq[oc + 1], up[om + 2] + uq[oc + 2]];
                    let r = relu_fwd(&v, &dir);
                    dst[ch * 3] += r[0];
                    dst[ch * 3 + 1] += r[1];
                    dst[ch * 3 + 2] += r[2];
                }
            }
            dst.iter_mut().for_each(|x| *x *= inv_k);
        }
        Ok((out, EdgeConvCache { c_in, p, q, up, uq }))
    }

    /// Accumulates parameter gradients into `grads` and returns `∂L/∂f`.
    pub fn backward(
        &self,
        f: &VnFeature<S>,
        graph: &KnnGraph,
        cache: &EdgeConvCache<S>,
        g_out: &VnFeature<S>,
        grads: &mut EdgeConv<S>,
    ) -> VnFeature<S> {
        let (c_out, c_in) = (self.c_out(), cache.c_in);
        let n = f.points();
        let k = graph.k();
        let inv_k = S::one() / S::of(k as f64);
        let (p, q, up, uq) = (&cache.p, &cache.q, &cache.up, &cache.uq);
        let len = n * c_out * 3;
        let (mut gp, mut gq, mut gup, mut guq) =
            (vec![S::zero(); len], vec![S::zero(); len], vec![S::zero(); len], vec![S::zero(); len]);
        for ctr in 0..n {
            for &m in graph.neighbors(ctr) {
                for ch in 0..c_out {
                    let oc = (ctr * c_out + ch) * 3;
                    let om = (m * c_out + ch) * 3;
                    let g = [g_out.data()[oc] * inv_k, g_out.data()[oc + 1] * inv_k, g_out.data()[oc + 2] * inv_k];
                    if g[0] == S::zero() && g[1] == S::zero() && g[2] == S::zero() {
                        continue;
                    }
                    let v = [p[om] + q[oc], p[om + 1] + q[oc + 1], p[om + 2] + q[oc + 2]];
                    let dir = [up[om] + uq[oc], up[om + 1] + uq[oc + 1], up[om + 2] + uq[oc + 2]];
                    let (gv, gd) = relu_bwd(&v, &dir, &g);
                    for x in 0..3 {
                        gp[om + x] += gv[x];
                        gq[oc + x] += gv[x];
                        gup[om + x] += gd[x];
                        guq[oc + x] += gd[x];
                    }
                }
            }
        }
        linear_bwd(&self.u.data, c_out, c_out, p, n, &gup, Some(&mut grads.u.data), Some(&mut gp));
        linear_bwd(&self.u.data, c_out, c_out, q, n, &guq, Some(&mut grads.u.data), Some(&mut gq));

        let (a, b) = self.split_weights();
        let mut ga = vec![S::zero(); c_out * c_in];
        let mut gb = vec![S::zero(); c_out * c_in];
        let mut gf = VnFeature::zeros(n, c_in);
        linear_bwd(&a, c_out, c_in, f.data(), n, &gp, Some(&mut ga), Some(gf.data_mut()));
        linear_bwd(&b, c_out, c_in, f.data(), n, &gq, Some(&mut gb), Some(gf.data_mut()));
        for j in 0..c_out {
            let row = &mut grads.w.data[j * 2 * c_in..(j + 1) * 2 * c_in];
            for i in 0..c_in {
                row[i] += ga[j * c_in + i] - gb[j * c_in + i];
                row[c_in + i] += gb[j * c_in + i];
            }
        }
        gf
    }
}

impl<S: Real> Module<S> for EdgeConv<S> {
    fn params(&self) -> Vec<(String, &Tensor<S>)> {
        vec![("w".into(), &self.w), ("u".into(), &self.u)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.w, &mut self.u]
    }
}

/// Free-function form of [`EdgeConv::forward`].
pub fn vn_edge_conv<S: Real>(f: &VnFeature<S>, edges: &KnnGraph, params: &EdgeConv<S>) -> Result<VnFeature<S>> {
    params.forward(f, edges).map(|(out, _)| out)
}

// ---------------------------------------------------------------------------
// invariantization

/// Maps vector channels to rotation-invariant scalars: inner products of
/// every channel with a learned three-vector equivariant frame, followed by a
/// learned affine mixing.
#[derive(Clone, Debug, PartialEq)]
pub struct Invariantizer<S> {
    /// `3 × d`
    pub frame: Tensor<S>,
    /// `d_i × 3d`
    pub mix: Tensor<S>,
    /// `d_i`
    pub bias: Tensor<S>,
}

pub struct InvariantizerCache<S> {
    frame_vecs: Vec<S>,
    gram: Vec<S>,
}

impl<S: Real> Invariantizer<S> {
    pub fn new<R: Rng + ?Sized>(d: usize, d_i: usize, rng: &mut R) -> Self {
        Invariantizer {
            frame: Tensor::fan_in(3, d, 1.0, rng),
            mix: Tensor::fan_in(d_i, 3 * d, 1.0, rng),
            bias: Tensor::zeros(&[d_i]),
        }
    }

    pub fn d(&self) -> usize {
        self.frame.cols()
    }

    pub fn d_i(&self) -> usize {
        self.mix.rows()
    }

    /// Rotation-invariant scalars per point, `d × 3`, before mixing.
    pub fn gram(&self, f: &VnFeature<S>) -> Vec<S> {
        let frame_vecs = linear_fwd(&self.frame.data, 3, self.d(), f.data(), f.points());
        gram_products(f, &frame_vecs)
    }

    pub fn forward(&self, f: &VnFeature<S>) -> Result<(InvFeature<S>, InvariantizerCache<S>)> {
        let d = self.d();
        if f.channels() != d {
            return Err(Error::ShapeMismatch(format!(
                "invariantizer expects {d} channels, got {}",
                f.channels()
            )));
        }
        let n = f.points();
        let d_i = self.d_i();
        let frame_vecs = linear_fwd(&self.frame.data, 3, d, f.data(), n);
        let gram = gram_products(f, &frame_vecs);
        let mut out = InvFeature::zeros(n, d_i);
        for p in 0..n {
            let g = &gram[p * 3 * d..(p + 1) * 3 * d];
            let dst = out.point_mut(p);
            for (o, slot) in dst.iter_mut().enumerate() {
                let row = &self.mix.data[o * 3 * d..(o + 1) * 3 * d];
                *slot = row.iter().zip(g).map(|(&w, &x)| w * x).sum::<S>() + self.bias.data[o];
            }
        }
        Ok((out, InvariantizerCache { frame_vecs, gram }))
    }

    pub fn backward(
        &self,
        f: &VnFeature<S>,
        cache: &InvariantizerCache<S>,
        g_out: &InvFeature<S>,
        grads: &mut Invariantizer<S>,
    ) -> VnFeature<S> {
        let d = self.d();
        let n = f.points();
        let mut gf = VnFeature::zeros(n, d);
        let mut g_frame = vec![S::zero(); n * 3 * 3];
        let mut g_gram = vec![S::zero(); 3 * d];
        for p in 0..n {
            let go = g_out.point(p);
            if go.iter().all(|&x| x == S::zero()) {
                continue;
            }
            let g = &cache.gram[p * 3 * d..(p + 1) * 3 * d];
            g_gram.iter_mut().for_each(|x| *x = S::zero());
            for (o, &gv) in go.iter().enumerate() {
                grads.bias.data[o] += gv;
                let row = &self.mix.data[o * 3 * d..(o + 1) * 3 * d];
                let grow = &mut grads.mix.data[o * 3 * d..(o + 1) * 3 * d];
                for k in 0..3 * d {
                    grow[k] += gv * g[k];
                    g_gram[k] += gv * row[k];
                }
            }
            let fr = &cache.frame_vecs[p * 9..(p + 1) * 9];
            let fp = f.point(p);
            let gfp = gf.point_mut(p);
            let gfr = &mut g_frame[p * 9..(p + 1) * 9];
            for i in 0..d {
                for a in 0..3 {
                    let gg = g_gram[i * 3 + a];
                    for x in 0..3 {
                        gfp[i * 3 + x] += gg * fr[a * 3 + x];
                        gfr[a * 3 + x] += gg * fp[i * 3 + x];
                    }
                }
            }
        }
        linear_bwd(&self.frame.data, 3, d, f.data(), n, &g_frame, Some(&mut grads.frame.data), Some(gf.data_mut()));
        gf
    }
}

fn gram_products<S: Real>(f: &VnFeature<S>, frame_vecs: &[S]) -> Vec<S> {
    let (n, d) = (f.points(), f.channels());
    let mut gram = vec![S::zero(); n * d * 3];
    for p in 0..n {
        let fr = &frame_vecs[p * 9..(p + 1) * 9];
        for i in 0..d {
            let v = f.get(p, i);
            for a in 0..3 {
                gram[(p * d + i) * 3 + a] = v[0] * fr[a * 3] + v[1] * fr[a * 3 + 1] + v[2] * fr[a * 3 + 2];
            }
        }
    }
    gram
}

impl<S: Real> Module<S> for Invariantizer<S> {
    fn params(&self) -> Vec<(String, &Tensor<S>)> {
        vec![
            ("frame".into(), &self.frame),
            ("mix".into(), &self.mix),
            ("bias".into(), &self.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.frame, &mut self.mix, &mut self.bias]
    }
}

/// Free-function form of [`Invariantizer::forward`]; requires `d ≥ 3`.
pub fn invariantize<S: Real>(f: &VnFeature<S>, params: &Invariantizer<S>) -> Result<InvFeature<S>> {
    if f.channels() < 3 {
        return Err(Error::InvalidInput(format!(
            "invariantize needs at least 3 channels, got {}",
            f.channels()
        )));
    }
    params.forward(f).map(|(out, _)| out)
}
