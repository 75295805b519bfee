//! Affordance, proposal and scoring heads on top of a point encoder, and the
//! inference pipeline that chains them.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baseline::{BaselineCache, BaselineConfig, BaselineEncoder};
use crate::error::{Error, Result};
use crate::geometry::{gram_schmidt_frame, gram_schmidt_frame_backward, KnnGraph, PointCloud, Rotation, Vec3};
use crate::nn::{sigmoid, Dense, Mlp};
use crate::primitive::PrimitiveType;
use crate::real::Real;
use crate::tensor::{prefixed, Module, Tensor};
use crate::vn::layers::{linear_bwd, linear_fwd, relu_bwd, relu_fwd};
use crate::vn::{EncoderConfig, EncoderOutput, InvFeature, VnEncoder, VnEncoderCache, VnFeature};

/// Proposals drawn per point at evaluation.
pub const EVAL_PROPOSALS: usize = 100;
/// Proposals drawn per point at desk scale.
pub const DESK_PROPOSALS: usize = 20;
/// Success likelihoods above this count as predicted positives.
pub const DECISION_THRESHOLD: f64 = 0.5;

pub fn predicted_positive(score: f64) -> bool {
    score > DECISION_THRESHOLD
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    VectorNeuron,
    Baseline,
}

impl std::str::FromStr for EncoderKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "vector_neuron" | "vn" => Ok(EncoderKind::VectorNeuron),
            "baseline" => Ok(EncoderKind::Baseline),
            other => Err(format!("unknown encoder kind `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: EncoderKind,
    pub encoder: EncoderConfig,
    pub primitive: PrimitiveType,
    /// Length of the proposal noise vector.
    pub d_z: usize,
    /// Hidden width of the affordance and scoring MLPs.
    pub hidden: usize,
}

impl ModelConfig {
    pub fn new(kind: EncoderKind, primitive: PrimitiveType) -> Self {
        ModelConfig {
            kind,
            encoder: EncoderConfig::default(),
            primitive,
            d_z: 8,
            hidden: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.d_z == 0 || self.hidden == 0 {
            return Err(Error::InvalidInput("d_z and hidden must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Encoder<S> {
    Vn(VnEncoder<S>),
    Baseline(BaselineEncoder<S>),
}

pub enum EncoderCache<S> {
    Vn(Box<VnEncoderCache<S>>),
    Baseline(Box<BaselineCache<S>>),
}

impl<S: Real> Encoder<S> {
    pub fn forward(&self, cloud: &PointCloud) -> Result<(EncoderOutput<S>, EncoderCache<S>)> {
        match self {
            Encoder::Vn(e) => e.forward(cloud).map(|(o, c)| (o, EncoderCache::Vn(Box::new(c)))),
            Encoder::Baseline(e) => e.forward(cloud).map(|(o, c)| (o, EncoderCache::Baseline(Box::new(c)))),
        }
    }

    pub fn k_nn(&self) -> usize {
        match self {
            Encoder::Vn(e) => e.config.k_nn,
            Encoder::Baseline(e) => e.config.encoder.k_nn,
        }
    }

    /// Forward pass reusing a precomputed neighbor graph.
    pub fn forward_with_graph(&self, cloud: &PointCloud, graph: KnnGraph) -> Result<(EncoderOutput<S>, EncoderCache<S>)> {
        match self {
            Encoder::Vn(e) => e
                .forward_with_graph(cloud, graph)
                .map(|(o, c)| (o, EncoderCache::Vn(Box::new(c)))),
            Encoder::Baseline(e) => e
                .forward_with_graph(cloud, graph)
                .map(|(o, c)| (o, EncoderCache::Baseline(Box::new(c)))),
        }
    }

    pub fn backward(&self, cache: &EncoderCache<S>, g_inv: &InvFeature<S>, g_eqv: &VnFeature<S>, grads: &mut Self) {
        match (self, cache, grads) {
            (Encoder::Vn(e), EncoderCache::Vn(c), Encoder::Vn(g)) => e.backward(c, g_inv, g_eqv, g),
            (Encoder::Baseline(e), EncoderCache::Baseline(c), Encoder::Baseline(g)) => e.backward(c, g_inv, g_eqv, g),
            _ => panic!("encoder, cache and gradient buffer kinds differ"),
        }
    }
}

impl<S: Real> Module<S> for Encoder<S> {
    fn params(&self) -> Vec<(String, &Tensor<S>)> {
        match self {
            Encoder::Vn(e) => e.params(),
            Encoder::Baseline(e) => e.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        match self {
            Encoder::Vn(e) => e.params_mut(),
            Encoder::Baseline(e) => e.params_mut(),
        }
    }
}

/// Noise-gated vector-neuron generator of two vectors per point, turned into
/// a rotation by Gram-Schmidt.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalHead<S> {
    /// `d_z → d` gate logits.
    pub gate: Dense<S>,
    pub w1: Tensor<S>,
    pub u1: Tensor<S>,
    pub w2: Tensor<S>,
}

pub struct ProposalCache<S> {
    gate_sig: Vec<S>,
    gated: Vec<S>,
    h1: Vec<S>,
    dir: Vec<S>,
    act: Vec<S>,
    uv: [[S; 3]; 2],
}

impl<S: Real> ProposalHead<S> {
    pub fn new<R: Rng + ?Sized>(d: usize, d_z: usize, rng: &mut R) -> Self {
        ProposalHead {
            gate: Dense::new(d_z, d, 1.0, rng),
            w1: Tensor::fan_in(d, d, 2f64.sqrt(), rng),
            u1: Tensor::fan_in(d, d, 1.0, rng),
            w2: Tensor::fan_in(2, d, 1.0, rng),
        }
    }

    fn d(&self) -> usize {
        self.w1.cols()
    }

    /// Returns the frame columns.
    pub fn forward(&self, eqv_p: &[S], noise: &[S]) -> Result<([[S; 3]; 3], ProposalCache<S>)> {
        let d = self.d();
        let h = self.w1.rows();
        if eqv_p.len() != d * 3 || noise.len() != self.gate.c_in() {
            return Err(Error::ShapeMismatch(format!(
                "proposal head expects {d}x3 features and {} noise values",
                self.gate.c_in()
            )));
        }
        if noise.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidInput("non-finite proposal noise".into()));
        }
        let mut logits = Vec::with_capacity(d);
        self.gate.forward_into(noise, &mut logits);
        let gate_sig: Vec<S> = logits.into_iter().map(sigmoid).collect();
        let two = S::of(2.0);
        let mut gated = eqv_p.to_vec();
        for (ch, s) in gate_sig.iter().enumerate() {
            for x in &mut gated[ch * 3..ch * 3 + 3] {
                *x *= two * *s;
            }
        }
        let h1 = linear_fwd(&self.w1.data, h, d, &gated, 1);
        let dir = linear_fwd(&self.u1.data, h, h, &h1, 1);
        let mut act = vec![S::zero(); h * 3];
        for c in 0..h {
            let v = [h1[c * 3], h1[c * 3 + 1], h1[c * 3 + 2]];
            let q = [dir[c * 3], dir[c * 3 + 1], dir[c * 3 + 2]];
            act[c * 3..c * 3 + 3].copy_from_slice(&relu_fwd(&v, &q));
        }
        let out = linear_fwd(&self.w2.data, 2, h, &act, 1);
        let uv = [[out[0], out[1], out[2]], [out[3], out[4], out[5]]];
        let frame = gram_schmidt_frame(&uv[0], &uv[1])?;
        Ok((
            frame,
            ProposalCache {
                gate_sig,
                gated,
                h1,
                dir,
                act,
                uv,
            },
        ))
    }

    /// Returns `∂L/∂eqv_p` given `∂L/∂frame`.
    pub fn backward(
        &self,
        eqv_p: &[S],
        noise: &[S],
        cache: &ProposalCache<S>,
        g_frame: &[[S; 3]; 3],
        grads: &mut ProposalHead<S>,
    ) -> Vec<S> {
        let d = self.d();
        let h = self.w1.rows();
        let (gu, gv) = gram_schmidt_frame_backward(&cache.uv[0], &cache.uv[1], g_frame);
        let g_out = [gu[0], gu[1], gu[2], gv[0], gv[1], gv[2]];
        let mut g_act = vec![S::zero(); h * 3];
        linear_bwd(&self.w2.data, 2, h, &cache.act, 1, &g_out, Some(&mut grads.w2.data), Some(&mut g_act));
        let mut g_h1 = vec![S::zero(); h * 3];
        let mut g_dir = vec![S::zero(); h * 3];
        for c in 0..h {
            let o = c * 3;
            let v = [cache.h1[o], cache.h1[o + 1], cache.h1[o + 2]];
            let q = [cache.dir[o], cache.dir[o + 1], cache.dir[o + 2]];
            let g = [g_act[o], g_act[o + 1], g_act[o + 2]];
            let (gv, gq) = relu_bwd(&v, &q, &g);
            g_h1[o..o + 3].copy_from_slice(&gv);
            g_dir[o..o + 3].copy_from_slice(&gq);
        }
        linear_bwd(&self.u1.data, h, h, &cache.h1, 1, &g_dir, Some(&mut grads.u1.data), Some(&mut g_h1));
        let mut g_gated = vec![S::zero(); d * 3];
        linear_bwd(&self.w1.data, h, d, &cache.gated, 1, &g_h1, Some(&mut grads.w1.data), Some(&mut g_gated));

        let two = S::of(2.0);
        let mut g_eqv = vec![S::zero(); d * 3];
        let mut g_logit = vec![S::zero(); d];
        for ch in 0..d {
            let s = cache.gate_sig[ch];
            let mut dot = S::zero();
            for j in 0..3 {
                g_eqv[ch * 3 + j] = g_gated[ch * 3 + j] * two * s;
                dot += g_gated[ch * 3 + j] * eqv_p[ch * 3 + j];
            }
            g_logit[ch] = dot * two * s * (S::one() - s);
        }
        self.gate.backward(noise, &g_logit, &mut grads.gate, None);
        g_eqv
    }
}

impl<S: Real> Module<S> for ProposalHead<S> {
    fn params(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out: Vec<_> = prefixed("gate", self.gate.params()).collect();
        out.push(("w1".into(), &self.w1));
        out.push(("u1".into(), &self.u1));
        out.push(("w2".into(), &self.w2));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = self.gate.params_mut();
        out.push(&mut self.w1);
        out.push(&mut self.u1);
        out.push(&mut self.w2);
        out
    }
}

/// Converts a frame in columns to a validated rotation.
pub fn frame_to_rotation<S: Real>(frame: &[[S; 3]; 3]) -> Result<Rotation> {
    let col = |i: usize| Vec3::new(frame[i][0].as_f64(), frame[i][1].as_f64(), frame[i][2].as_f64());
    Rotation::from_columns(col(0), col(1), col(2))
}

/// Per-point input of the scoring MLP: the invariant features followed by the
/// inner products of every equivariant channel with the three columns of `r`.
pub fn scoring_input<S: Real>(inv_p: &[S], eqv_p: &[S], r: &Rotation) -> Vec<S> {
    let cols: [[S; 3]; 3] = std::array::from_fn(|j| {
        let c = r.column(j);
        [S::of(c.x), S::of(c.y), S::of(c.z)]
    });
    let mut x = Vec::with_capacity(inv_p.len() + eqv_p.len());
    x.extend_from_slice(inv_p);
    for v in eqv_p.chunks_exact(3) {
        for c in &cols {
            x.push(v[0] * c[0] + v[1] * c[1] + v[2] * c[2]);
        }
    }
    x
}

/// Splits `∂L/∂(scoring input)` back into invariant and equivariant parts.
pub fn scoring_input_backward<S: Real>(g_x: &[S], d_i: usize, r: &Rotation) -> (Vec<S>, Vec<S>) {
    let cols: [[S; 3]; 3] = std::array::from_fn(|j| {
        let c = r.column(j);
        [S::of(c.x), S::of(c.y), S::of(c.z)]
    });
    let g_inv = g_x[..d_i].to_vec();
    let mut g_eqv = Vec::with_capacity(g_x.len() - d_i);
    for g in g_x[d_i..].chunks_exact(3) {
        for k in 0..3 {
            g_eqv.push(g[0] * cols[0][k] + g[1] * cols[1][k] + g[2] * cols[2][k]);
        }
    }
    (g_inv, g_eqv)
}

/// Per-point affordance scores in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffordanceMap {
    pub scores: Vec<f64>,
}

impl AffordanceMap {
    /// Highest score, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalSet {
    pub point_index: usize,
    pub rotations: Vec<Rotation>,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestAction {
    pub point_index: usize,
    pub rotation: Rotation,
    pub score: f64,
    pub affordance: AffordanceMap,
    pub proposals: ProposalSet,
}

/// Encoder plus the three heads for one primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub encoder: Encoder<S>,
    pub affordance: Mlp<S>,
    pub proposal: ProposalHead<S>,
    pub scoring: Mlp<S>,
}

impl<S: Real> Model<S> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let e = config.encoder;
        let encoder = match config.kind {
            EncoderKind::VectorNeuron => Encoder::Vn(VnEncoder::new(e, rng)),
            EncoderKind::Baseline => Encoder::Baseline(BaselineEncoder::new(BaselineConfig::new(e), rng)),
        };
        Ok(Model {
            config,
            encoder,
            affordance: Mlp::new(&[e.d_i, config.hidden, config.hidden, 1], rng),
            proposal: ProposalHead::new(e.d, config.d_z, rng),
            scoring: Mlp::new(&[e.d_i + 3 * e.d, config.hidden, config.hidden, 1], rng),
        })
    }

    pub fn encode(&self, cloud: &PointCloud) -> Result<EncoderOutput<S>> {
        self.encoder.forward(cloud).map(|(o, _)| o)
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<S> {
        (0..self.config.d_z).map(|_| S::of(rng.sample(StandardNormal))).collect()
    }

    /// Affordance logit of one point.
    pub fn affordance_logit(&self, inv_p: &[S]) -> S {
        self.affordance.forward(inv_p)[0]
    }

    pub fn predict_affordance(&self, inv_p: &[S]) -> S {
        sigmoid(self.affordance_logit(inv_p))
    }

    pub fn affordance_map(&self, features: &EncoderOutput<S>) -> AffordanceMap {
        let inv = &features.inv;
        AffordanceMap {
            scores: (0..inv.points()).map(|p| self.predict_affordance(inv.point(p)).as_f64()).collect(),
        }
    }

    pub fn propose_action(&self, eqv_p: &[S], noise: &[S]) -> Result<Rotation> {
        let (frame, _) = self.proposal.forward(eqv_p, noise)?;
        frame_to_rotation(&frame)
    }

    pub fn score_logit(&self, inv_p: &[S], eqv_p: &[S], r: &Rotation) -> S {
        self.scoring.forward(&scoring_input(inv_p, eqv_p, r))[0]
    }

    pub fn score_action(&self, inv_p: &[S], eqv_p: &[S], r: &Rotation) -> Result<S> {
        if !r.is_valid() {
            return Err(Error::InvalidRotation("scored orientation is not a rotation".into()));
        }
        Ok(sigmoid(self.score_logit(inv_p, eqv_p, r)))
    }

    /// Scores `k` noise-driven proposals at point `p` of precomputed features.
    pub fn proposals_at<R: Rng + ?Sized>(
        &self,
        features: &EncoderOutput<S>,
        p: usize,
        k: usize,
        rng: &mut R,
    ) -> ProposalSet {
        let inv_p = features.inv.point(p);
        let eqv_p = features.eqv.point(p);
        let mut set = ProposalSet {
            point_index: p,
            rotations: Vec::with_capacity(k),
            scores: Vec::with_capacity(k),
        };
        for _ in 0..k {
            let z = self.sample_noise(rng);
            let Ok(r) = self.propose_action(eqv_p, &z) else {
                continue;
            };
            set.scores.push(sigmoid(self.score_logit(inv_p, eqv_p, &r)).as_f64());
            set.rotations.push(r);
        }
        set
    }

    /// Picks the highest-affordance point, proposes `k` orientations there and
    /// returns the best-scoring one.
    pub fn infer_best_action<R: Rng + ?Sized>(
        &self,
        cloud: &PointCloud,
        primitive: PrimitiveType,
        k: usize,
        rng: &mut R,
    ) -> Result<BestAction> {
        if primitive != self.config.primitive {
            return Err(Error::InvalidInput(format!(
                "model was trained for {}, asked for {primitive}",
                self.config.primitive
            )));
        }
        if k == 0 {
            return Err(Error::InvalidInput("at least one proposal is required".into()));
        }
        let features = self.encode(cloud)?;
        let affordance = self.affordance_map(&features);
        let p = affordance.argmax();
        let proposals = self.proposals_at(&features, p, k, rng);
        let mut best: Option<usize> = None;
        for (i, &s) in proposals.scores.iter().enumerate() {
            if best.is_none_or(|b| s > proposals.scores[b]) {
                best = Some(i);
            }
        }
        let b = best.ok_or(Error::NoValidProposal(k))?;
        Ok(BestAction {
            point_index: p,
            rotation: proposals.rotations[b],
            score: proposals.scores[b],
            affordance,
            proposals,
        })
    }
}

impl<S: Real> Module<S> for Model<S> {
    fn params(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out: Vec<_> = prefixed("encoder", self.encoder.params()).collect();
        out.extend(prefixed("affordance", self.affordance.params()));
        out.extend(prefixed("proposal", self.proposal.params()));
        out.extend(prefixed("scoring", self.scoring.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = self.encoder.params_mut();
        out.extend(self.affordance.params_mut());
        out.extend(self.proposal.params_mut());
        out.extend(self.scoring.params_mut());
        out
    }
}
