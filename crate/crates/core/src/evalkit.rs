//! Evaluation: scoring F1, manipulation success rate under z or SO(3)
//! poses, equivariance consistency and heatmap export.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{collect_offline, stream_rng, with_workers, CollectConfig, Dataset, DEFAULT_BETA, DEFAULT_RENDER_POINTS};
use crate::error::{Error, Result};
use crate::geometry::{apply_transform, geodesic_distance, random_rotation, PointCloud, RigidTransform, Vec3};
use crate::heads::{predicted_positive, AffordanceMap, EncoderKind, Model, EVAL_PROPOSALS};
use crate::nn::sigmoid;
use crate::real::Real;
use crate::sim::{execute_primitive, generate_specs, render_cloud, GripperAction, ObjectFamily, ObjectSpec, ObjectState, PoseSetting};
use crate::PrimitiveType;

const STREAM_POSE: u64 = 20;
const STREAM_EPISODE: u64 = 21;
const STREAM_RENDER: u64 = 22;
const STREAM_POLICY: u64 = 23;
const STREAM_TRANSFORM: u64 = 24;
const STREAM_NOISE: u64 = 25;

/// Added to the evaluation seed before generating object specs, so that an
/// evaluation never reuses the shapes a collection with the same seed drew.
pub const HELD_OUT_OFFSET: u64 = 1_000_003;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn of(pred: &[bool], truth: &[bool]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} predictions for {} labels",
                pred.len(),
                truth.len()
            )));
        }
        let mut c = Confusion::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    /// F1 of the positive class, 0 when precision + recall is 0.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if self.tp == 0 || denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

/// F1 of `pred` against `truth`; undefined unless both classes occur in `truth`.
pub fn f1_score(pred: &[bool], truth: &[bool]) -> Result<f64> {
    let c = Confusion::of(pred, truth)?;
    if c.tp + c.fn_ == 0 || c.tn + c.fp == 0 {
        return Err(Error::UndefinedF1(format!(
            "test set has {} positives and {} negatives",
            c.tp + c.fn_,
            c.tn + c.fp
        )));
    }
    Ok(c.f1())
}

/// Scoring-head decisions for every record of a dataset.
pub fn predict_records<S: Real>(model: &Model<S>, data: &Dataset, workers: usize) -> Result<Vec<bool>> {
    let features = with_workers(workers, || {
        data.clouds
            .par_iter()
            .map(|c| model.encode(&c.cloud))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(data
        .records
        .iter()
        .map(|r| {
            let f = &features[r.cloud];
            let logit = model.score_logit(f.inv.point(r.point_index), f.eqv.point(r.point_index), &r.orientation);
            predicted_positive(sigmoid(logit).as_f64())
        })
        .collect())
}

pub fn eval_f1<S: Real>(model: &Model<S>, data: &Dataset, workers: usize) -> Result<f64> {
    let truth: Vec<bool> = data.records.iter().map(|r| r.result).collect();
    if truth.iter().all(|&t| t) || truth.iter().all(|&t| !t) {
        return Err(Error::UndefinedF1("test set has a single class".into()));
    }
    f1_score(&predict_records(model, data, workers)?, &truth)
}

/// Object specs disjoint from those a collection with the same seed uses.
pub fn held_out_specs(family: ObjectFamily, n: usize, seed: u64) -> Vec<ObjectSpec> {
    generate_specs(family, n, seed.wrapping_add(HELD_OUT_OFFSET))
}

/// Gives spec `i` a base rotation drawn from stream `i`. Two settings with
/// the same seed therefore differ only in the pose of each object.
pub fn posed_specs(specs: &[ObjectSpec], setting: PoseSetting, seed: u64) -> Vec<ObjectSpec> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| s.with_base_pose(setting.sample(&mut stream_rng(seed, STREAM_POSE, i as u64))))
        .collect()
}

/// Labeled records for F1, drawn like offline collection on posed objects.
pub fn f1_test_set(
    specs: &[ObjectSpec],
    primitive: PrimitiveType,
    setting: PoseSetting,
    n: usize,
    cfg: &CollectConfig,
) -> Result<Dataset> {
    collect_offline(&posed_specs(specs, setting, cfg.seed), n, primitive, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub setting: PoseSetting,
    pub n_episodes: usize,
    pub seed: u64,
    pub n_points: usize,
    pub workers: usize,
}

/// Per episode: pick an object, pose it, render it, let `policy` choose an
/// action and execute it. `None` from the policy counts as a failure.
/// Every random choice has its own stream so that settings sharing a seed
/// see the same objects and the same object-frame point samples.
pub fn success_rate_with<P>(specs: &[ObjectSpec], primitive: PrimitiveType, cfg: &EpisodeConfig, policy: P) -> Result<f64>
where
    P: Fn(&PointCloud, &ObjectState, &mut ChaCha8Rng) -> Result<Option<GripperAction>> + Sync,
{
    if cfg.n_episodes == 0 {
        return Err(Error::InvalidInput("at least one episode is required".into()));
    }
    if specs.is_empty() {
        return Err(Error::InvalidInput("no object specs to evaluate on".into()));
    }
    let results: Vec<bool> = with_workers(cfg.workers, || {
        (0..cfg.n_episodes)
            .into_par_iter()
            .map(|e| {
                let e = e as u64;
                let o = stream_rng(cfg.seed, STREAM_EPISODE, e).random_range(0..specs.len());
                let pose = cfg.setting.sample(&mut stream_rng(cfg.seed, STREAM_POSE, e));
                let state = specs[o].with_base_pose(pose).initial_state(primitive.is_pull());
                let cloud = render_cloud(&state, cfg.n_points, &mut stream_rng(cfg.seed, STREAM_RENDER, e))?;
                let action = policy(&cloud, &state, &mut stream_rng(cfg.seed, STREAM_POLICY, e))?;
                Ok(action.is_some_and(|a| execute_primitive(&state, &a).0))
            })
            .collect::<Result<_>>()
    })?;
    Ok(results.iter().filter(|&&r| r).count() as f64 / results.len() as f64)
}

/// Success rate of the model's best action with `k` proposals.
pub fn eval_success_rate<S: Real>(
    model: &Model<S>,
    specs: &[ObjectSpec],
    primitive: PrimitiveType,
    cfg: &EpisodeConfig,
    k: usize,
) -> Result<f64> {
    success_rate_with(specs, primitive, cfg, |cloud, _, rng| {
        match model.infer_best_action(cloud, primitive, k, rng) {
            Ok(best) => Ok(Some(GripperAction {
                primitive,
                contact_point: cloud.point(best.point_index),
                orientation: best.rotation,
            })),
            Err(Error::NoValidProposal(_)) => Ok(None),
            Err(e) => Err(e),
        }
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    /// Largest per-point affordance change between any two transforms.
    pub affordance_dev: f64,
    /// Mean geodesic between back-rotated proposals under shared noise (radians).
    pub proposal_geodesic_dev: f64,
}

/// A random rotation with a translation uniform in [-1, 1]^3.
pub fn random_rigid<R: Rng + ?Sized>(rng: &mut R) -> RigidTransform {
    let r = random_rotation(rng);
    let t = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    RigidTransform::new(r, t)
}

pub fn eval_equivariance_consistency<S: Real>(
    model: &Model<S>,
    cloud: &PointCloud,
    n_rot: usize,
    seed: u64,
) -> Result<EquivarianceReport> {
    let transforms: Vec<RigidTransform> = (0..n_rot)
        .map(|i| random_rigid(&mut stream_rng(seed, STREAM_TRANSFORM, i as u64)))
        .collect();
    equivariance_under(model, cloud, &transforms, seed)
}

/// Consistency of affordance and proposals across the given transforms.
/// Proposal noise for point `p` comes from stream `p` of `seed`.
pub fn equivariance_under<S: Real>(
    model: &Model<S>,
    cloud: &PointCloud,
    transforms: &[RigidTransform],
    seed: u64,
) -> Result<EquivarianceReport> {
    if transforms.len() < 2 {
        return Err(Error::InvalidInput("need at least two transforms".into()));
    }
    let noise: Vec<Vec<S>> = (0..cloud.len())
        .map(|p| model.sample_noise(&mut stream_rng(seed, STREAM_NOISE, p as u64)))
        .collect();
    let mut maps = Vec::with_capacity(transforms.len());
    let mut frames = Vec::with_capacity(transforms.len());
    for t in transforms {
        let f = model.encode(&apply_transform(t, cloud))?;
        maps.push(model.affordance_map(&f).scores);
        let back = t.rotation.inverse();
        frames.push(
            (0..cloud.len())
                .map(|p| model.propose_action(f.eqv.point(p), &noise[p]).ok().map(|r| back.compose(&r)))
                .collect::<Vec<_>>(),
        );
    }
    let mut affordance_dev: f64 = 0.0;
    for i in 0..maps.len() {
        for j in i + 1..maps.len() {
            for (a, b) in maps[i].iter().zip(&maps[j]) {
                affordance_dev = affordance_dev.max((a - b).abs());
            }
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for other in &frames[1..] {
        for (a, b) in frames[0].iter().zip(other) {
            if let (Some(a), Some(b)) = (a, b) {
                sum += geodesic_distance(a, b)?;
                count += 1;
            }
        }
    }
    Ok(EquivarianceReport {
        affordance_dev,
        proposal_geodesic_dev: if count == 0 { 0.0 } else { sum / count as f64 },
    })
}

/// Score 0 is blue, 1 is red, linear in between, channels rounded half down.
pub fn score_color(s: f64) -> [u8; 3] {
    let s = s.clamp(0.0, 1.0);
    let ch = |x: f64| (x - 0.5).ceil().clamp(0.0, 255.0) as u8;
    [ch(255.0 * s), 0, ch(255.0 * (1.0 - s))]
}

/// ASCII PLY text: header with the vertex count and `x y z red green blue`
/// properties, then one line per point with 6 significant digits.
pub fn heatmap_ply(cloud: &PointCloud, scores: &AffordanceMap) -> Result<String> {
    if cloud.len() != scores.scores.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} points but {} scores",
            cloud.len(),
            scores.scores.len()
        )));
    }
    if let Some(bad) = scores.scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite score {bad}")));
    }
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    );
    for (p, &s) in cloud.points().iter().zip(&scores.scores) {
        let [r, g, b] = score_color(s);
        out.push_str(&format!("{:.5e} {:.5e} {:.5e} {r} {g} {b}\n", p.x, p.y, p.z));
    }
    Ok(out)
}

pub fn export_heatmap(cloud: &PointCloud, scores: &AffordanceMap, path: &Path) -> Result<()> {
    let text = heatmap_ply(cloud, scores)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads back positions and colors written by [`heatmap_ply`].
pub fn parse_heatmap(text: &str) -> Result<(Vec<[f64; 3]>, Vec<[u8; 3]>)> {
    let bad = |m: String| Error::InvalidInput(format!("heatmap: {m}"));
    let mut lines = text.lines();
    let mut count = None;
    for line in lines.by_ref() {
        if let Some(n) = line.strip_prefix("element vertex ") {
            count = Some(n.trim().parse::<usize>().map_err(|e| bad(e.to_string()))?);
        }
        if line == "end_header" {
            break;
        }
    }
    let count = count.ok_or_else(|| bad("missing vertex count".into()))?;
    let mut points = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    for line in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, got {}", f.len())));
        }
        let x = |i: usize| f[i].parse::<f64>().map_err(|e| bad(e.to_string()));
        let c = |i: usize| f[i].parse::<u8>().map_err(|e| bad(e.to_string()));
        points.push([x(0)?, x(1)?, x(2)?]);
        colors.push([c(3)?, c(4)?, c(5)?]);
    }
    if points.len() != count {
        return Err(bad(format!("header says {count} vertices, found {}", points.len())));
    }
    Ok((points, colors))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub family: ObjectFamily,
    pub setting: PoseSetting,
    pub n_episodes: usize,
    /// Held-out object instances.
    pub n_objects: usize,
    pub n_f1_records: usize,
    pub k_proposals: usize,
    pub beta: f64,
    pub n_points: usize,
    /// Transforms for the equivariance-consistency check.
    pub n_rot: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            family: ObjectFamily::Drawer,
            setting: PoseSetting::Z,
            n_episodes: 200,
            n_objects: 50,
            n_f1_records: 2000,
            k_proposals: EVAL_PROPOSALS,
            beta: DEFAULT_BETA,
            n_points: DEFAULT_RENDER_POINTS,
            n_rot: 4,
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: PoseSetting,
    pub family: ObjectFamily,
    pub primitive: PrimitiveType,
    pub architecture: EncoderKind,
    pub f1: f64,
    pub n_f1_records: usize,
    pub n_f1_positive: usize,
    pub success_rate: f64,
    pub n_episodes: usize,
    pub k_proposals: usize,
    pub equivariance: EquivarianceReport,
    pub seed: u64,
    pub spec_seed: u64,
}

/// F1 on a held-out record set, success rate and equivariance consistency,
/// all under the configured pose setting.
pub fn evaluate<S: Real>(model: &Model<S>, cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.n_episodes == 0 || cfg.n_objects == 0 {
        return Err(Error::InvalidInput("n_episodes and n_objects must be positive".into()));
    }
    let primitive = model.config.primitive;
    let specs = held_out_specs(cfg.family, cfg.n_objects, cfg.seed);
    let collect = CollectConfig {
        seed: cfg.seed,
        beta: cfg.beta,
        n_points: cfg.n_points,
        workers: cfg.workers,
    };
    let test = f1_test_set(&specs, primitive, cfg.setting, cfg.n_f1_records, &collect)?;
    let f1 = eval_f1(model, &test, cfg.workers)?;
    let episodes = EpisodeConfig {
        setting: cfg.setting,
        n_episodes: cfg.n_episodes,
        seed: cfg.seed,
        n_points: cfg.n_points,
        workers: cfg.workers,
    };
    let success_rate = eval_success_rate(model, &specs, primitive, &episodes, cfg.k_proposals)?;
    let equivariance = match test.clouds.first() {
        Some(c) if cfg.n_rot >= 2 => eval_equivariance_consistency(model, &c.cloud, cfg.n_rot, cfg.seed)?,
        _ => EquivarianceReport::default(),
    };
    Ok(EvalReport {
        setting: cfg.setting,
        family: cfg.family,
        primitive,
        architecture: model.config.kind,
        f1,
        n_f1_records: test.len(),
        n_f1_positive: test.manifest.n_positive,
        success_rate,
        n_episodes: cfg.n_episodes,
        k_proposals: cfg.k_proposals,
        equivariance,
        seed: cfg.seed,
        spec_seed: cfg.seed.wrapping_add(HELD_OUT_OFFSET),
    })
}

#[cfg(test)]
mod tests;
