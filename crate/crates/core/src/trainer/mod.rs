//! Two-stage training: scoring and proposal heads with the encoder first
//! (with online collection interleaved), then the affordance head against
//! targets rated by the frozen scoring head.

mod adam;
pub mod losses;

pub use adam::Adam;
pub use losses::{
    affordance_target, bce_with_logit, geodesic_with_grad, loss_affordance, loss_affordance_batch,
    loss_affordance_grad, loss_proposal, loss_scoring, loss_scoring_grad, rotation_columns, top_mean,
};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::AnyModel;
use crate::datagen::{collect_online_on, stream_rng, with_workers, CollectConfig, Dataset, InteractionRecord};
use crate::error::{Error, Result};
use crate::evalkit::f1_score;
use crate::geometry::{knn_graph, KnnGraph, Rotation};
use crate::heads::{predicted_positive, scoring_input, scoring_input_backward, EncoderKind, Model, ModelConfig};
use crate::nn::sigmoid;
use crate::real::{Precision, Real};
use crate::tensor::{zeros_like, Module};
use crate::vn::{EncoderConfig, EncoderOutput, InvFeature, VnFeature};

const STREAM_INIT: u64 = 10;
const STREAM_SPLIT: u64 = 11;
const STREAM_EPOCH: u64 = 12;
const STREAM_PROPOSAL: u64 = 13;
const STREAM_TARGET: u64 = 14;
const STREAM_ONLINE_TRAIN: u64 = 15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Scoring and proposal epochs.
    pub epochs_a: usize,
    /// Affordance epochs.
    pub epochs_b: usize,
    /// Noise draws per positive for the minimum-over-k proposal loss.
    pub k_prop: usize,
    /// Proposals rated per point for an affordance target.
    pub k_aff: usize,
    /// Number of best-rated proposals averaged into the target.
    pub top_j: usize,
    /// Online episodes after each stage-A epoch past `online_after_epoch`.
    pub online_per_epoch: usize,
    pub online_after_epoch: usize,
    /// Total online episodes over the whole run.
    pub online_budget: usize,
    /// Extra random points per cloud that receive an affordance target.
    pub aff_points_per_cloud: usize,
    pub holdout_fraction: f64,
    pub proposal_weight: f64,
    pub class_balance: ClassBalance,
    /// Global gradient-norm ceiling.
    pub grad_clip: f64,
    pub seed: u64,
    pub precision: Precision,
    pub architecture: EncoderKind,
    pub encoder: EncoderConfig,
    pub d_z: usize,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs_a: 20,
            epochs_b: 10,
            k_prop: 5,
            k_aff: 20,
            top_j: 3,
            online_per_epoch: 256,
            online_after_epoch: 2,
            online_budget: 1000,
            aff_points_per_cloud: 32,
            holdout_fraction: 0.1,
            proposal_weight: 1.0,
            class_balance: ClassBalance::Reweight,
            grad_clip: 10.0,
            seed: 0,
            precision: Precision::F32,
            architecture: EncoderKind::VectorNeuron,
            encoder: EncoderConfig::default(),
            d_z: 8,
            hidden: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("train config: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.k_prop == 0 || self.k_aff == 0 || self.top_j == 0 {
            return bad("batch_size, k_prop, k_aff and top_j must be positive");
        }
        if self.top_j > self.k_aff {
            return bad("top_j must not exceed k_aff");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must be in [0, 1)");
        }
        if !(self.proposal_weight >= 0.0 && self.grad_clip > 0.0) {
            return bad("proposal_weight must be non-negative and grad_clip positive");
        }
        self.encoder.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::InvalidInput(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn model_config(&self, primitive: crate::PrimitiveType) -> ModelConfig {
        ModelConfig {
            kind: self.architecture,
            encoder: self.encoder,
            primitive,
            d_z: self.d_z,
            hidden: self.hidden,
        }
    }
}

/// How stage A evens out the rare positive class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassBalance {
    /// Every positive plus an equal number of random negatives per epoch.
    Downsample,
    /// Every record, each class weighted to half of the loss. Records are
    /// batched by cloud so one encoder pass serves all records of a cloud.
    Reweight,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    A,
    B,
}

/// One row of the metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub stage: Stage,
    pub loss_scoring: Option<f64>,
    pub loss_proposal: Option<f64>,
    pub loss_affordance: Option<f64>,
    pub train_f1: Option<f64>,
    pub samples: usize,
    pub online_records: usize,
    pub online_positive_rate: Option<f64>,
}

pub const METRICS_HEADER: &str =
    "epoch,stage,loss_scoring,loss_proposal,loss_affordance,train_f1,samples,online_records,online_positive_rate";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            match self.stage {
                Stage::A => "A",
                Stage::B => "B",
            },
            o(self.loss_scoring),
            o(self.loss_proposal),
            o(self.loss_affordance),
            o(self.train_f1),
            self.samples,
            self.online_records,
            o(self.online_positive_rate)
        )
    }
}

pub fn metrics_to_csv(log: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in log {
        s.push_str(&m.csv_row());
        s.push('\n');
    }
    s
}

/// Held-out scoring quality after stage A.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub n_records: usize,
    pub n_positive: usize,
    pub f1: f64,
    /// F1 of predicting every record positive.
    pub majority_f1: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub log: Vec<EpochMetrics>,
    pub holdout: Option<HoldoutReport>,
    /// Records gathered by online collection during training.
    pub online: Option<Dataset>,
}

#[derive(Clone, Debug)]
struct Sample {
    cloud: usize,
    point: usize,
    rotation: Rotation,
    label: bool,
}

impl Sample {
    fn of(r: &InteractionRecord) -> Self {
        Sample {
            cloud: r.cloud,
            point: r.point_index,
            rotation: r.orientation,
            label: r.result,
        }
    }
}

#[derive(Default)]
struct StepStats {
    bce_pos: f64,
    bce_neg: f64,
    geo: f64,
    n_geo: usize,
    /// (predicted positive, label)
    outcomes: Vec<(bool, bool)>,
}

impl StepStats {
    fn absorb(&mut self, o: StepStats) {
        self.bce_pos += o.bce_pos;
        self.bce_neg += o.bce_neg;
        self.geo += o.geo;
        self.n_geo += o.n_geo;
        self.outcomes.extend(o.outcomes);
    }

    /// Mean cross-entropy with both classes weighted equally.
    fn balanced_bce(&self) -> Option<f64> {
        let n_pos = self.outcomes.iter().filter(|o| o.1).count();
        let n_neg = self.outcomes.len() - n_pos;
        match (n_pos, n_neg) {
            (0, 0) => None,
            (0, n) => Some(self.bce_neg / n as f64),
            (p, 0) => Some(self.bce_pos / p as f64),
            (p, n) => Some(0.5 * (self.bce_pos / p as f64 + self.bce_neg / n as f64)),
        }
    }
}

/// Per-record loss weights of one step.
#[derive(Clone, Copy)]
struct Weights<S> {
    pos: S,
    neg: S,
    geo: S,
}

/// Trains a model in the precision named by the config.
pub fn train_any(dataset: &Dataset, cfg: &TrainConfig, workers: usize) -> Result<TrainOutcome<AnyModel>> {
    train_any_logged(dataset, cfg, workers, &mut |_| {})
}

/// Like [`train_any`], calling `on_epoch` as each epoch's metrics are final.
pub fn train_any_logged(
    dataset: &Dataset,
    cfg: &TrainConfig,
    workers: usize,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome<AnyModel>> {
    fn wrap<S: Real>(o: TrainOutcome<Model<S>>, f: fn(Model<S>) -> AnyModel) -> TrainOutcome<AnyModel> {
        TrainOutcome {
            model: f(o.model),
            log: o.log,
            holdout: o.holdout,
            online: o.online,
        }
    }
    Ok(match cfg.precision {
        Precision::F32 => wrap(train_logged::<f32>(dataset, cfg, workers, on_epoch)?, AnyModel::F32),
        Precision::F64 => wrap(train_logged::<f64>(dataset, cfg, workers, on_epoch)?, AnyModel::F64),
    })
}

pub fn train<S: Real>(dataset: &Dataset, cfg: &TrainConfig, workers: usize) -> Result<TrainOutcome<Model<S>>> {
    train_logged(dataset, cfg, workers, &mut |_| {})
}

pub fn train_logged<S: Real>(
    dataset: &Dataset,
    cfg: &TrainConfig,
    workers: usize,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome<Model<S>>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::TrainingInfeasible("dataset has no records".into()));
    }
    let n_pos = dataset.records.iter().filter(|r| r.result).count();
    if n_pos == 0 || n_pos == dataset.len() {
        return Err(Error::TrainingInfeasible(format!(
            "dataset has a single class ({n_pos} positives of {})",
            dataset.len()
        )));
    }
    let primitive = dataset.manifest.primitive;
    let mut model = Model::<S>::new(cfg.model_config(primitive), &mut stream_rng(cfg.seed, STREAM_INIT, 0))?;
    if cfg.epochs_a == 0 && cfg.epochs_b == 0 {
        return Ok(TrainOutcome {
            model,
            log: Vec::new(),
            holdout: None,
            online: None,
        });
    }

    // record-level split
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut stream_rng(cfg.seed, STREAM_SPLIT, 0));
    let n_hold = (cfg.holdout_fraction * dataset.len() as f64).round() as usize;
    let (hold_idx, train_idx) = order.split_at(n_hold);
    let mut train_samples: Vec<Sample> = train_idx.iter().map(|&i| Sample::of(&dataset.records[i])).collect();
    train_samples.sort_by_key(|s| (s.cloud, s.point));
    let hold: Vec<Sample> = hold_idx.iter().map(|&i| Sample::of(&dataset.records[i])).collect();
    let train_pos = train_samples.iter().filter(|s| s.label).count();
    if train_pos == 0 || train_pos == train_samples.len() {
        return Err(Error::TrainingInfeasible("training split has a single class".into()));
    }

    let clouds = &dataset.clouds;
    let k_nn = cfg.encoder.k_nn;
    let graphs: Vec<KnnGraph> = with_workers(workers, || {
        clouds.par_iter().map(|c| knn_graph(&c.cloud, k_nn)).collect::<Result<_>>()
    })?;

    let mut log = Vec::new();
    let mut adam = Adam::new(&model, cfg.learning_rate);
    let mut online_records: Vec<InteractionRecord> = Vec::new();
    let collect_cfg = CollectConfig {
        seed: cfg.seed ^ STREAM_ONLINE_TRAIN,
        beta: dataset.manifest.beta,
        n_points: dataset.manifest.n_points,
        workers,
    };

    for epoch in 1..=cfg.epochs_a {
        let mut rng = stream_rng(cfg.seed, STREAM_EPOCH, epoch as u64);
        let (batches, class_weights) = match cfg.class_balance {
            ClassBalance::Downsample => (balanced_batches(&train_samples, cfg.batch_size, &mut rng), (1.0, 1.0)),
            ClassBalance::Reweight => {
                let n = train_samples.len() as f64;
                let n_pos = train_samples.iter().filter(|s| s.label).count() as f64;
                (
                    cloud_batches(&train_samples, cfg.batch_size, &mut rng),
                    (n / (2.0 * n_pos), n / (2.0 * (n - n_pos))),
                )
            }
        };
        let mut stats = StepStats::default();
        for (b, batch) in batches.iter().enumerate() {
            let key = ((epoch as u64) << 32) | b as u64;
            let s = stage_a_step(
                &mut model,
                &mut adam,
                batch,
                &train_samples,
                class_weights,
                clouds,
                &graphs,
                cfg,
                key,
                workers,
            )?;
            stats.absorb(s);
        }
        let (pred, truth): (Vec<bool>, Vec<bool>) = stats.outcomes.iter().copied().unzip();
        let mut row = EpochMetrics {
            epoch,
            stage: Stage::A,
            loss_scoring: stats.balanced_bce(),
            loss_proposal: (stats.n_geo > 0).then(|| stats.geo / stats.n_geo as f64),
            loss_affordance: None,
            train_f1: f1_score(&pred, &truth).ok(),
            samples: stats.outcomes.len(),
            online_records: 0,
            online_positive_rate: None,
        };

        if epoch > cfg.online_after_epoch && online_records.len() < cfg.online_budget && cfg.online_per_epoch > 0 {
            let n_on = cfg.online_per_epoch.min(cfg.online_budget - online_records.len());
            let features = encode_all(&model, dataset, &graphs, workers)?;
            let eps = collect_online_on(
                &model,
                clouds,
                &features,
                n_on,
                primitive,
                &collect_cfg,
                online_records.len() as u64,
            )?;
            let positives = eps.iter().filter(|e| e.3).count();
            row.online_records = eps.len();
            row.online_positive_rate = Some(positives as f64 / eps.len() as f64);
            for (o, p, r, ok) in eps {
                let rec = InteractionRecord {
                    object_id: clouds[o].object_id.clone(),
                    primitive,
                    cloud: o,
                    point_index: p,
                    orientation: r,
                    result: ok,
                };
                train_samples.push(Sample::of(&rec));
                online_records.push(rec);
            }
        }
        on_epoch(&row);
        log.push(row);
    }

    let holdout = if hold.is_empty() || cfg.epochs_a == 0 {
        None
    } else {
        Some(holdout_report(&model, dataset, &graphs, &hold, workers)?)
    };

    if cfg.epochs_b > 0 {
        let features = encode_all(&model, dataset, &graphs, workers)?;
        let targets = affordance_targets(&model, dataset, &features, &train_samples, cfg, workers)?;
        let mut adam_b = Adam::new(&model.affordance, cfg.learning_rate);
        for epoch in 1..=cfg.epochs_b {
            let mut rng = stream_rng(cfg.seed, STREAM_EPOCH, (1 << 40) | epoch as u64);
            let mut order: Vec<usize> = (0..targets.len()).collect();
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let mut grads = zeros_like(&model.affordance);
                let inv_b = S::of(1.0 / chunk.len() as f64);
                for &i in chunk {
                    let (c, p, t) = targets[i];
                    let (out, cache) = model.affordance.forward_cached(features[c].inv.point(p));
                    let a = sigmoid(out[0]);
                    let err = a.as_f64() - t;
                    total += err.abs();
                    let sign = if err > 0.0 {
                        S::one()
                    } else if err < 0.0 {
                        -S::one()
                    } else {
                        S::zero()
                    };
                    let g = sign * a * (S::one() - a) * inv_b;
                    model.affordance.backward(&cache, &[g], &mut grads);
                }
                adam_b.step(model.affordance.params_mut(), &grads.params());
            }
            let row = EpochMetrics {
                epoch,
                stage: Stage::B,
                loss_scoring: None,
                loss_proposal: None,
                loss_affordance: Some(total / targets.len().max(1) as f64),
                train_f1: None,
                samples: targets.len(),
                online_records: 0,
                online_positive_rate: None,
            };
            on_epoch(&row);
            log.push(row);
        }
    }

    let online = (!online_records.is_empty()).then(|| online_dataset(dataset, online_records, &collect_cfg));
    Ok(TrainOutcome {
        model,
        log,
        holdout,
        online,
    })
}

/// All positives plus as many randomly chosen negatives, grouped by cloud
/// and cut into batches of roughly `batch_size` samples. Returns indices.
fn balanced_batches<R: Rng + ?Sized>(samples: &[Sample], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let pos: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label).collect();
    let mut neg: Vec<usize> = (0..samples.len()).filter(|&i| !samples[i].label).collect();
    neg.shuffle(rng);
    neg.truncate(pos.len());
    let mut chosen: Vec<usize> = pos.into_iter().chain(neg).collect();
    chosen.sort_by_key(|&i| (samples[i].cloud, i));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in chosen {
        match groups.last_mut() {
            Some(g) if samples[g[0]].cloud == samples[i].cloud => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups.shuffle(rng);
    let mut batches = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    for g in groups {
        cur.extend(g);
        if cur.len() >= batch_size {
            batches.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

/// Every sample, whole clouds at a time, clouds in random order, cut into
/// batches of at least `batch_size` samples.
fn cloud_batches<R: Rng + ?Sized>(samples: &[Sample], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by_key(|&i| (samples[i].cloud, i));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if samples[g[0]].cloud == samples[i].cloud => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups.shuffle(rng);
    let mut batches = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    for g in groups {
        cur.extend(g);
        if cur.len() >= batch_size {
            batches.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

#[allow(clippy::too_many_arguments)]
fn stage_a_step<S: Real>(
    model: &mut Model<S>,
    adam: &mut Adam<S>,
    batch: &[usize],
    samples: &[Sample],
    (cw_pos, cw_neg): (f64, f64),
    clouds: &[crate::datagen::StoredCloud],
    graphs: &[KnnGraph],
    cfg: &TrainConfig,
    key: u64,
    workers: usize,
) -> Result<StepStats> {
    // per-cloud groups, in batch order
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in batch {
        match groups.last_mut() {
            Some(g) if samples[g[0]].cloud == samples[i].cloud => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    // a balanced batch holds B/2 positives, so 2/B averages over them
    let inv_b = 1.0 / batch.len() as f64;
    let w = Weights {
        pos: S::of(cw_pos * inv_b),
        neg: S::of(cw_neg * inv_b),
        geo: S::of(2.0 * cfg.proposal_weight * cw_pos * inv_b),
    };
    let m: &Model<S> = model;
    let parts: Vec<(Model<S>, StepStats)> = with_workers(workers, || {
        groups
            .par_iter()
            .map(|g| {
                let c = samples[g[0]].cloud;
                cloud_gradients(m, &clouds[c].cloud, &graphs[c], g, samples, w, cfg, key)
            })
            .collect::<Result<_>>()
    })?;
    let mut grads = zeros_like(model);
    let mut stats = StepStats::default();
    for (g, s) in parts {
        grads.accumulate(&g);
        stats.absorb(s);
    }
    clip_gradients(&mut grads, cfg.grad_clip);
    adam.step(model.params_mut(), &grads.params());
    Ok(stats)
}

#[allow(clippy::too_many_arguments)]
fn cloud_gradients<S: Real>(
    model: &Model<S>,
    cloud: &crate::geometry::PointCloud,
    graph: &KnnGraph,
    idx: &[usize],
    samples: &[Sample],
    w: Weights<S>,
    cfg: &TrainConfig,
    key: u64,
) -> Result<(Model<S>, StepStats)> {
    let (feat, cache) = model.encoder.forward_with_graph(cloud, graph.clone())?;
    let n = cloud.len();
    let d = cfg.encoder.d;
    let d_i = cfg.encoder.d_i;
    let mut grads = zeros_like(model);
    let mut g_inv = InvFeature::<S>::zeros(n, d_i);
    let mut g_eqv = VnFeature::<S>::zeros(n, d);
    let mut stats = StepStats::default();
    for &i in idx {
        let s = &samples[i];
        let inv_p = feat.inv.point(s.point);
        let eqv_p = feat.eqv.point(s.point);
        let x = scoring_input(inv_p, eqv_p, &s.rotation);
        let (out, mc) = model.scoring.forward_cached(&x);
        let (loss, g_logit) = bce_with_logit(out[0], s.label);
        if s.label {
            stats.bce_pos += loss.as_f64();
        } else {
            stats.bce_neg += loss.as_f64();
        }
        stats
            .outcomes
            .push((predicted_positive(sigmoid(out[0]).as_f64()), s.label));
        let gx = model.scoring.backward(&mc, &[g_logit * if s.label { w.pos } else { w.neg }], &mut grads.scoring);
        let (gi, ge) = scoring_input_backward(&gx, d_i, &s.rotation);
        for (a, b) in g_inv.point_mut(s.point).iter_mut().zip(&gi) {
            *a += *b;
        }
        for (a, b) in g_eqv.point_mut(s.point).iter_mut().zip(&ge) {
            *a += *b;
        }

        if s.label && w.geo > S::zero() {
            let mut rng = stream_rng(cfg.seed, STREAM_PROPOSAL, key ^ ((i as u64) << 20));
            let truth = rotation_columns::<S>(&s.rotation);
            let mut best: Option<(S, Vec<S>, _, _)> = None;
            for _ in 0..cfg.k_prop {
                let z = model.sample_noise(&mut rng);
                let Ok((frame, pc)) = model.proposal.forward(eqv_p, &z) else {
                    continue;
                };
                let (angle, gf) = geodesic_with_grad(&frame, &truth);
                if best.as_ref().is_none_or(|b| angle < b.0) {
                    best = Some((angle, z, pc, gf));
                }
            }
            if let Some((angle, z, pc, gf)) = best {
                stats.geo += angle.as_f64();
                stats.n_geo += 1;
                let gf = gf.map(|c| c.map(|v| v * w.geo));
                let ge = model.proposal.backward(eqv_p, &z, &pc, &gf, &mut grads.proposal);
                for (a, b) in g_eqv.point_mut(s.point).iter_mut().zip(&ge) {
                    *a += *b;
                }
            }
        }
    }
    model.encoder.backward(&cache, &g_inv, &g_eqv, &mut grads.encoder);
    Ok((grads, stats))
}

fn clip_gradients<S: Real, M: Module<S>>(grads: &mut M, max_norm: f64) {
    let norm: f64 = grads
        .params()
        .iter()
        .flat_map(|(_, t)| t.data.iter())
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        grads.scale(S::of(max_norm / norm));
    }
}

fn encode_all<S: Real>(
    model: &Model<S>,
    dataset: &Dataset,
    graphs: &[KnnGraph],
    workers: usize,
) -> Result<Vec<EncoderOutput<S>>> {
    with_workers(workers, || {
        dataset
            .clouds
            .par_iter()
            .zip(graphs)
            .map(|(c, g)| model.encoder.forward_with_graph(&c.cloud, g.clone()).map(|(o, _)| o))
            .collect()
    })
}

fn holdout_report<S: Real>(
    model: &Model<S>,
    dataset: &Dataset,
    graphs: &[KnnGraph],
    hold: &[Sample],
    workers: usize,
) -> Result<HoldoutReport> {
    let features = encode_all(model, dataset, graphs, workers)?;
    let truth: Vec<bool> = hold.iter().map(|s| s.label).collect();
    let pred: Vec<bool> = hold
        .iter()
        .map(|s| {
            let f = &features[s.cloud];
            let logit = model.score_logit(f.inv.point(s.point), f.eqv.point(s.point), &s.rotation);
            predicted_positive(sigmoid(logit).as_f64())
        })
        .collect();
    let n_positive = truth.iter().filter(|&&t| t).count();
    Ok(HoldoutReport {
        n_records: hold.len(),
        n_positive,
        f1: f1_score(&pred, &truth).unwrap_or(0.0),
        majority_f1: f1_score(&vec![true; truth.len()], &truth).unwrap_or(0.0),
    })
}

/// (cloud, point, target) for every training record point plus random
/// points per cloud.
fn affordance_targets<S: Real>(
    model: &Model<S>,
    dataset: &Dataset,
    features: &[EncoderOutput<S>],
    samples: &[Sample],
    cfg: &TrainConfig,
    workers: usize,
) -> Result<Vec<(usize, usize, f64)>> {
    let mut per_cloud: Vec<Vec<usize>> = vec![Vec::new(); dataset.clouds.len()];
    for s in samples {
        per_cloud[s.cloud].push(s.point);
    }
    let per_cloud: Vec<Vec<(usize, usize, f64)>> = with_workers(workers, || {
        per_cloud
            .into_par_iter()
            .enumerate()
            .map(|(c, mut pts)| {
                let mut rng = stream_rng(cfg.seed, STREAM_TARGET, c as u64);
                let n = dataset.clouds[c].cloud.len();
                pts.extend((0..cfg.aff_points_per_cloud).map(|_| rng.random_range(0..n)));
                pts.sort_unstable();
                pts.dedup();
                let f = &features[c];
                pts.into_iter()
                    .filter_map(|p| {
                        affordance_target(model, f.inv.point(p), f.eqv.point(p), cfg.k_aff, cfg.top_j, &mut rng)
                            .ok()
                            .map(|t| (c, p, t))
                    })
                    .collect()
            })
            .collect()
    });
    Ok(per_cloud.into_iter().flatten().collect())
}

fn online_dataset(source: &Dataset, records: Vec<InteractionRecord>, cfg: &CollectConfig) -> Dataset {
    let mut used = vec![false; source.clouds.len()];
    for r in &records {
        used[r.cloud] = true;
    }
    let mut remap = vec![0; source.clouds.len()];
    let mut clouds = Vec::new();
    for (i, c) in source.clouds.iter().enumerate() {
        if used[i] {
            remap[i] = clouds.len();
            clouds.push(c.clone());
        }
    }
    let records: Vec<InteractionRecord> = records
        .into_iter()
        .map(|r| InteractionRecord {
            cloud: remap[r.cloud],
            ..r
        })
        .collect();
    let n_positive = records.iter().filter(|r| r.result).count();
    Dataset {
        manifest: crate::datagen::DatasetManifest {
            format_version: crate::datagen::DATASET_FORMAT_VERSION,
            primitive: source.manifest.primitive,
            seed: cfg.seed,
            beta: cfg.beta,
            n_points: cfg.n_points,
            n_clouds: clouds.len(),
            objects: clouds.iter().map(|c| c.object_id.clone()).collect(),
            n_records: records.len(),
            n_positive,
            n_negative: records.len() - n_positive,
            source: "online".into(),
        },
        clouds,
        records,
    }
}
