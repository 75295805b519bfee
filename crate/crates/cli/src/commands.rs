use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use vnafford::checkpoint::AnyModel;
use vnafford::datagen::{collect_offline, collect_online, load_dataset, save_dataset, stream_rng, CollectConfig};
use vnafford::evalkit::{evaluate, export_heatmap, posed_specs, EvalConfig};
use vnafford::sim::{generate_specs, render_cloud, specs_from_toml, specs_to_toml};
use vnafford::trainer::{train_any_logged, EpochMetrics, HoldoutReport, TrainConfig, METRICS_HEADER};
use vnafford::{with_model, Error, PrimitiveType};

use crate::run::{create_dir, read_text, require_exists, write_json, write_text, CliError, CliResult, Context, RunManifest};
use crate::{CollectArgs, EvalArgs, GenSpecsArgs, PredictArgs, TrainArgs};

const STREAM_PREDICT_RENDER: u64 = 30;
const STREAM_PREDICT_POLICY: u64 = 31;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "train_config.toml";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ONLINE_DIR: &str = "online";
pub const REPORT_FILE: &str = "report.json";
pub const ACTION_FILE: &str = "action.json";
pub const HEATMAP_FILE: &str = "heatmap.ply";
pub const SPECS_FILE: &str = "specs.toml";

fn load_checkpoint(path: &Path) -> CliResult<AnyModel> {
    require_exists(path, "checkpoint")?;
    AnyModel::load(path).map_err(CliError::Load)
}

pub fn collect(ctx: &Context, a: CollectArgs) -> CliResult {
    let seed = ctx.seed();
    let primitive = PrimitiveType::from(a.primitive);
    if a.n > 0 && a.objects == 0 {
        return Err(CliError::Usage("--objects must be positive when records are requested".into()));
    }
    let model = match &a.checkpoint {
        Some(p) if a.online => Some(load_checkpoint(p)?),
        Some(_) => return Err(CliError::Usage("--checkpoint is only used with --online".into())),
        None => None,
    };
    let run = RunManifest::start(ctx, "collect", &a.out, None, seed)?;
    let specs = posed_specs(&generate_specs(a.family.into(), a.objects, seed), a.pose.into(), seed);
    let cfg = CollectConfig {
        seed,
        beta: a.beta,
        n_points: a.points,
        workers: ctx.workers,
    };
    let data = match &model {
        Some(m) => with_model!(m, m => collect_online(m, &specs, a.n, primitive, &cfg))?,
        None => collect_offline(&specs, a.n, primitive, &cfg)?,
    };
    save_dataset(&data, &a.out)?;
    eprintln!(
        "collected {} records ({} positive) from {} objects",
        data.len(),
        data.manifest.n_positive,
        data.manifest.n_clouds
    );
    run.finish()
}

#[derive(Serialize)]
struct OnlineSummary {
    n_records: usize,
    n_positive: usize,
    positive_rate: f64,
}

#[derive(Serialize)]
struct TrainSummary {
    n_records: usize,
    n_positive: usize,
    holdout: Option<HoldoutReport>,
    online: Option<OnlineSummary>,
    final_stage_a: Option<EpochMetrics>,
    final_stage_b: Option<EpochMetrics>,
}

pub fn train(ctx: &Context, a: TrainArgs) -> CliResult {
    require_exists(&a.data, "dataset")?;
    let mut cfg = match &a.config {
        Some(p) => {
            require_exists(p, "config")?;
            TrainConfig::from_toml(&read_text(p)?).map_err(|e| CliError::Usage(e.to_string()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    if let Some(arch) = a.architecture {
        cfg.architecture = arch.into();
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let data = load_dataset(&a.data).map_err(CliError::Load)?;
    let run = RunManifest::start(ctx, "train", &a.out, a.config.as_deref(), cfg.seed)?;
    write_text(&a.out.join(CONFIG_FILE), &cfg.to_toml())?;

    let metrics_path = a.out.join(METRICS_FILE);
    write_text(&metrics_path, &format!("{METRICS_HEADER}\n"))?;
    let mut metrics = OpenOptions::new()
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::Io {
            path: metrics_path.clone(),
            source: e,
        })?;
    let mut write_err = None;
    let outcome = train_any_logged(&data, &cfg, ctx.workers, &mut |row| {
        eprintln!("{}", row.csv_row());
        if let Err(e) = writeln!(metrics, "{}", row.csv_row()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(Error::Io {
            path: metrics_path,
            source: e,
        }
        .into());
    }

    outcome.model.save(&a.out.join(CHECKPOINT_FILE))?;
    if let Some(online) = &outcome.online {
        save_dataset(online, &a.out.join(ONLINE_DIR))?;
    }
    let last = |stage| outcome.log.iter().rev().find(|m| m.stage == stage).cloned();
    let summary = TrainSummary {
        n_records: data.len(),
        n_positive: data.manifest.n_positive,
        holdout: outcome.holdout,
        online: outcome.online.as_ref().map(|d| OnlineSummary {
            n_records: d.len(),
            n_positive: d.manifest.n_positive,
            positive_rate: d.positive_rate(),
        }),
        final_stage_a: last(vnafford::trainer::Stage::A),
        final_stage_b: last(vnafford::trainer::Stage::B),
    };
    write_json(&a.out.join(SUMMARY_FILE), &summary)?;
    run.finish()
}

pub fn eval(ctx: &Context, a: EvalArgs) -> CliResult {
    let model = load_checkpoint(&a.checkpoint)?;
    if a.n_episodes == 0 || a.objects == 0 {
        return Err(CliError::Usage("--n-episodes and --objects must be positive".into()));
    }
    let seed = ctx.seed();
    let run = RunManifest::start(ctx, "eval", &a.out, None, seed)?;
    let cfg = EvalConfig {
        family: a.family.into(),
        setting: a.setting,
        n_episodes: a.n_episodes,
        n_objects: a.objects,
        n_f1_records: a.f1_records,
        k_proposals: a.k,
        beta: a.beta,
        n_points: a.points,
        n_rot: a.n_rot,
        seed,
        workers: ctx.workers,
    };
    let report = with_model!(&model, m => evaluate(m, &cfg))?;
    eprintln!(
        "{} {}: f1 {:.4} success rate {:.4}",
        report.family, report.setting, report.f1, report.success_rate
    );
    write_json(&a.out.join(REPORT_FILE), &report)?;
    run.finish()
}

#[derive(Serialize)]
struct ActionFile {
    primitive: PrimitiveType,
    object_index: usize,
    point_index: usize,
    point: [f64; 3],
    /// Row-major rotation matrix.
    rotation: [[f64; 3]; 3],
    score: f64,
    affordance: f64,
    n_proposals: usize,
}

pub fn predict(ctx: &Context, a: PredictArgs) -> CliResult {
    let model = load_checkpoint(&a.checkpoint)?;
    require_exists(&a.object_spec, "object spec")?;
    let specs = specs_from_toml(&read_text(&a.object_spec)?).map_err(CliError::Load)?;
    let Some(spec) = specs.get(a.index).copied() else {
        return Err(CliError::Usage(format!(
            "--index {} out of range for {} objects",
            a.index,
            specs.len()
        )));
    };
    let primitive = a.primitive.map(PrimitiveType::from).unwrap_or(model.config().primitive);
    let seed = ctx.seed();
    let run = RunManifest::start(ctx, "predict", &a.out, None, seed)?;
    let state = spec.initial_state(primitive.is_pull());
    let cloud = render_cloud(&state, a.points, &mut stream_rng(seed, STREAM_PREDICT_RENDER, 0))?;
    let mut rng = stream_rng(seed, STREAM_PREDICT_POLICY, 0);
    let best = with_model!(&model, m => m.infer_best_action(&cloud, primitive, a.k, &mut rng))?;
    let p = cloud.point(best.point_index);
    let action = ActionFile {
        primitive,
        object_index: a.index,
        point_index: best.point_index,
        point: [p.x, p.y, p.z],
        rotation: best.rotation.rows(),
        score: best.score,
        affordance: best.affordance.scores[best.point_index],
        n_proposals: best.proposals.rotations.len(),
    };
    write_json(&a.out.join(ACTION_FILE), &action)?;
    export_heatmap(&cloud, &best.affordance, &a.out.join(HEATMAP_FILE))?;
    eprintln!("point {} score {:.4}", action.point_index, action.score);
    run.finish()
}

pub fn gen_specs(ctx: &Context, a: GenSpecsArgs) -> CliResult {
    let seed = ctx.seed();
    let run = RunManifest::start(ctx, "gen-specs", &a.out, None, seed)?;
    create_dir(&a.out)?;
    let specs = posed_specs(&generate_specs(a.family.into(), a.n, seed), a.pose.into(), seed);
    write_text(&a.out.join(SPECS_FILE), &specs_to_toml(&specs))?;
    run.finish()
}
