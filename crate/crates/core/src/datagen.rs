//! Interaction data: offline random collection, online collection guided by
//! the current scoring head, and the on-disk dataset format.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{random_rotation, PartLabel, PointCloud, Rotation, Vec3};
use crate::heads::Model;
use crate::primitive::PrimitiveType;
use crate::real::Real;
use crate::sim::{execute_primitive, render_cloud, GripperAction, ObjectSpec, ObjectState};
use crate::vn::EncoderOutput;

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_BETA: f64 = 0.5;
pub const DEFAULT_RENDER_POINTS: usize = 1024;
/// Degenerate proposals are redrawn at most this many times per episode.
pub const PROPOSAL_RETRIES: usize = 10;

const RECORD_COLUMNS: [&str; 12] = [
    "object_id",
    "cloud_file",
    "point_index",
    "r00",
    "r01",
    "r02",
    "r10",
    "r11",
    "r12",
    "r20",
    "r21",
    "r22",
];

// independent random streams per purpose
const STREAM_RENDER: u64 = 1;
const STREAM_OFFLINE: u64 = 2;
const STREAM_ONLINE: u64 = 3;

/// A generator for one (purpose, index) pair, independent of worker scheduling.
pub fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ purpose);
    rng.set_stream(index);
    rng
}

/// Runs `f` on a pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers <= 1 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub seed: u64,
    /// Probability of drawing the contact point from the movable geometry
    /// relevant to the primitive instead of uniformly.
    pub beta: f64,
    pub n_points: usize,
    pub workers: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            seed: 0,
            beta: DEFAULT_BETA,
            n_points: DEFAULT_RENDER_POINTS,
            workers: 1,
        }
    }
}

/// One rendered object state shared by many records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredCloud {
    pub object_id: String,
    pub spec: ObjectSpec,
    pub joint_value: f64,
    pub cloud: PointCloud,
}

impl StoredCloud {
    pub fn state(&self) -> ObjectState {
        ObjectState::new(self.spec, self.joint_value)
    }

    pub fn file_name(&self) -> String {
        format!("clouds/{}.json", self.object_id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionRecord {
    pub object_id: String,
    pub primitive: PrimitiveType,
    /// Index into [`Dataset::clouds`].
    pub cloud: usize,
    pub point_index: usize,
    pub orientation: Rotation,
    pub result: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub primitive: PrimitiveType,
    pub seed: u64,
    pub beta: f64,
    pub n_points: usize,
    pub n_clouds: usize,
    /// Object ids of the stored clouds, in order.
    pub objects: Vec<String>,
    pub n_records: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    /// `offline`, `online`, or `mixed`.
    pub source: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub clouds: Vec<StoredCloud>,
    pub records: Vec<InteractionRecord>,
}

impl Dataset {
    fn assemble(
        primitive: PrimitiveType,
        cfg: &CollectConfig,
        source: &str,
        clouds: Vec<StoredCloud>,
        records: Vec<InteractionRecord>,
    ) -> Self {
        let n_positive = records.iter().filter(|r| r.result).count();
        Dataset {
            manifest: DatasetManifest {
                format_version: DATASET_FORMAT_VERSION,
                primitive,
                seed: cfg.seed,
                beta: cfg.beta,
                n_points: cfg.n_points,
                n_clouds: clouds.len(),
                objects: clouds.iter().map(|c| c.object_id.clone()).collect(),
                n_records: records.len(),
                n_positive,
                n_negative: records.len() - n_positive,
                source: source.into(),
            },
            clouds,
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn positive_rate(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.manifest.n_positive as f64 / self.records.len() as f64
        }
    }

    /// Appends the records of `other`, sharing clouds with equal object ids.
    pub fn merge(&mut self, other: &Dataset) -> Result<()> {
        if other.manifest.primitive != self.manifest.primitive {
            return Err(Error::InvalidInput("cannot merge datasets of different primitives".into()));
        }
        let mut index: BTreeMap<String, usize> =
            self.clouds.iter().enumerate().map(|(i, c)| (c.object_id.clone(), i)).collect();
        let mut remap = Vec::with_capacity(other.clouds.len());
        for c in &other.clouds {
            let i = match index.get(&c.object_id) {
                Some(&i) => {
                    if self.clouds[i] != *c {
                        return Err(Error::InvalidInput(format!("object {} differs between datasets", c.object_id)));
                    }
                    i
                }
                None => {
                    self.clouds.push(c.clone());
                    index.insert(c.object_id.clone(), self.clouds.len() - 1);
                    self.clouds.len() - 1
                }
            };
            remap.push(i);
        }
        self.records.extend(other.records.iter().map(|r| InteractionRecord {
            cloud: remap[r.cloud],
            ..r.clone()
        }));
        self.recount();
        if self.manifest.source != other.manifest.source {
            self.manifest.source = "mixed".into();
        }
        Ok(())
    }

    fn recount(&mut self) {
        let m = &mut self.manifest;
        m.n_clouds = self.clouds.len();
        m.objects = self.clouds.iter().map(|c| c.object_id.clone()).collect();
        m.n_records = self.records.len();
        m.n_positive = self.records.iter().filter(|r| r.result).count();
        m.n_negative = m.n_records - m.n_positive;
    }

    pub fn action(&self, r: &InteractionRecord) -> GripperAction {
        GripperAction {
            primitive: r.primitive,
            contact_point: self.clouds[r.cloud].cloud.point(r.point_index),
            orientation: r.orientation,
        }
    }
}

/// Object id used in datasets for the `i`-th spec.
pub fn object_id(i: usize) -> String {
    format!("obj{i:05}")
}

/// Renders the state every collector starts from, one cloud per spec.
pub fn render_objects(specs: &[ObjectSpec], primitive: PrimitiveType, cfg: &CollectConfig) -> Result<Vec<StoredCloud>> {
    with_workers(cfg.workers, || {
        specs
            .par_iter()
            .enumerate()
            .map(|(i, spec)| {
                let state = spec.initial_state(primitive.is_pull());
                let mut rng = stream_rng(cfg.seed, STREAM_RENDER, i as u64);
                Ok(StoredCloud {
                    object_id: object_id(i),
                    spec: *spec,
                    joint_value: state.joint_value,
                    cloud: render_cloud(&state, cfg.n_points, &mut rng)?,
                })
            })
            .collect()
    })
}

/// Points the sampling bias favors: the handle for pulls, the moving part
/// for pushes.
fn biased_pool(cloud: &PointCloud, primitive: PrimitiveType) -> Vec<usize> {
    let want = if primitive.is_pull() {
        PartLabel::Handle
    } else {
        PartLabel::Moving
    };
    cloud.indices_with_label(want)
}

/// `n` random interactions: object uniform, point uniform (or from the
/// biased pool with probability β), orientation Haar-uniform in the
/// object frame.
pub fn collect_offline(specs: &[ObjectSpec], n: usize, primitive: PrimitiveType, cfg: &CollectConfig) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&cfg.beta) {
        return Err(Error::InvalidInput(format!("beta {} outside [0, 1]", cfg.beta)));
    }
    if n > 0 && specs.is_empty() {
        return Err(Error::InvalidInput("no object specs to collect from".into()));
    }
    let objects = render_objects(specs, primitive, cfg)?;
    let pools: Vec<Vec<usize>> = objects.iter().map(|o| biased_pool(&o.cloud, primitive)).collect();
    let episodes: Vec<(usize, usize, Rotation, bool)> = with_workers(cfg.workers, || {
        (0..n)
            .into_par_iter()
            .map(|e| {
                let mut rng = stream_rng(cfg.seed, STREAM_OFFLINE, e as u64);
                let o = rng.random_range(0..objects.len());
                let obj = &objects[o];
                let pool = &pools[o];
                let biased = rng.random::<f64>() < cfg.beta;
                let p = if biased && !pool.is_empty() {
                    pool[rng.random_range(0..pool.len())]
                } else {
                    rng.random_range(0..obj.cloud.len())
                };
                // drawn in the object frame so co-rotated objects see co-rotated actions
                let r = obj.spec.base_pose.rotation.compose(&random_rotation(&mut rng));
                let action = GripperAction {
                    primitive,
                    contact_point: obj.cloud.point(p),
                    orientation: r,
                };
                let (ok, _) = execute_primitive(&obj.state(), &action);
                (o, p, r, ok)
            })
            .collect()
    });
    Ok(finish(objects, episodes, primitive, cfg, "offline"))
}

/// Keeps only the clouds that records use and re-indexes the records.
fn finish(
    objects: Vec<StoredCloud>,
    episodes: Vec<(usize, usize, Rotation, bool)>,
    primitive: PrimitiveType,
    cfg: &CollectConfig,
    source: &str,
) -> Dataset {
    let mut used = vec![false; objects.len()];
    for e in &episodes {
        used[e.0] = true;
    }
    let mut remap = vec![usize::MAX; objects.len()];
    let mut clouds = Vec::new();
    for (i, obj) in objects.into_iter().enumerate() {
        if used[i] {
            remap[i] = clouds.len();
            clouds.push(obj);
        }
    }
    let records = episodes
        .into_iter()
        .map(|(o, p, r, ok)| InteractionRecord {
            object_id: clouds[remap[o]].object_id.clone(),
            primitive,
            cloud: remap[o],
            point_index: p,
            orientation: r,
            result: ok,
        })
        .collect();
    Dataset::assemble(primitive, cfg, source, clouds, records)
}

/// One online episode on precomputed features: propose an orientation at a
/// random point, score every point under it, act at the best one.
pub fn online_episode<S: Real, R: Rng + ?Sized>(
    model: &Model<S>,
    features: &EncoderOutput<S>,
    obj: &StoredCloud,
    primitive: PrimitiveType,
    rng: &mut R,
) -> Result<(usize, Rotation, bool)> {
    let n = obj.cloud.len();
    let mut orientation = None;
    for _ in 0..PROPOSAL_RETRIES {
        let p0 = rng.random_range(0..n);
        let z = model.sample_noise(rng);
        if let Ok(r) = model.propose_action(features.eqv.point(p0), &z) {
            orientation = Some(r);
            break;
        }
    }
    let r = orientation.ok_or(Error::NoValidProposal(PROPOSAL_RETRIES))?;
    let mut best = 0;
    let mut best_score = S::neg_infinity();
    for p in 0..n {
        let s = model.score_logit(features.inv.point(p), features.eqv.point(p), &r);
        if s > best_score {
            best_score = s;
            best = p;
        }
    }
    let action = GripperAction {
        primitive,
        contact_point: obj.cloud.point(best),
        orientation: r,
    };
    Ok((best, r, execute_primitive(&obj.state(), &action).0))
}

/// Online collection over already rendered objects and their features.
/// Episode `e` uses random stream `stream_offset + e`.
pub fn collect_online_on<S: Real>(
    model: &Model<S>,
    objects: &[StoredCloud],
    features: &[EncoderOutput<S>],
    n: usize,
    primitive: PrimitiveType,
    cfg: &CollectConfig,
    stream_offset: u64,
) -> Result<Vec<(usize, usize, Rotation, bool)>> {
    if n > 0 && objects.is_empty() {
        return Err(Error::InvalidInput("no objects to collect from".into()));
    }
    with_workers(cfg.workers, || {
        (0..n)
            .into_par_iter()
            .map(|e| {
                let mut rng = stream_rng(cfg.seed, STREAM_ONLINE, stream_offset + e as u64);
                let o = rng.random_range(0..objects.len());
                let (p, r, ok) = online_episode(model, &features[o], &objects[o], primitive, &mut rng)?;
                Ok((o, p, r, ok))
            })
            .collect()
    })
}

/// Online adaptive collection with the given model.
pub fn collect_online<S: Real>(
    model: &Model<S>,
    specs: &[ObjectSpec],
    n: usize,
    primitive: PrimitiveType,
    cfg: &CollectConfig,
) -> Result<Dataset> {
    if n > 0 && specs.is_empty() {
        return Err(Error::InvalidInput("no object specs to collect from".into()));
    }
    let objects = render_objects(specs, primitive, cfg)?;
    let features: Vec<EncoderOutput<S>> = with_workers(cfg.workers, || {
        objects.par_iter().map(|o| model.encode(&o.cloud)).collect::<Result<_>>()
    })?;
    let episodes = collect_online_on(model, &objects, &features, n, primitive, cfg, 0)?;
    Ok(finish(objects, episodes, primitive, cfg, "online"))
}

// ---------------------------------------------------------------------------
// persistence

#[derive(Serialize, Deserialize)]
struct CloudFile {
    object_id: String,
    spec: ObjectSpec,
    joint_value: f64,
    points: Vec<[f64; 3]>,
    labels: Option<Vec<PartLabel>>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `manifest.json`, `clouds/<object>.json` and `records.csv` under `dir`.
pub fn save_dataset(d: &Dataset, dir: &Path) -> Result<()> {
    let clouds_dir = dir.join("clouds");
    std::fs::create_dir_all(&clouds_dir).map_err(|e| Error::io(&clouds_dir, e))?;
    let manifest = serde_json::to_vec_pretty(&d.manifest).expect("manifest serializes");
    write_file(&dir.join("manifest.json"), &manifest)?;
    for c in &d.clouds {
        let file = CloudFile {
            object_id: c.object_id.clone(),
            spec: c.spec,
            joint_value: c.joint_value,
            points: c.cloud.points().iter().map(|p| [p.x, p.y, p.z]).collect(),
            labels: c.cloud.labels().map(|l| l.to_vec()),
        };
        write_file(&dir.join(c.file_name()), &serde_json::to_vec(&file).expect("cloud serializes"))?;
    }
    let path = dir.join("records.csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = RECORD_COLUMNS.to_vec();
    header.push("result");
    w.write_record(&header).expect("in-memory write");
    for r in &d.records {
        let mut row = vec![
            r.object_id.clone(),
            d.clouds[r.cloud].file_name(),
            r.point_index.to_string(),
        ];
        row.extend(r.orientation.rows().iter().flatten().map(|x| x.to_string()));
        row.push(u8::from(r.result).to_string());
        w.write_record(&row).expect("in-memory write");
    }
    let bytes = w.into_inner().expect("in-memory flush");
    write_file(&path, &bytes)
}

/// Reads a dataset and checks it: manifest counts, indices, rotations, and a
/// re-simulation of every hundredth record.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_slice(&text).map_err(|e| Error::load(&manifest_path, "manifest", e))?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::load(
            &manifest_path,
            "format_version",
            format!("expected {DATASET_FORMAT_VERSION}, found {}", manifest.format_version),
        ));
    }

    let records_path = dir.join("records.csv");
    let bytes = std::fs::read(&records_path).map_err(|e| Error::io(&records_path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let header = reader.headers().map_err(|e| Error::load(&records_path, "header", e))?.clone();
    let expected: Vec<&str> = RECORD_COLUMNS.iter().copied().chain(["result"]).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::load(&records_path, "header", format!("expected columns {expected:?}")));
    }

    if manifest.objects.len() != manifest.n_clouds {
        return Err(Error::load(&manifest_path, "objects", "length differs from n_clouds"));
    }
    let clouds: Vec<StoredCloud> = manifest
        .objects
        .iter()
        .map(|id| load_cloud(dir, id))
        .collect::<Result<_>>()?;
    let by_file: BTreeMap<String, usize> = clouds.iter().enumerate().map(|(i, c)| (c.file_name(), i)).collect();
    let mut records = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row_no = line + 2;
        let row = row.map_err(|e| Error::load(&records_path, format!("row {row_no}"), e))?;
        if row.len() != 13 {
            return Err(Error::load(&records_path, format!("row {row_no}"), "wrong number of columns"));
        }
        let field = |i: usize| Error::load(&records_path, format!("row {row_no}.{}", expected[i]), "unparsable value");
        let cloud = *by_file
            .get(&row[1])
            .ok_or_else(|| Error::load(&records_path, format!("row {row_no}.cloud_file"), "not listed in manifest"))?;
        if clouds[cloud].object_id != row[0] {
            return Err(Error::load(&records_path, format!("row {row_no}.object_id"), "does not match cloud file"));
        }
        let point_index: usize = row[2].parse().map_err(|_| field(2))?;
        if point_index >= clouds[cloud].cloud.len() {
            return Err(Error::load(&records_path, format!("row {row_no}.point_index"), "out of range"));
        }
        let mut m = [[0.0; 3]; 3];
        for k in 0..9 {
            m[k / 3][k % 3] = row[3 + k].parse().map_err(|_| field(3 + k))?;
        }
        let orientation =
            Rotation::from_rows(m).map_err(|e| Error::load(&records_path, format!("row {row_no}.rotation"), e))?;
        let result = match &row[12] {
            "0" => false,
            "1" => true,
            _ => return Err(Error::load(&records_path, format!("row {row_no}.result"), "not 0 or 1")),
        };
        records.push(InteractionRecord {
            object_id: row[0].to_string(),
            primitive: manifest.primitive,
            cloud,
            point_index,
            orientation,
            result,
        });
    }

    let d = Dataset {
        manifest,
        clouds,
        records,
    };
    let n_pos = d.records.iter().filter(|r| r.result).count();
    let m = &d.manifest;
    let counts = [
        ("n_records", m.n_records, d.records.len()),
        ("n_positive", m.n_positive, n_pos),
        ("n_negative", m.n_negative, d.records.len() - n_pos),
        ("n_clouds", m.n_clouds, d.clouds.len()),
    ];
    for (name, declared, actual) in counts {
        if declared != actual {
            return Err(Error::load(
                &manifest_path,
                name,
                format!("manifest says {declared}, records give {actual}"),
            ));
        }
    }
    for (i, r) in d.records.iter().enumerate().step_by(100) {
        let (ok, _) = execute_primitive(&d.clouds[r.cloud].state(), &d.action(r));
        if ok != r.result {
            return Err(Error::load(&records_path, format!("row {}.result", i + 2), "not reproduced by simulation"));
        }
    }
    Ok(d)
}

fn load_cloud(dir: &Path, object_id: &str) -> Result<StoredCloud> {
    if object_id.is_empty() || !object_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(Error::load(dir.join("manifest.json"), "objects", format!("bad object id {object_id:?}")));
    }
    let path = dir.join("clouds").join(format!("{object_id}.json"));
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let f: CloudFile = serde_json::from_slice(&bytes).map_err(|e| Error::load(&path, "cloud", e))?;
    f.spec.validate().map_err(|e| Error::load(&path, "spec", e))?;
    if f.object_id != object_id {
        return Err(Error::load(&path, "object_id", format!("expected {object_id}, found {}", f.object_id)));
    }
    let cloud = PointCloud::new(f.points.into_iter().map(Vec3::from).collect(), f.labels)
        .map_err(|e| Error::load(&path, "points", e))?;
    Ok(StoredCloud {
        object_id: f.object_id,
        spec: f.spec,
        joint_value: f.joint_value,
        cloud,
    })
}
