//! Self-describing parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"VNAFCKPT" | u32 format version | u64 manifest length | manifest (JSON)
//! | array data in manifest order, each value little-endian in the manifest's precision
//! ```
//!
//! The manifest records the model configuration, the precision, and the
//! name and shape of every array. Loading checks names, shapes and the total
//! length, so a truncated or mismatched file is rejected rather than
//! partially read.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{Model, ModelConfig};
use crate::real::{Precision, Real};
use crate::tensor::Module;

pub const MAGIC: &[u8; 8] = b"VNAFCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub precision: Precision,
    pub k_nn: usize,
    pub d: usize,
    pub d_i: usize,
    pub depth: usize,
    pub model: ModelConfig,
    pub arrays: Vec<ArrayEntry>,
}

/// A model in either supported precision.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    F32(Model<f32>),
    F64(Model<f64>),
}

/// Runs `$body` with `$m` bound to the concrete model.
#[macro_export]
macro_rules! with_model {
    ($any:expr, $m:ident => $body:expr) => {
        match $any {
            $crate::checkpoint::AnyModel::F32($m) => $body,
            $crate::checkpoint::AnyModel::F64($m) => $body,
        }
    };
}

impl AnyModel {
    pub fn new(config: ModelConfig, precision: Precision, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match precision {
            Precision::F32 => AnyModel::F32(Model::new(config, &mut rng)?),
            Precision::F64 => AnyModel::F64(Model::new(config, &mut rng)?),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        with_model!(self, m => &m.config)
    }

    pub fn precision(&self) -> Precision {
        match self {
            AnyModel::F32(_) => Precision::F32,
            AnyModel::F64(_) => Precision::F64,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        with_model!(self, m => to_bytes(m))
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let (manifest, data) = parse_header(bytes, origin)?;
        match manifest.precision {
            Precision::F32 => fill::<f32>(&manifest, data, origin).map(AnyModel::F32),
            Precision::F64 => fill::<f64>(&manifest, data, origin).map(AnyModel::F64),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

pub fn manifest_of<S: Real>(model: &Model<S>) -> CheckpointManifest {
    let e = model.config.encoder;
    CheckpointManifest {
        format_version: FORMAT_VERSION,
        precision: S::PRECISION,
        k_nn: e.k_nn,
        d: e.d,
        d_i: e.d_i,
        depth: e.depth,
        model: model.config,
        arrays: model
            .params()
            .into_iter()
            .map(|(name, t)| ArrayEntry {
                name,
                shape: t.shape.clone(),
            })
            .collect(),
    }
}

pub fn to_bytes<S: Real>(model: &Model<S>) -> Vec<u8> {
    let manifest = serde_json::to_vec(&manifest_of(model)).expect("manifest serializes");
    let mut out = Vec::with_capacity(20 + manifest.len() + model.num_params() * S::PRECISION.byte_width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for (_, t) in model.params() {
        for &x in &t.data {
            x.write_le(&mut out);
        }
    }
    out
}

fn parse_header<'a>(bytes: &'a [u8], origin: &Path) -> Result<(CheckpointManifest, &'a [u8])> {
    let err = |field: &str, reason: String| Error::load(origin, field, reason);
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(err("magic", "not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(err("format_version", format!("expected {FORMAT_VERSION}, found {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let end = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(20))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| err("manifest", format!("declared length {len} exceeds file")))?;
    let manifest: CheckpointManifest =
        serde_json::from_slice(&bytes[20..end]).map_err(|e| err("manifest", e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(err("manifest.format_version", format!("{}", manifest.format_version)));
    }
    let e = manifest.model.encoder;
    if (manifest.k_nn, manifest.d, manifest.d_i, manifest.depth) != (e.k_nn, e.d, e.d_i, e.depth) {
        return Err(err("manifest", "encoder dimensions disagree with the model configuration".into()));
    }
    Ok((manifest, &bytes[end..]))
}

fn fill<S: Real>(manifest: &CheckpointManifest, data: &[u8], origin: &Path) -> Result<Model<S>> {
    let err = |field: &str, reason: String| Error::load(origin, field, reason);
    let mut model = Model::<S>::new(manifest.model, &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| err("model", e.to_string()))?;
    let expected: Vec<(String, Vec<usize>)> = model.params().into_iter().map(|(n, t)| (n, t.shape.clone())).collect();
    if expected.len() != manifest.arrays.len() {
        return Err(err(
            "arrays",
            format!("expected {} arrays, found {}", expected.len(), manifest.arrays.len()),
        ));
    }
    for ((name, shape), entry) in expected.iter().zip(&manifest.arrays) {
        if *name != entry.name || *shape != entry.shape {
            return Err(err(
                &format!("arrays.{}", entry.name),
                format!("expected {name} with shape {shape:?}, found shape {:?}", entry.shape),
            ));
        }
    }
    let width = S::PRECISION.byte_width();
    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum::<usize>() * width;
    if data.len() != total {
        return Err(err("data", format!("expected {total} bytes of array data, found {}", data.len())));
    }
    let mut chunks = data.chunks_exact(width);
    for t in model.params_mut() {
        for x in t.data.iter_mut() {
            *x = S::read_le(chunks.next().expect("length checked"));
        }
    }
    if !model.all_finite() {
        return Err(err("data", "non-finite parameter".into()));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::EncoderKind;
    use crate::primitive::PrimitiveType;
    use std::path::PathBuf;

    fn origin() -> PathBuf {
        PathBuf::from("mem")
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for kind in [EncoderKind::VectorNeuron, EncoderKind::Baseline] {
            for prec in [Precision::F32, Precision::F64] {
                let m = AnyModel::new(ModelConfig::new(kind, PrimitiveType::Pull), prec, 3).unwrap();
                let bytes = m.to_bytes();
                let back = AnyModel::from_bytes(&bytes, &origin()).unwrap();
                assert_eq!(back, m);
                assert_eq!(back.to_bytes(), bytes);
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = AnyModel::new(ModelConfig::new(EncoderKind::VectorNeuron, PrimitiveType::Push), Precision::F32, 1).unwrap();
        m.save(&path).unwrap();
        assert_eq!(AnyModel::load(&path).unwrap(), m);
    }

    #[test]
    fn truncated_and_corrupt_files_are_rejected() {
        let m = AnyModel::new(ModelConfig::new(EncoderKind::VectorNeuron, PrimitiveType::Pull), Precision::F32, 3).unwrap();
        let bytes = m.to_bytes();
        for cut in [0, 10, 30, bytes.len() - 1] {
            let e = AnyModel::from_bytes(&bytes[..cut], &origin()).unwrap_err();
            assert!(matches!(e, Error::Load { .. }), "{e}");
        }
        let mut bad = bytes.clone();
        bad[8] = 9;
        let e = AnyModel::from_bytes(&bad, &origin()).unwrap_err();
        assert!(e.to_string().contains("format_version"));
        let mut extra = bytes;
        extra.push(0);
        assert!(AnyModel::from_bytes(&extra, &origin()).is_err());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let e = AnyModel::load(Path::new("/nonexistent/model.ckpt")).unwrap_err();
        assert!(matches!(e, Error::Io { .. }));
    }
}
