use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use vnafford::Error;

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_LOAD: u8 = 4;
pub const EXIT_INFERENCE: u8 = 5;

pub const MANIFEST_FILE: &str = "run.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// A failure reading an input artifact.
    #[error("{0}")]
    Load(Error),
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Load(_) => EXIT_LOAD,
            CliError::Core(e) => match e {
                Error::TrainingInfeasible(_) => EXIT_INFEASIBLE,
                Error::Load { .. } => EXIT_LOAD,
                Error::NoValidProposal(_) => EXIT_INFERENCE,
                Error::InvalidInput(_) => EXIT_USAGE,
                _ => EXIT_OTHER,
            },
            CliError::Other(_) => EXIT_OTHER,
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub struct Context {
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub workers: usize,
}

impl Context {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

/// Provenance of one command invocation, kept next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub workers: usize,
    pub version: String,
    pub out_dir: PathBuf,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    /// Creates `out_dir` and writes the manifest into it before any work.
    pub fn start(ctx: &Context, command: &str, out_dir: &Path, config_path: Option<&Path>, seed: u64) -> CliResult<Self> {
        create_dir(out_dir)?;
        let m = RunManifest {
            command: command.into(),
            args: ctx.args.clone(),
            config_path: config_path.map(Path::to_path_buf),
            seed,
            workers: ctx.workers,
            version: env!("CARGO_PKG_VERSION").into(),
            out_dir: out_dir.to_path_buf(),
            started_unix: now(),
            finished_unix: None,
        };
        m.write()?;
        Ok(m)
    }

    pub fn finish(mut self) -> CliResult {
        self.finished_unix = Some(now());
        self.write()
    }

    fn write(&self) -> CliResult {
        write_json(&self.out_dir.join(MANIFEST_FILE), self)
    }
}

pub fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| {
        CliError::Load(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

pub fn require_exists(path: &Path, what: &str) -> CliResult {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}
