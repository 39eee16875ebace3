use std::fs::{self, File};
use std::io::{BufWriter, Read};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

pub const RUN_MANIFEST: &str = "run.json";

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut file = File::open(path).map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Hash of a file, or of every file under a directory in name order.
pub fn sha256_path(path: &Path) -> CliResult<String> {
    if !path.is_dir() {
        return sha256_file(path);
    }
    let mut names: Vec<PathBuf> = fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    names.sort();
    let mut hasher = Sha256::new();
    for name in names.iter().filter(|p| p.is_file()) {
        if name.file_name().is_some_and(|n| n == RUN_MANIFEST) {
            continue;
        }
        hasher.update(name.file_name().unwrap_or_default().as_encoded_bytes());
        hasher.update([0]);
        hasher.update(sha256_file(name)?.as_bytes());
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Serialize)]
struct InputRecord {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct OutputRecord {
    file: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    stage: &'a str,
    tool_version: &'a str,
    seed: u64,
    created_unix: u64,
    inputs: Vec<InputRecord>,
    outputs: Vec<OutputRecord>,
    config: &'a PipelineConfig,
    #[serde(skip_serializing_if = "serde_json::Map::is_empty")]
    notes: serde_json::Map<String, serde_json::Value>,
}

/// Files of one stage, written to a scratch directory next to the target
/// and moved into place only once everything succeeded.
pub struct Staging {
    stage: &'static str,
    target: PathBuf,
    force: bool,
    scratch: TempDir,
    inputs: Vec<PathBuf>,
    notes: serde_json::Map<String, serde_json::Value>,
}

impl Staging {
    pub fn new(stage: &'static str, target: &Path, force: bool, inputs: &[&Path]) -> CliResult<Self> {
        for input in inputs {
            if !input.exists() {
                return Err(CliError::Missing(format!("input {} does not exist", input.display())));
            }
        }
        if target.exists() && !force {
            return Err(CliError::Usage(format!(
                "output {} already exists; pass --force to replace it",
                target.display()
            )));
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent)?;
        let scratch = tempfile::Builder::new().prefix(".euph-stage-").tempdir_in(&parent)?;
        Ok(Staging {
            stage,
            target: target.to_path_buf(),
            force,
            scratch,
            inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
            notes: serde_json::Map::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        self.scratch.path()
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.scratch.path().join(name)
    }

    pub fn create(&self, name: &str) -> CliResult<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        fs::write(self.path(name), bytes)?;
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.notes.insert(key.to_string(), serde_json::to_value(value).expect("note serializes"));
    }

    /// Writes the run manifest and moves the scratch directory to the target.
    pub fn commit(self, config: &PipelineConfig) -> CliResult<PathBuf> {
        let inputs = self
            .inputs
            .iter()
            .map(|p| {
                Ok(InputRecord {
                    path: p.display().to_string(),
                    sha256: sha256_path(p)?,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let mut names: Vec<String> = fs::read_dir(self.scratch.path())?
            .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect::<Result<_, _>>()?;
        names.sort();
        let outputs = names
            .into_iter()
            .map(|file| {
                let sha256 = sha256_file(&self.scratch.path().join(&file))?;
                Ok(OutputRecord { file, sha256 })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let manifest = RunManifest {
            stage: self.stage,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: config.seed,
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            inputs,
            outputs,
            config,
            notes: self.notes.clone(),
        };
        self.write_json(RUN_MANIFEST, &manifest)?;

        if self.target.exists() {
            if !self.force {
                return Err(CliError::Usage(format!(
                    "output {} appeared during the run; pass --force to replace it",
                    self.target.display()
                )));
            }
            if self.target.is_dir() {
                fs::remove_dir_all(&self.target)?;
            } else {
                fs::remove_file(&self.target)?;
            }
        }
        let scratch = self.scratch.keep();
        fs::rename(&scratch, &self.target)?;
        Ok(self.target)
    }
}
