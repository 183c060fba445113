use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cli::commands::Invocation;
use crate::error::{Error, Result};

/// Version string recorded in manifests, e.g. `v0.1.0` or `v0.1.0-g1a2b3c4`
/// when `RIGIDREG_BUILD_REV` was set at compile time.
pub fn version_string() -> String {
    match option_env!("RIGIDREG_BUILD_REV") {
        Some(rev) if !rev.is_empty() => format!("v{}-g{rev}", env!("CARGO_PKG_VERSION")),
        _ => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

/// A file written by a command, named relative to the output directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    pub name: String,
    pub sha256: String,
    /// Primary artifacts must reproduce bit-identically on replay.
    pub primary: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    /// Fully resolved command and configuration.
    pub invocation: Invocation,
    pub inputs: Vec<InputDigest>,
    pub out_dir: PathBuf,
    pub artifacts: Vec<Artifact>,
    pub timings: Vec<StageTiming>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Config(format!("{}: {}: {}", path.display(), e.path(), e.inner())))
    }

    pub fn primary(&self) -> impl Iterator<Item = &Artifact> {
        self.artifacts.iter().filter(|a| a.primary)
    }
}

/// Collects outputs and stage timings while a command runs.
#[derive(Debug)]
pub(crate) struct Recorder {
    out_dir: PathBuf,
    artifacts: Vec<(String, bool)>,
    timings: Vec<StageTiming>,
    inputs: Vec<InputDigest>,
}

impl Recorder {
    pub fn new(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            artifacts: Vec::new(),
            timings: Vec::new(),
            inputs: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputDigest::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, name: &str, primary: bool) {
        self.artifacts.push((name.to_string(), primary));
    }

    pub fn time<R>(&mut self, stage: &str, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let r = f();
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        r
    }

    /// Digests every output and writes the manifest next to them.
    pub fn finish(
        self,
        manifest_name: &str,
        seed: u64,
        invocation: Invocation,
    ) -> Result<RunManifest> {
        let artifacts = self
            .artifacts
            .iter()
            .map(|(name, primary)| {
                Ok(Artifact {
                    name: name.clone(),
                    sha256: sha256_file(&self.out_dir.join(name))?,
                    primary: *primary,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            version: version_string(),
            seed,
            invocation,
            inputs: self.inputs,
            out_dir: self.out_dir.clone(),
            artifacts,
            timings: self.timings,
        };
        manifest.save(&self.out_dir.join(manifest_name))?;
        Ok(manifest)
    }
}
