//! Run manifest: everything needed to audit a run and replay it.

use std::path::{Path, PathBuf};
use std::time::Instant;

use bartvar::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok(FileDigest {
            path: path.to_path_buf(),
            sha256: hex(&Sha256::digest(&bytes)),
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Command and its command-specific options, replayable as-is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    Transform,
    Fit { resume: bool },
    Forecast { chain: Option<PathBuf> },
    Evaluate,
    Pip { chain: Option<PathBuf> },
    PriorDraws { alpha: Vec<f64>, draws: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub invocation: Invocation,
    pub threads: usize,
    pub seed: Option<u64>,
    /// Resolved configuration with every default spelled out.
    pub config: Option<RunConfig>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timings: Vec<Timing>,
    pub status: RunStatus,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(invocation: Invocation, config: Option<RunConfig>, threads: usize) -> Self {
        let seed = match (&invocation, &config) {
            (Invocation::PriorDraws { seed, .. }, _) => Some(*seed),
            (_, Some(c)) => Some(c.seed),
            _ => None,
        };
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_owned(),
            invocation,
            threads,
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
            status: RunStatus::Complete,
            error: None,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    /// Run `f`, recording its wall-clock time under `stage`.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        self.timings.push(Timing {
            stage: stage.to_owned(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("malformed manifest: {e}")))
    }

    /// Inputs must be byte-identical to the recorded ones before a replay.
    pub fn verify_inputs(&self) -> Result<()> {
        for recorded in &self.inputs {
            let now = FileDigest::of(&recorded.path)?;
            if now.sha256 != recorded.sha256 {
                return Err(Error::Config(format!(
                    "input {} changed since the recorded run",
                    recorded.path.display()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_matches_known_value() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("abc.txt");
        std::fs::write(&path, b"abc").unwrap();
        assert_eq!(
            FileDigest::of(&path).unwrap().sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn changed_input_fails_verification() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("in.csv");
        std::fs::write(&path, b"a,b\n").unwrap();
        let mut m = RunManifest::new(Invocation::Transform, None, 1);
        m.add_input(&path).unwrap();
        assert!(m.verify_inputs().is_ok());
        std::fs::write(&path, b"a,c\n").unwrap();
        assert!(m.verify_inputs().is_err());
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new(
            Invocation::PriorDraws {
                alpha: vec![1.0, 0.25],
                draws: 10,
                seed: 3,
            },
            None,
            1,
        );
        let path = m.write(dir.path()).unwrap();
        let back = RunManifest::read(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.seed, Some(3));
    }
}
