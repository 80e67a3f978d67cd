//! Output directories, named seed streams and the per-run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::settings::Settings;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.txt";

/// Everything needed to replay a run. Replaying `config` (which includes
/// the seed) with the same command reproduces every artifact.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config: std::collections::BTreeMap<String, String>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub artifacts: Vec<String>,
    /// Command-specific facts worth recording, such as the EMD solver used.
    pub notes: std::collections::BTreeMap<String, String>,
}

/// An output directory plus the list of files written into it.
pub struct Run {
    command: String,
    dir: PathBuf,
    settings: Settings,
    seed: u64,
    started: u128,
    artifacts: Vec<String>,
    notes: std::collections::BTreeMap<String, String>,
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

impl Run {
    /// Creates `dir`. An existing non-empty directory is refused unless
    /// `force` is set, in which case it is emptied first.
    pub fn start(command: &str, dir: &Path, force: bool, settings: Settings) -> Result<Self, CliError> {
        let seed = settings.get("seed")?;
        if dir.exists() {
            let non_empty = fs::read_dir(dir).map_err(io_err(dir))?.next().is_some();
            if non_empty && !force {
                return Err(CliError::Usage(format!(
                    "output directory {} exists; pass --force to overwrite",
                    dir.display()
                )));
            }
            if non_empty {
                fs::remove_dir_all(dir).map_err(io_err(dir))?;
            }
        }
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Run {
            command: command.to_string(),
            dir: dir.to_path_buf(),
            settings,
            seed,
            started: now_ms(),
            artifacts: Vec::new(),
            notes: Default::default(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Path of a new artifact, recorded in the manifest.
    pub fn artifact(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.artifact(name);
        fs::write(&path, contents).map_err(io_err(&path))
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.insert(key.to_string(), value.to_string());
    }

    /// A generator for the named stream of this run's seed.
    pub fn rng(&self, stream: &str) -> ChaCha8Rng {
        stream_rng(self.seed, stream)
    }

    pub fn stream_seed(&self, stream: &str) -> u64 {
        self.rng(stream).next_u64()
    }

    /// Writes the resolved config and the manifest.
    pub fn finish(mut self) -> Result<(), CliError> {
        let config_text = self.settings.to_config_text();
        self.write(CONFIG_FILE, config_text)?;
        self.artifacts.push(MANIFEST_FILE.to_string());
        let manifest = RunManifest {
            command: self.command.clone(),
            seed: self.seed,
            config: self.settings.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
            artifacts: self.artifacts.clone(),
            notes: self.notes.clone(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, json + "\n").map_err(io_err(&path))
    }
}

/// Streams are keyed by name so adding a new consumer never shifts the
/// draws of an existing one.
pub fn stream_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(stream.as_bytes()));
    rng
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

pub fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_distinct_and_stable() {
        let a = stream_rng(7, "train").next_u64();
        assert_eq!(a, stream_rng(7, "train").next_u64());
        assert_ne!(a, stream_rng(7, "sample").next_u64());
        assert_ne!(a, stream_rng(8, "train").next_u64());
    }

    #[test]
    fn refuses_non_empty_output_without_force() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x"), "1").unwrap();
        let s = || Settings::resolve(vec![("seed", "0".to_string())], None, vec![]).unwrap();
        assert!(matches!(Run::start("t", dir.path(), false, s()), Err(CliError::Usage(_))));
        Run::start("t", dir.path(), true, s()).unwrap();
        assert!(!dir.path().join("x").exists());
    }
}
