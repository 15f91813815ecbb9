//! Run directories, manifests and metric files.
//!
//! Every run writes into `<out-dir>/<command>-<cfghash8>-s<seed>/`, where
//! the hash covers the resolved configuration (minus `out-dir`). Identical
//! config+seed reruns land in the same directory and reproduce the metric
//! files byte for byte; differing configs can never collide silently.
//!
//! Files:
//! - `manifest.json` — resolved config, seed, input digests, output paths,
//!   tool version; written before training, finalized with timing after.
//!   The only file allowed to carry timestamps.
//! - `metrics.jsonl` — one epoch record per line.
//! - `report.json` — the final training report minus its wall-time (which
//!   lives in the manifest so the report stays byte-deterministic).
//! - `curves.csv` — class-probability curves (synth1d only).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ovepg_core::trainer::TrainReport;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Resolver;
use crate::CliError;

pub fn config_hash(resolver: &Resolver) -> String {
    let digest = Sha256::digest(resolver.canonical_for_hash().as_bytes());
    hex_prefix(&digest, 8)
}

fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut s = String::with_capacity(chars);
    for b in bytes {
        use std::fmt::Write as _;
        let _ = write!(s, "{b:02x}");
        if s.len() >= chars {
            break;
        }
    }
    s.truncate(chars);
    s
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::data(format!("digest {}: {e}", path.display())))?;
    Ok(format!("sha256:{}", hex_prefix(&Sha256::digest(&bytes), 64)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub created_at_unix: u64,
    pub seed: u64,
    pub resolved_config: BTreeMap<String, String>,
    pub input_digests: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completed: Option<Completion>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Completion {
    pub finished_at_unix: u64,
    pub wall_time_secs: f64,
}

/// One run's directory plus its manifest lifecycle.
pub struct RunDir {
    pub dir: PathBuf,
    manifest: Manifest,
}

impl RunDir {
    /// Create (or re-enter) the run directory and write the pre-run
    /// manifest. Refuses to reuse a directory whose manifest was produced
    /// by a different resolved config.
    pub fn create(
        out_dir: &Path,
        command: &str,
        resolver: &Resolver,
        seed: u64,
        inputs: &[&Path],
        output_names: &[&str],
    ) -> Result<Self, CliError> {
        let hash = config_hash(resolver);
        let dir = out_dir.join(format!("{command}-{hash}-s{seed}"));
        let manifest_path = dir.join("manifest.json");
        if manifest_path.exists() {
            let existing: Manifest = serde_json::from_str(
                &std::fs::read_to_string(&manifest_path)
                    .map_err(|e| CliError::data(format!("reading existing manifest: {e}")))?,
            )
            .map_err(|e| CliError::data(format!("parsing existing manifest: {e}")))?;
            if existing.resolved_config != *resolver.entries() {
                return Err(CliError::data(format!(
                    "run directory {} holds a different configuration; refusing to overwrite",
                    dir.display()
                )));
            }
        }
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::data(format!("creating {}: {e}", dir.display())))?;

        let mut input_digests = BTreeMap::new();
        for path in inputs {
            input_digests.insert(path.display().to_string(), sha256_file(path)?);
        }
        let mut outputs = BTreeMap::new();
        for name in output_names {
            outputs.insert(name.to_string(), dir.join(name).display().to_string());
        }
        let manifest = Manifest {
            tool: "ovepg".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            created_at_unix: unix_now(),
            seed,
            resolved_config: resolver.entries().clone(),
            input_digests,
            outputs,
            completed: None,
        };
        let run = Self { dir, manifest };
        run.write_manifest()?;
        Ok(run)
    }

    fn write_manifest(&self) -> Result<(), CliError> {
        write_json(&self.dir.join("manifest.json"), &self.manifest)
    }

    /// Finalize the manifest with timing once the run is done.
    pub fn complete(&mut self, wall_time_secs: f64) -> Result<(), CliError> {
        self.manifest.completed = Some(Completion {
            finished_at_unix: unix_now(),
            wall_time_secs,
        });
        self.write_manifest()
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Write the per-epoch JSONL metrics and the deterministic report
    /// (wall time moved to the manifest).
    pub fn write_training_outputs(&mut self, report: &TrainReport) -> Result<(), CliError> {
        let mut jsonl = String::new();
        for epoch in &report.epochs {
            jsonl.push_str(&serde_json::to_string(epoch).expect("epoch serializes"));
            jsonl.push('\n');
        }
        write_atomic(&self.path("metrics.jsonl"), jsonl.as_bytes())?;

        let mut value = serde_json::to_value(report).expect("report serializes");
        let wall = value
            .as_object_mut()
            .and_then(|m| m.remove("wall_time_secs"))
            .and_then(|v| v.as_f64())
            .unwrap_or(0.0);
        write_json(&self.path("report.json"), &value)?;
        self.complete(wall)
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Write through a temp file so partially written outputs never survive.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)
            .map_err(|e| CliError::data(format!("creating {}: {e}", tmp.display())))?;
        f.write_all(bytes)
            .map_err(|e| CliError::data(format!("writing {}: {e}", tmp.display())))?;
    }
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::data(format!("renaming into {}: {e}", path.display())))?;
    Ok(())
}
