//! Run manifests: the provenance record written next to every pipeline
//! output.
//!
//! The manifest hash covers the config hash, seed, tool version, input
//! hashes, per-stage row counts and artifact hashes. Wall-clock timings
//! are recorded for operators but excluded from the hash, so reruns with
//! identical inputs produce an identical manifest hash.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::hex_string;
use super::RunError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub input_hashes: BTreeMap<String, String>,
    pub artifact_hashes: BTreeMap<String, String>,
    pub stage_rows: Vec<(String, usize)>,
    /// Operator info only; not part of the manifest hash.
    pub wall_clock_ms: BTreeMap<String, u64>,
    pub manifest_hash: String,
}

impl RunManifest {
    pub fn new(config_hash: String, seed: u64) -> RunManifest {
        RunManifest {
            config_hash,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            ..RunManifest::default()
        }
    }

    pub fn record_input(&mut self, name: &str, path: &Path) -> Result<(), RunError> {
        let hash = hash_file(path)?;
        self.input_hashes.insert(name.to_string(), hash);
        Ok(())
    }

    pub fn record_artifact(&mut self, name: &str, path: &Path) -> Result<(), RunError> {
        let hash = hash_file(path)?;
        self.artifact_hashes.insert(name.to_string(), hash);
        Ok(())
    }

    pub fn record_rows(&mut self, stage: &str, rows: usize) {
        self.stage_rows.push((stage.to_string(), rows));
    }

    pub fn record_time(&mut self, stage: &str, ms: u64) {
        self.wall_clock_ms.insert(stage.to_string(), ms);
    }

    /// Hash of the deterministic fields.
    pub fn compute_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.config_hash.as_bytes());
        hasher.update(self.seed.to_le_bytes());
        hasher.update(self.tool_version.as_bytes());
        for (k, v) in &self.input_hashes {
            hasher.update(k.as_bytes());
            hasher.update(v.as_bytes());
        }
        for (k, v) in &self.artifact_hashes {
            hasher.update(k.as_bytes());
            hasher.update(v.as_bytes());
        }
        for (stage, rows) in &self.stage_rows {
            hasher.update(stage.as_bytes());
            hasher.update(rows.to_le_bytes());
        }
        hex_string(&hasher.finalize())
    }

    pub fn finalize(&mut self) {
        self.manifest_hash = self.compute_hash();
    }

    pub fn save(&self, path: &Path) -> Result<(), RunError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| RunError::stage("manifest", e))?;
        std::fs::write(path, json).map_err(|e| RunError::stage("manifest", e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunManifest, RunError> {
        let json = std::fs::read_to_string(path).map_err(|e| RunError::stage("manifest", e))?;
        serde_json::from_str(&json).map_err(|e| RunError::stage("manifest", e.to_string()))
    }
}

pub fn hash_file(path: &Path) -> Result<String, RunError> {
    let bytes = std::fs::read(path)
        .map_err(|e| RunError::stage("hash", format!("{}: {e}", path.display())))?;
    Ok(hex_string(&Sha256::digest(&bytes)))
}

/// Prepend a `# key: value` comment line to a CSV artifact. Readers in
/// this crate skip comment lines.
pub fn stamp_csv(path: &Path, comment: &str) -> Result<(), RunError> {
    let body = std::fs::read(path).map_err(|e| RunError::stage("stamp", e))?;
    let mut out = Vec::with_capacity(body.len() + comment.len() + 3);
    out.extend_from_slice(b"# ");
    out.extend_from_slice(comment.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&body);
    std::fs::write(path, out).map_err(|e| RunError::stage("stamp", e))?;
    Ok(())
}
