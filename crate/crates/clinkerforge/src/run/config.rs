//! Plain-text run configuration.
//!
//! Grammar: one `section.key = value` assignment per line, `#` starts a
//! comment. Every key has a documented default; unknown keys are hard
//! errors so a typo cannot silently fall back to a default. The canonical
//! hash covers the sorted effective assignments and is stamped into every
//! output artifact.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::RunError;
use crate::eval::Family;

/// Known keys per plain section; `model.<family>.*` is validated against
/// the family's hyperparameter list instead.
const KNOWN: &[(&str, &[&str])] = &[
    (
        "synth",
        &[
            "seed",
            "days",
            "duplicate_frac",
            "missing_frac",
            "negative_frac",
            "outlier_frac",
            "noise_sd_alite",
            "noise_sd_belite",
            "noise_sd_ferrite",
        ],
    ),
    ("align", &["window_min", "kf_buffer_min", "preheater_min", "cooler_min", "sampling_delay_min"]),
    ("clean", &["lo", "hi"]),
    ("split", &["ratio", "mode", "holdout_months"]),
    ("tune", &["k"]),
    ("explain", &["features", "background", "n_samples", "model"]),
    ("report", &["radar", "radar_family"]),
    ("pipeline", &["families", "feature_set", "input", "synth"]),
];

pub fn family_params(family: Family) -> &'static [&'static str] {
    match family {
        Family::Lr => &[],
        Family::Lasso => &["alpha"],
        Family::Ridge => &["alpha"],
        Family::ElasticNet => &["alpha", "l1_ratio"],
        Family::Rf => &[
            "n_estimators",
            "max_depth",
            "min_samples_leaf",
            "min_samples_split",
            "ccp_alpha",
            "max_features",
            "bootstrap",
        ],
        Family::Gbt => &[
            "n_estimators",
            "learning_rate",
            "max_depth",
            "min_child_weight",
            "subsample",
            "colsample_bytree",
            "reg_lambda",
            "reg_alpha",
            "gamma",
        ],
        Family::Svr => &["c", "epsilon", "gamma"],
        Family::Gpr => &["kernel", "length_scale", "signal_var", "noise_level", "scale", "alpha", "n_restarts"],
        Family::Nn => &[
            "hidden",
            "activation",
            "dropout",
            "optimizer",
            "lr",
            "weight_decay",
            "momentum",
            "epochs",
            "batch_size",
        ],
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, RunError> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| RunError::Config(format!("line {}: expected `section.key = value`", lineno + 1)))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            validate_key(&key)?;
            if entries.insert(key.clone(), value).is_some() {
                return Err(RunError::Config(format!("line {}: duplicate key {key:?}", lineno + 1)));
            }
        }
        Ok(RunConfig { entries })
    }

    pub fn load(path: &Path) -> Result<RunConfig, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), RunError> {
        validate_key(key)?;
        self.entries.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, RunError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => {
                v.parse().map_err(|e| RunError::Config(format!("{key}: bad number {v:?}: {e}")))
            }
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, RunError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => {
                v.parse().map_err(|e| RunError::Config(format!("{key}: bad integer {v:?}: {e}")))
            }
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, RunError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => {
                v.parse().map_err(|e| RunError::Config(format!("{key}: bad integer {v:?}: {e}")))
            }
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, RunError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => match v.to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                other => Err(RunError::Config(format!("{key}: expected a boolean, got {other:?}"))),
            },
        }
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    /// All `model.<family>.*` assignments for one family.
    pub fn model_params(&self, family: Family) -> crate::eval::Params {
        let prefix = format!("model.{}.", family.name());
        self.entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|rest| (rest.to_string(), v.clone())))
            .collect()
    }

    /// Canonical content hash: sorted `key = value` lines.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (k, v) in &self.entries {
            hasher.update(k.as_bytes());
            hasher.update(b" = ");
            hasher.update(v.as_bytes());
            hasher.update(b"\n");
        }
        hex_string(&hasher.finalize())
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn validate_key(key: &str) -> Result<(), RunError> {
    if let Some(rest) = key.strip_prefix("model.") {
        let (family, param) = rest
            .split_once('.')
            .ok_or_else(|| RunError::Config(format!("unknown key {key:?}: expected model.<family>.<param>")))?;
        let family = Family::parse(family).map_err(|e| RunError::Config(e.to_string()))?;
        if !family_params(family).contains(&param) {
            return Err(RunError::Config(format!(
                "unknown key {key:?}: family {} has no parameter {param:?}",
                family.name()
            )));
        }
        return Ok(());
    }
    let (section, k) = key
        .split_once('.')
        .ok_or_else(|| RunError::Config(format!("unknown key {key:?}: expected section.key")))?;
    let known = KNOWN
        .iter()
        .find(|(s, _)| *s == section)
        .ok_or_else(|| RunError::Config(format!("unknown section {section:?} in key {key:?}")))?;
    if !known.1.contains(&k) {
        return Err(RunError::Config(format!("unknown key {key:?} in section {section:?}")));
    }
    Ok(())
}
