//! Output plumbing: JSON reports and CSV files, each stamped with the module
//! and operation that produced it plus the config hash and seed. Outputs are
//! byte-stable for a fixed config and seed; the timestamp is the single field
//! excluded from hashing and comparisons.

use crate::error::Error;
use serde::Serialize;
use serde_json::json;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub module: String,
    pub operation: String,
    pub config_hash: String,
    pub seed: u64,
    pub timestamp: String,
}

impl RunMeta {
    pub fn new(module: &str, operation: &str, config_hash: u64, seed: u64) -> RunMeta {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs().to_string())
            .unwrap_or_default();
        RunMeta {
            module: module.to_string(),
            operation: operation.to_string(),
            config_hash: format!("{config_hash:016x}"),
            seed,
            timestamp: ts,
        }
    }
}

pub fn write_json(
    dir: &Path,
    name: &str,
    meta: &RunMeta,
    payload: serde_json::Value,
) -> Result<std::path::PathBuf, Error> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let doc = json!({ "meta": meta, "report": payload });
    std::fs::write(&path, serde_json::to_string_pretty(&doc).expect("serializable") + "\n")?;
    Ok(path)
}

/// CSV with a provenance comment header.
pub fn write_csv(
    dir: &Path,
    name: &str,
    meta: &RunMeta,
    body: &str,
) -> Result<std::path::PathBuf, Error> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let header = format!(
        "# module={} operation={} config={} seed={}\n",
        meta.module, meta.operation, meta.config_hash, meta.seed
    );
    std::fs::write(&path, header + body)?;
    Ok(path)
}
