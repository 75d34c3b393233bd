//! Run manifests: enough to tell which configuration and seed produced a
//! directory of outputs. No timestamps, so equal runs give equal bytes.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ScenarioConfig;
use crate::{write_file, CliError};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub scenario: &'a str,
    /// SHA-256 of `config` below.
    pub config_sha256: String,
    pub seed: u64,
    /// The effective configuration (after command-line overrides) as TOML.
    pub config: String,
    pub diagnostics: serde_json::Value,
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &ScenarioConfig,
    diagnostics: serde_json::Value,
) -> Result<(), CliError> {
    let config = cfg.to_toml();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        scenario: &cfg.id,
        config_sha256: sha256_hex(&config),
        seed: cfg.ocp.seed,
        config,
        diagnostics,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_file(&dir.join(MANIFEST_FILE), &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_records_hash_and_seed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ScenarioConfig::from_toml("id = \"m\"\n[system]\nname = \"driftless3\"\n[ocp]\nseed = 7\n").unwrap();
        write_manifest(dir.path(), "solve-ocp", &cfg, serde_json::json!({"objective": 1.5})).unwrap();
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["seed"], 7);
        assert_eq!(v["config_sha256"], sha256_hex(&cfg.to_toml()));
        assert_eq!(v["diagnostics"]["objective"], 1.5);
    }
}
