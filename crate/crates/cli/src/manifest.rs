//! Per-run manifest: the resolved config and the SHA-256 of every output.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.toml";
pub const CONFIG_NAME: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub files: Vec<FileHash>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<FileHash>) -> Result<(), CliError> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else if path.file_name().is_some_and(|n| n != MANIFEST_NAME) {
            let rel = path.strip_prefix(root).expect("inside root");
            let rel = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            out.push(FileHash {
                path: rel,
                sha256: sha256_hex(&fs::read(&path)?),
            });
        }
    }
    Ok(())
}

/// Writes `config.toml` into `dir`, then a manifest hashing every file
/// under `dir`.
pub fn write_manifest(dir: &Path, command: &str, config: &RunConfig) -> Result<Manifest, CliError> {
    let text = config.to_toml();
    fs::write(dir.join(CONFIG_NAME), &text)?;
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        command: command.into(),
        seed: config.train.seed,
        config_sha256: sha256_hex(text.as_bytes()),
        files,
    };
    let body = toml::to_string(&manifest).expect("manifest serializes");
    fs::write(dir.join(MANIFEST_NAME), body)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let text = fs::read_to_string(dir.join(MANIFEST_NAME))?;
    toml::from_str(&text).map_err(|e| CliError::config(MANIFEST_NAME, e.message()))
}
