//! Output files and the run manifest.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub struct OutputFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl OutputFile {
    pub fn text(name: &str, body: String) -> Self {
        Self {
            name: name.to_string(),
            bytes: body.into_bytes(),
        }
    }

    pub fn json<T: Serialize>(name: &str, value: &T) -> Result<Self, CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)
            .map_err(|e| CliError::Numeric(format!("serialize {name}: {e}")))?;
        bytes.push(b'\n');
        Ok(Self {
            name: name.to_string(),
            bytes,
        })
    }
}

/// Hash of a blob in the style of git object ids, with SHA-256.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct FileEntry<'a> {
    name: &'a str,
    bytes: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config: &'a RunConfig,
    outputs: Vec<FileEntry<'a>>,
    /// Hash over the config and every output hash.
    content_hash: String,
}

/// Writes the outputs and `manifest.json` into `dir`, returning the content hash.
pub fn write_all(
    dir: &Path,
    command: &str,
    config: &RunConfig,
    files: &[OutputFile],
) -> Result<String, CliError> {
    let mut config = config.clone();
    config.out = None;
    let config_json = serde_json::to_vec(&config)
        .map_err(|e| CliError::Numeric(format!("serialize config: {e}")))?;
    let mut outputs: Vec<FileEntry> = files
        .iter()
        .map(|f| FileEntry {
            name: &f.name,
            bytes: f.bytes.len(),
            sha256: blob_hash(&f.bytes),
        })
        .collect();
    outputs.sort_by(|a, b| a.name.cmp(b.name));
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update(b"\0");
    h.update(blob_hash(&config_json).as_bytes());
    for o in &outputs {
        h.update(format!("\n{} {}", o.sha256, o.name).as_bytes());
    }
    let content_hash = hex(&h.finalize());
    for f in files {
        std::fs::write(dir.join(&f.name), &f.bytes)?;
    }
    let manifest = Manifest {
        tool: "cmvspec",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: config.seed,
        config: &config,
        outputs,
        content_hash: content_hash.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| CliError::Numeric(format!("serialize manifest: {e}")))?;
    bytes.push(b'\n');
    std::fs::write(dir.join("manifest.json"), bytes)?;
    Ok(content_hash)
}
