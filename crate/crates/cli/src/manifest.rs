use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use parapack::io::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Everything needed to repeat a run: the command line, the hash of the
/// input it consumed and an inventory of what it wrote.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: String,
    pub master_seed: Option<u64>,
    pub workers: usize,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    pub fn new(command: &str, config_bytes: &[u8], master_seed: Option<u64>, workers: usize) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            args: std::env::args().collect(),
            config_hash: sha256_hex(config_bytes),
            master_seed,
            workers,
            started_unix_s: unix_now(),
            finished_unix_s: 0.0,
            outputs: Vec::new(),
        }
    }

    /// Record `files` (relative to `dir`) and write the manifest there.
    pub fn finish(mut self, dir: &Path, files: &[PathBuf]) -> parapack::Result<()> {
        for f in files {
            let full = dir.join(f);
            let bytes = std::fs::read(&full).map_err(|e| parapack::Error::Io {
                path: full.display().to_string(),
                source: e,
            })?;
            self.outputs.push(OutputFile {
                path: f.display().to_string(),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
        self.finished_unix_s = unix_now();
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_abc() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
