use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use kacl::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Reproducibility record written next to a command's primary output before
/// the real work starts: resolved parameters, digests of every input file,
/// the seed, and the tool version. Contains no timestamps, so reruns with
/// identical inputs produce identical manifests.
#[derive(Serialize)]
pub struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: Option<u64>,
    parameters: BTreeMap<&'static str, serde_json::Value>,
    inputs: BTreeMap<&'static str, InputDigest>,
}

#[derive(Serialize)]
struct InputDigest {
    path: String,
    bytes: u64,
    sha256: String,
}

impl RunManifest {
    pub fn new(command: &'static str, seed: Option<u64>) -> Self {
        RunManifest {
            tool: "kacl",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            parameters: BTreeMap::new(),
            inputs: BTreeMap::new(),
        }
    }

    pub fn parameter(&mut self, name: &'static str, value: impl Into<serde_json::Value>) {
        self.parameters.insert(name, value.into());
    }

    pub fn input(&mut self, name: &'static str, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
        let hash = Sha256::digest(&bytes);
        let sha256 = hash.iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.insert(
            name,
            InputDigest { path: path.display().to_string(), bytes: bytes.len() as u64, sha256 },
        );
        Ok(())
    }

    pub fn write_next_to(&self, primary_output: &Path) -> Result<()> {
        let path = sidecar(primary_output, "manifest.json");
        let mut rendered = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidInput(format!("manifest serialization: {e}")))?;
        rendered.push('\n');
        fs::write(&path, rendered).map_err(|e| io_error(&path, e))
    }
}

/// `out.ext` → `out.ext.suffix`, keeping the original extension visible.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}
