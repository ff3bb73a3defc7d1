use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use wspan::io::write_json;
use wspan::{Error, Result};

/// Provenance record written next to every output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// `label/file name` → SHA-256 of the file contents.
    pub inputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: u64, config: &impl Serialize) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            seed,
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            inputs: BTreeMap::new(),
        }
    }

    pub fn add_file(&mut self, label: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.inputs.insert(format!("{label}/{name}"), hex);
        Ok(())
    }

    pub fn add_files<'a>(
        &mut self,
        label: &str,
        paths: impl IntoIterator<Item = &'a Path>,
    ) -> Result<()> {
        for p in paths {
            self.add_file(label, p)?;
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }
}
