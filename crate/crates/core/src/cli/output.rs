use super::CliError;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

const VERSION: &str = match option_env!("SPATIAL_BD_DESCRIBE") {
    Some(v) => v,
    None => env!("CARGO_PKG_VERSION"),
};

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub version: &'static str,
    pub subcommand: &'static str,
    pub status: &'static str,
    pub seed: u64,
    pub threads: usize,
    pub config: String,
    pub config_sha256: String,
    /// Excluded tail mass of (a⁺, a⁻) relative to their masses.
    pub truncation_errors: Option<[f64; 2]>,
    pub wall_time_seconds: f64,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn new(subcommand: &'static str, seed: u64, threads: usize, config: &Path, config_bytes: &[u8]) -> Self {
        Manifest {
            version: VERSION,
            subcommand,
            status: "ok",
            seed,
            threads,
            config: config.display().to_string(),
            config_sha256: hex_digest(config_bytes),
            truncation_errors: None,
            wall_time_seconds: 0.0,
            files: Vec::new(),
        }
    }
}

/// Output directory that remembers the hash of every file written
/// through it. Each file is produced by a single writer.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)?;
        Ok(OutputDir { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Renders `name` (relative, `/`-separated) into memory with `fill`,
    /// then writes and records it.
    pub fn write<F, E>(&mut self, name: &str, fill: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<(), E>,
        CliError: From<E>,
    {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, &buf)?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry { path: name.to_string(), sha256: hex_digest(&buf), bytes: buf.len() });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.write(name, |buf| -> Result<(), CliError> {
            serde_json::to_writer_pretty(&mut *buf, value).map_err(|e| CliError::Runtime(e.to_string()))?;
            buf.push(b'\n');
            Ok(())
        })
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Writes `manifest.json` listing every recorded file.
    pub fn finish(mut self, mut manifest: Manifest) -> Result<(), CliError> {
        manifest.files = std::mem::take(&mut self.files);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(self.root.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}
