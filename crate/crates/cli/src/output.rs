//! Atomic file output and run manifests.

use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

/// Writes `contents` to `path` through a temporary file in the same
/// directory, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Files of one command run, recorded in `manifest.ini`.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf(), written: Vec::new() }
    }

    pub fn write(&mut self, name: &str, contents: &str) -> std::io::Result<PathBuf> {
        let path = self.root.join(name);
        write_atomic(&path, contents.as_bytes())?;
        self.written.push(name.to_string());
        Ok(path)
    }

    /// Writes the effective configuration and a manifest naming the
    /// command, config hash, seed and every file written so far.
    pub fn finish(mut self, command: &str, canonical_config: &str, seed: Option<u64>) -> std::io::Result<()> {
        self.write("config.ini", canonical_config)?;
        let mut manifest = String::from("[run]\n");
        manifest += &format!("command = {command}\n");
        manifest += &format!("version = {}\n", env!("CARGO_PKG_VERSION"));
        manifest += &format!("config_sha256 = {}\n", sha256_hex(canonical_config.as_bytes()));
        manifest += &format!("seed = {}\n", seed.map_or("none".to_string(), |s| s.to_string()));
        manifest += &format!("files = {}\n", self.written.join(", "));
        write_atomic(&self.root.join("manifest.ini"), manifest.as_bytes())
    }
}
