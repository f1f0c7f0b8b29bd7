//! Output directory handling. A run marks its directory with `INCOMPLETE`
//! until it finishes; timestamps only go to the `run.log` sidecar so every
//! other file is byte-identical across reruns.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";
pub const LOG_FILE: &str = "run.log";

pub struct OutDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path, command: &str) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let marker = root.join(INCOMPLETE_MARKER);
        fs::write(
            &marker,
            format!("command '{command}' has not finished; outputs here are partial\n"),
        )
        .map_err(|e| CliError::io(&marker, e))?;
        let out = Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        };
        out.log(&format!("start {command}"))?;
        Ok(out)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, contents: &str) -> CliResult<PathBuf> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        log::debug!("wrote {}", path.display());
        self.written.push(path.clone());
        Ok(path)
    }

    /// Appends a timestamped line to the sidecar log.
    pub fn log(&self, line: &str) -> CliResult<()> {
        let path = self.root.join(LOG_FILE);
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0.0, |d| d.as_secs_f64());
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| CliError::io(&path, e))?;
        writeln!(f, "{ts:.3} {line}").map_err(|e| CliError::io(&path, e))
    }

    /// `path,bytes,sha256` for every file written so far, sorted by path.
    pub fn manifest(&self) -> CliResult<String> {
        let mut rows = Vec::new();
        for p in &self.written {
            let bytes = fs::read(p).map_err(|e| CliError::io(p, e))?;
            let rel = p
                .strip_prefix(&self.root)
                .unwrap_or(p)
                .to_string_lossy()
                .replace('\\', "/");
            rows.push((rel, bytes.len(), hex::encode(Sha256::digest(&bytes))));
        }
        rows.sort();
        rows.dedup();
        let mut out = String::from("path,bytes,sha256\n");
        for (p, n, h) in rows {
            let _ = writeln!(out, "{p},{n},{h}");
        }
        Ok(out)
    }

    pub fn finish(self) -> CliResult<()> {
        self.log("done")?;
        let marker = self.root.join(INCOMPLETE_MARKER);
        fs::remove_file(&marker).map_err(|e| CliError::io(&marker, e))
    }
}
