//! Workspace layout and file output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const WORKSPACE_ENV: &str = "HAMMERPUF_WORKSPACE";

/// Rejects JSON documents whose `format_version` differs from `expected`.
pub fn check_version(value: &serde_json::Value, what: &'static str, expected: u32) -> Result<()> {
    let found = value
        .get("format_version")
        .or_else(|| value.get("version"))
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::format(what, "missing format_version"))?;
    if found != u64::from(expected) {
        return Err(Error::Version {
            what,
            found: found.min(u64::from(u32::MAX)) as u32,
            expected,
        });
    }
    Ok(())
}

/// Directory tree holding devices, measurements, helper data and reports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    /// `$HAMMERPUF_WORKSPACE`, or the current directory.
    pub fn from_env() -> Self {
        Workspace::new(std::env::var_os(WORKSPACE_ENV).map(PathBuf::from).unwrap_or_else(|| ".".into()))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn devices(&self) -> PathBuf {
        self.root.join("devices")
    }

    pub fn measurements(&self) -> PathBuf {
        self.root.join("measurements")
    }

    pub fn helpers(&self) -> PathBuf {
        self.root.join("helpers")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn calibration_file(&self) -> PathBuf {
        self.root.join("calibration.json")
    }
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes through a temporary file in the target directory and renames it
/// into place. Without `overwrite`, an existing target is an error.
pub fn write_atomic(path: &Path, contents: &[u8], overwrite: bool) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(io_err)?;
    if !overwrite && path.exists() {
        return Err(Error::Usage(format!(
            "{} already exists (use --force to overwrite)",
            path.display()
        )));
    }
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err)?;
    tmp.write_all(contents).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    if overwrite {
        tmp.persist(path).map_err(|e| io_err(e.error))?;
    } else {
        tmp.persist_noclobber(path).map_err(|e| io_err(e.error))?;
    }
    Ok(())
}

/// Current time in Unix seconds, or `$SOURCE_DATE_EPOCH` when set.
pub fn timestamp() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()) {
        return v;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
