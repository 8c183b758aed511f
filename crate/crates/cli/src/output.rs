//! Output directory layout and small writers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{io_err, CliError};

pub const OUTPUT_ROOT_ENV: &str = "CLOTHFIT_OUTPUT_ROOT";

pub struct OutputDir {
    pub root: PathBuf,
    quiet: bool,
}

/// `--output`, then `output_dir` from the config, then
/// `$CLOTHFIT_OUTPUT_ROOT/<config stem>-<command>` (root defaults to `runs`).
pub fn resolve_dir(flag: Option<&Path>, config_dir: Option<&Path>, config_path: &Path, command: &str) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = config_dir {
        return p.to_path_buf();
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| "runs".into());
    let stem = config_path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    root.join(format!("{stem}-{command}"))
}

impl OutputDir {
    pub fn create(root: PathBuf, quiet: bool) -> Result<Self, CliError> {
        fs::create_dir_all(&root).map_err(io_err(root.display()))?;
        Ok(Self { root, quiet })
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    pub fn subdir(&self, rel: impl AsRef<Path>) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        fs::create_dir_all(&p).map_err(io_err(p.display()))?;
        Ok(p)
    }

    pub fn write(&self, rel: impl AsRef<Path>, text: &str) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        fs::write(&p, text).map_err(io_err(p.display()))?;
        Ok(p)
    }

    pub fn csv<R: Serialize>(&self, rel: impl AsRef<Path>, rows: &[R]) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        write_csv(&p, rows)?;
        Ok(p)
    }

    pub fn note(&self, msg: impl std::fmt::Display) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path.display()))?;
    Ok(())
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String, CliError> {
    toml::to_string(value).map_err(|e| CliError::Io(format!("toml: {e}")))
}
