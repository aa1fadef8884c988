//! Output directories are assembled in a hidden sibling and renamed into
//! place only after every file is written, so a failed command leaves
//! nothing behind.

use std::fs;
use std::path::{Path, PathBuf};

use tempfile::TempDir;

use crate::exit::CliError;

pub struct Staged {
    dir: TempDir,
    target: PathBuf,
    replace: bool,
}

impl Staged {
    /// Refuses a non-empty `target` unless `replace` is set.
    pub fn new(target: &Path, replace: bool) -> Result<Self, CliError> {
        let occupied = fs::read_dir(target).map(|mut d| d.next().is_some()).unwrap_or(false);
        if target.is_file() || (occupied && !replace) {
            return Err(CliError::validation(format!(
                "output {} already exists (pass --force to replace it)",
                target.display()
            )));
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| CliError::io(&parent, e))?;
        let dir = tempfile::Builder::new()
            .prefix(".psvma-staging-")
            .tempdir_in(&parent)
            .map_err(|e| CliError::io(&parent, e))?;
        Ok(Staged {
            dir,
            target: target.to_path_buf(),
            replace,
        })
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    /// Moves the staged directory to its final location.
    pub fn commit(self) -> Result<PathBuf, CliError> {
        if self.target.exists() {
            let clear = if self.replace {
                fs::remove_dir_all(&self.target)
            } else {
                fs::remove_dir(&self.target)
            };
            clear.map_err(|e| CliError::io(&self.target, e))?;
        }
        let staged = self.dir.keep();
        fs::rename(&staged, &self.target).map_err(|e| {
            let _ = fs::remove_dir_all(&staged);
            CliError::io(&self.target, e)
        })?;
        Ok(self.target)
    }
}
