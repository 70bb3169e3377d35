use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nbb_core::{NbbError, Result};
use serde::Serialize;
use tempfile::NamedTempFile;

/// Output directory whose files appear atomically: each is written to a
/// temporary file in the same directory and renamed into place.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn write<F>(&self, name: &str, fill: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut dyn Write) -> Result<()>,
    {
        let target = self.root.join(name);
        let tmp = NamedTempFile::new_in(&self.root)?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            fill(&mut w)?;
            w.flush()?;
        }
        tmp.as_file().sync_all()?;
        tmp.persist(&target).map_err(|e| NbbError::Io(e.error))?;
        log::info!("wrote {}", target.display());
        Ok(target)
    }

    pub fn json<S: Serialize>(&self, name: &str, value: &S) -> Result<PathBuf> {
        self.write(name, |w| nbb_core::io::write_json(value, w))
    }
}
