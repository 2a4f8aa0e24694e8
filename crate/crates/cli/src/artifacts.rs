use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Output directory that remembers what it wrote, so a failed command can
/// take its partial outputs back.
pub struct Artifacts {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<FileEntry>,
}

impl Artifacts {
    pub fn open(dir: &Path) -> CliResult<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), created_dir, files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        let sha256 = Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect();
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry { name: name.to_string(), bytes: bytes.len(), sha256 });
        Ok(())
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Remove every file written so far, and the directory if we made it.
    pub fn discard(self) {
        for f in &self.files {
            let _ = fs::remove_file(self.dir.join(&f.name));
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

/// Run `body` against a fresh output directory; on error, discard it.
pub fn with_artifacts<T>(dir: &Path, body: impl FnOnce(&mut Artifacts) -> CliResult<T>) -> CliResult<T> {
    let mut out = Artifacts::open(dir)?;
    match body(&mut out) {
        Ok(v) => Ok(v),
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

pub fn jsonl<T: Serialize>(rows: impl IntoIterator<Item = T>) -> String {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(&r).expect("row serializes"));
        s.push('\n');
    }
    s
}
