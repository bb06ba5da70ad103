//! Output staging and run manifests.
//!
//! Artifacts are rendered in memory, written to temporary files next to
//! their destinations and only moved into place once every artifact of the
//! run exists. A failed run therefore leaves no partial output behind.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::error::{CliError, CliResult};

pub const MANIFEST_FORMAT: &str = "noma-secrecy-manifest";
pub const MANIFEST_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct FileRecord {
    path: String,
    sha256: String,
    bytes: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    version: u32,
    tool_version: &'static str,
    command: &'a str,
    config: &'a Map<String, Value>,
    inputs: &'a [FileRecord],
    outputs: &'a [FileRecord],
}

/// Reads an input file and remembers its hash for the manifest.
pub struct Inputs {
    records: Vec<FileRecord>,
    paths: Vec<PathBuf>,
}

impl Inputs {
    pub fn new() -> Self {
        Inputs {
            records: Vec::new(),
            paths: Vec::new(),
        }
    }

    pub fn read(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
        self.records.push(FileRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len(),
        });
        self.paths
            .push(std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf()));
        Ok(bytes)
    }
}

/// Artifacts of one run, committed together.
pub struct Outputs {
    staged: Vec<(PathBuf, NamedTempFile, FileRecord)>,
}

impl Outputs {
    pub fn new() -> Self {
        Outputs { staged: Vec::new() }
    }

    pub fn stage(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("creating {}: {e}", dir.display())))?;
        let mut tmp = NamedTempFile::new_in(&dir)
            .map_err(|e| CliError::io(format!("creating temporary file in {}: {e}", dir.display())))?;
        tmp.write_all(bytes)
            .and_then(|_| tmp.as_file().sync_all())
            .map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))?;
        let record = FileRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        };
        self.staged.push((path.to_path_buf(), tmp, record));
        Ok(())
    }

    /// Stages the manifest next to `primary` and moves everything into place.
    pub fn commit(
        mut self,
        primary: &Path,
        command: &str,
        config: &Map<String, Value>,
        inputs: Inputs,
    ) -> CliResult<PathBuf> {
        let manifest_path = manifest_path(primary);
        for path in self
            .staged
            .iter()
            .map(|(p, _, _)| p.as_path())
            .chain([manifest_path.as_path()])
        {
            if let Ok(target) = std::fs::canonicalize(path) {
                if inputs.paths.contains(&target) {
                    return Err(CliError::usage(format!(
                        "refusing to overwrite input file {}",
                        path.display()
                    )));
                }
            }
        }
        let records: Vec<FileRecord> = self
            .staged
            .iter()
            .map(|(_, _, r)| FileRecord {
                path: r.path.clone(),
                sha256: r.sha256.clone(),
                bytes: r.bytes,
            })
            .collect();
        let manifest = Manifest {
            format: MANIFEST_FORMAT,
            version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            inputs: &inputs.records,
            outputs: &records,
        };
        let mut text = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::io(e.to_string()))?;
        text.push(b'\n');
        self.stage(&manifest_path, &text)?;
        for (path, tmp, _) in self.staged {
            tmp.persist(&path)
                .map_err(|e| CliError::io(format!("moving output into {}: {}", path.display(), e.error)))?;
        }
        Ok(manifest_path)
    }
}

pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    primary.with_file_name(name)
}
