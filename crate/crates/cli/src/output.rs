//! Output files written atomically, run manifests, and cleanup of partial
//! outputs when a command fails.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FORMAT: &str = "topicseg-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    format: &'static str,
    version: u32,
    tool_version: &'static str,
    command: &'a str,
    argv: &'a [String],
    config: serde_json::Value,
    inputs: &'a [FileRecord],
    outputs: &'a [FileRecord],
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads a text input and records its hash for the manifest.
pub fn read_input(run: &mut Run, path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    run.inputs.push(FileRecord {
        path: path.display().to_string(),
        sha256: sha256_hex(text.as_bytes()),
    });
    Ok(text)
}

/// One command invocation. Files written through it are removed again unless
/// [`Run::finish`] is reached.
pub struct Run {
    command: String,
    argv: Vec<String>,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
    written: Vec<PathBuf>,
    committed: bool,
}

impl Run {
    pub fn new(command: &str) -> Self {
        Run {
            command: command.to_string(),
            argv: std::env::args().collect(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            written: Vec::new(),
            committed: false,
        }
    }

    pub fn write(&mut self, path: &Path, contents: &str) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp = PathBuf::from(tmp);
        self.written.push(tmp.clone());
        fs::write(&tmp, contents).with_context(|| format!("cannot write {}", tmp.display()))?;
        fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))?;
        self.written.pop();
        self.written.push(path.to_path_buf());
        self.outputs.push(FileRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    /// Writes the manifest describing this run and keeps all outputs.
    pub fn finish(mut self, manifest_path: &Path, config: &impl Serialize) -> Result<()> {
        let doc = Manifest {
            format: MANIFEST_FORMAT,
            version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            command: &self.command,
            argv: &self.argv,
            config: serde_json::to_value(config)?,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let text = serde_json::to_string_pretty(&doc)? + "\n";
        self.write(manifest_path, &text)?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Run {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

/// `<path>.manifest.json`
pub fn manifest_for(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
