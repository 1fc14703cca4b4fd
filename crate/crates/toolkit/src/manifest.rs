use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ToolError, ToolResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written once into every output directory. Paths of
/// artifacts are relative to that directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Input path → sha256.
    pub inputs: BTreeMap<String, String>,
    /// Artifact path (relative) → sha256.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> ToolResult<String> {
    let bytes = std::fs::read(path).map_err(|e| ToolError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            tool: "pflow".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> ToolResult<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Records every file of `dir` except the manifest itself.
    pub fn add_artifacts(&mut self, dir: &Path) -> ToolResult<()> {
        for rel in list_files(dir)? {
            if rel == Path::new(MANIFEST_FILE) {
                continue;
            }
            let digest = sha256_file(&dir.join(&rel))?;
            self.artifacts.insert(rel.display().to_string(), digest);
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> ToolResult<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| ToolError::io(&path, e))
    }

    pub fn load(dir: &Path) -> ToolResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| ToolError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| ToolError::io(&path, e))
    }

    /// Artifacts whose current digest differs from the recorded one.
    pub fn verify_artifacts(&self, dir: &Path) -> ToolResult<Vec<String>> {
        let mut bad = Vec::new();
        for (rel, digest) in &self.artifacts {
            let p = dir.join(rel);
            if !p.exists() || &sha256_file(&p)? != digest {
                bad.push(rel.clone());
            }
        }
        Ok(bad)
    }
}

/// Files under `dir`, relative and sorted.
pub fn list_files(dir: &Path) -> ToolResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| ToolError::io(&d, e))? {
            let entry = entry.map_err(|e| ToolError::io(&d, e))?;
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).expect("listed under dir").to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Creates `dir` for fresh output. An existing non-empty directory is only
/// replaced with `force`, and only if it holds a manifest from this tool.
pub fn prepare_output(dir: &Path, force: bool) -> ToolResult<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir).map_err(|e| ToolError::io(dir, e))?.next().is_some();
        if non_empty {
            if !force {
                return Err(ToolError::Usage(format!(
                    "{} already exists; pass --force to overwrite",
                    dir.display()
                )));
            }
            if !dir.join(MANIFEST_FILE).exists() {
                return Err(ToolError::Usage(format!(
                    "{} is not an output directory of this tool; refusing to overwrite",
                    dir.display()
                )));
            }
            std::fs::remove_dir_all(dir).map_err(|e| ToolError::io(dir, e))?;
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| ToolError::io(dir, e))
}
