use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use keyrel::io::{sha256_hex, write_atomic};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const RUN_MANIFEST: &str = "manifest.json";

/// Provenance of one output directory: the effective config and checksums
/// of everything read and written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub model_version: Option<String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.into(),
            seed: config.seed,
            config: config.clone(),
            model_version: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    /// Records the checksum of an input file, or of every file under an
    /// input directory.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        for (rel, sum) in checksums(path)? {
            let key = if rel.as_os_str().is_empty() {
                path.display().to_string()
            } else {
                path.join(rel).display().to_string()
            };
            self.inputs.insert(key, sum);
        }
        Ok(())
    }

    /// Checksums every file under `dir` as an output, then writes the
    /// manifest into `dir` along with the effective config.
    pub fn finish(mut self, dir: &Path) -> Result<()> {
        let config = self.config.to_toml();
        write_atomic(&dir.join("config.toml"), config.as_bytes())?;
        self.outputs = checksums(dir)?
            .into_iter()
            .filter(|(rel, _)| rel != Path::new(RUN_MANIFEST))
            .map(|(rel, sum)| (rel.display().to_string(), sum))
            .collect();
        let json = serde_json::to_vec_pretty(&self)?;
        write_atomic(&dir.join(RUN_MANIFEST), &json)?;
        Ok(())
    }
}

/// sha256 of each file under `path`, keyed by path relative to it. A plain
/// file yields one entry with an empty key.
pub fn checksums(path: &Path) -> Result<BTreeMap<PathBuf, String>> {
    let mut out = BTreeMap::new();
    if path.is_file() {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        out.insert(PathBuf::new(), sha256_hex(&bytes));
        return Ok(out);
    }
    let mut stack = vec![PathBuf::new()];
    while let Some(rel) = stack.pop() {
        let dir = path.join(&rel);
        for entry in std::fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
            let entry = entry?;
            let child = rel.join(entry.file_name());
            if entry.file_type()?.is_dir() {
                stack.push(child);
            } else {
                let bytes = std::fs::read(entry.path())?;
                out.insert(child, sha256_hex(&bytes));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_outputs_but_not_itself() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"a").unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/b.txt"), b"b").unwrap();
        let cfg = RunConfig::resolve(None, &[], Some(1)).unwrap();
        RunManifest::new("test", &cfg).finish(dir.path()).unwrap();
        let m: RunManifest =
            serde_json::from_slice(&std::fs::read(dir.path().join(RUN_MANIFEST)).unwrap()).unwrap();
        let keys: Vec<&str> = m.outputs.keys().map(String::as_str).collect();
        assert_eq!(keys, ["a.txt", "config.toml", "sub/b.txt"]);
        assert_eq!(m.outputs["a.txt"], sha256_hex(b"a"));
        assert_eq!(m.config, cfg);
    }
}
