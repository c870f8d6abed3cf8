use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommandEntry {
    /// Config snapshot written under `configs/`, relative to the output dir.
    pub config: String,
    pub seed: u64,
    pub seeds: Vec<u64>,
}

/// Commands run into an output directory and the checksums of everything
/// they wrote. Wall-clock sidecars (`*_timing.csv`) are listed without a
/// checksum since they differ between runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub commands: BTreeMap<String, CommandEntry>,
    pub files: BTreeMap<String, String>,
    pub timing_files: Vec<String>,
}

impl Manifest {
    pub fn read(out: &Path) -> Result<Self> {
        let p = out.join(MANIFEST_FILE);
        if !p.exists() {
            return Ok(Self::default());
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?)
    }

    /// Record `command`, rescan `out` and rewrite the manifest.
    pub fn update(out: &Path, command: &str, entry: CommandEntry) -> Result<Self> {
        let mut m = Self::read(out)?;
        m.commands.insert(command.to_string(), entry);
        m.files.clear();
        m.timing_files.clear();
        for rel in list_files(out)? {
            let name = rel.to_string_lossy().replace('\\', "/");
            if name == MANIFEST_FILE {
                continue;
            }
            if name.ends_with("_timing.csv") {
                m.timing_files.push(name);
            } else {
                m.files.insert(name, sha256_file(&out.join(&rel))?);
            }
        }
        std::fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(m)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Regular files under `root`, relative and sorted.
fn list_files(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksums_skip_timing_sidecars() {
        let d = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(d.path().join("a")).unwrap();
        std::fs::write(d.path().join("a/x.csv"), "abc").unwrap();
        std::fs::write(d.path().join("a/x_timing.csv"), "1").unwrap();
        let m = Manifest::update(d.path(), "generate-data", CommandEntry::default()).unwrap();
        // sha256("abc")
        assert_eq!(m.files["a/x.csv"], "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(m.timing_files, vec!["a/x_timing.csv".to_string()]);
        assert_eq!(Manifest::read(d.path()).unwrap(), m);
    }
}
