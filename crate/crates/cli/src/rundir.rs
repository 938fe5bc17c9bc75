//! Output directories, config loading and input hashing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Reads a JSON config file; unknown keys are rejected by the target type.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<(T, Option<String>), CliError> {
    match path {
        None => Ok((T::default(), None)),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
            let cfg = serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
            Ok((cfg, Some(text)))
        }
    }
}

/// Creates an empty output directory. An existing non-empty directory is
/// only replaced with `force`.
pub fn create(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?.next().is_some();
        if non_empty {
            if !force {
                return Err(CliError::usage(format!(
                    "{} already exists; pass --force to overwrite",
                    dir.display()
                )));
            }
            fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

/// Hash of a byte string framed like a git blob object.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("{:x}", h.finalize())
}

#[derive(Debug, Serialize)]
struct InputHash {
    name: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Provenance {
    tool: String,
    inputs: Vec<InputHash>,
    /// Hash over the sorted (name, hash) list.
    combined: String,
}

/// Collects named inputs and writes `provenance.json`.
#[derive(Debug, Default)]
pub struct Inputs {
    entries: Vec<(String, String)>,
}

impl Inputs {
    pub fn bytes(&mut self, name: &str, bytes: &[u8]) {
        self.entries.push((name.to_string(), blob_hash(bytes)));
    }

    pub fn file(&mut self, name: &str, path: &Path) -> Result<(), CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.bytes(name, &bytes);
        Ok(())
    }

    pub fn write(mut self, dir: &Path) -> Result<(), CliError> {
        self.entries.sort();
        let mut h = Sha256::new();
        for (n, s) in &self.entries {
            h.update(n.as_bytes());
            h.update([0]);
            h.update(s.as_bytes());
            h.update([b'\n']);
        }
        let prov = Provenance {
            tool: format!("ordinal-state {}", env!("CARGO_PKG_VERSION")),
            combined: format!("{:x}", h.finalize()),
            inputs: self
                .entries
                .into_iter()
                .map(|(name, sha256)| InputHash { name, sha256 })
                .collect(),
        };
        write_json(&dir.join("provenance.json"), &prov)
    }
}

/// Writes the effective config and, when one was given, the raw config file.
pub fn echo_config<T: Serialize>(dir: &Path, effective: &T, raw: Option<&str>, inputs: &mut Inputs) -> Result<(), CliError> {
    write_json(&dir.join("config.json"), effective)?;
    inputs.file("config.json", &dir.join("config.json"))?;
    if let Some(raw) = raw {
        let p = dir.join("config.input.json");
        fs::write(&p, raw).map_err(|e| CliError::io(&p, e))?;
    }
    Ok(())
}

/// A dataset argument may name the directory or its manifest.
pub fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.jsonl")
    } else {
        data.to_path_buf()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git_framing() {
        // printf 'hello\n' | git hash-object --object-format=sha256 --stdin
        assert_eq!(
            blob_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }
}
