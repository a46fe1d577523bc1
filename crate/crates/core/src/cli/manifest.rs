use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

/// Record of one artifact-writing run, stored as
/// `<primary output>.manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub subcommand: String,
    /// Fully resolved configuration, defaults included.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    /// SHA-256 over the subcommand, the canonical config JSON and the input
    /// digests.
    pub content_hash: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(std::fs::read(path)?)))
}

impl RunManifest {
    pub fn new(subcommand: &str, config: impl Serialize, seed: Option<u64>, inputs: &[&Path], outputs: &[&Path]) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let inputs = inputs
            .iter()
            .map(|p| Ok(InputRecord { path: p.display().to_string(), sha256: file_digest(p)? }))
            .collect::<Result<Vec<_>>>()?;
        let mut h = Sha256::new();
        h.update(subcommand.as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(&config)?);
        for i in &inputs {
            h.update([0]);
            h.update(i.sha256.as_bytes());
        }
        Ok(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            config,
            seed,
            inputs,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            content_hash: hex(&h.finalize()),
        })
    }

    pub fn path_for(output: &Path) -> PathBuf {
        let mut s = output.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }

    /// Writes the manifest beside `output`.
    pub fn write_beside(&self, output: &Path) -> Result<PathBuf> {
        let path = Self::path_for(output);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_follows_content_not_names() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
        std::fs::write(&a, b"xyz").unwrap();
        std::fs::write(&b, b"xyz").unwrap();
        let ma = RunManifest::new("synth", serde_json::json!({"n": 3}), Some(1), &[&a], &[]).unwrap();
        let mb = RunManifest::new("synth", serde_json::json!({"n": 3}), Some(1), &[&b], &[]).unwrap();
        assert_eq!(ma.content_hash, mb.content_hash);
        assert_eq!(ma.inputs[0].sha256, "3608bca1e44ea6c4d268eb6db02260269892c0b42b86bbf1e77a6fa16c3c9282");
        let mc = RunManifest::new("synth", serde_json::json!({"n": 4}), Some(1), &[&a], &[]).unwrap();
        assert_ne!(ma.content_hash, mc.content_hash);
        let out = dir.path().join("o.csv");
        let p = ma.write_beside(&out).unwrap();
        assert!(p.ends_with("o.csv.manifest.json"));
        let back: RunManifest = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(back, ma);
    }
}
