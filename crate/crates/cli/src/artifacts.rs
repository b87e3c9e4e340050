//! Atomic artifact emission and the run manifest.
//!
//! Every output file is staged in a temporary file and renamed into place,
//! and every write is recorded; `finish` seals the run by writing
//! `manifest.json` listing each artifact digest, each input digest, and
//! the configuration hash. The manifest carries no timestamps so identical
//! runs produce byte-identical trees.

use crate::failure::Failure;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

pub fn digest_file(path: &Path) -> Result<String, Failure> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| Failure::data(format!("cannot open {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        let _ = write!(hex, "{byte:02x}");
    }
    Ok(hex)
}

/// Collects one run's outputs (and consumed inputs) under a single root.
pub struct ArtifactSet {
    out_dir: PathBuf,
    artifacts: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    artifacts: &'a BTreeMap<String, String>,
    config_hash: &'a str,
    inputs: &'a BTreeMap<String, String>,
    subcommand: &'a str,
    version: &'static str,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .ok_or_else(|| Failure::internal(format!("artifact path {} has no parent", path.display())))?;
    std::fs::create_dir_all(parent)
        .map_err(|e| Failure::internal(format!("cannot create {}: {e}", parent.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent)
        .map_err(|e| Failure::internal(format!("cannot stage file in {}: {e}", parent.display())))?;
    tmp.write_all(bytes)
        .map_err(|e| Failure::internal(format!("cannot write {}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| Failure::internal(format!("cannot finalize {}: {e}", path.display())))?;
    Ok(())
}

impl ArtifactSet {
    pub fn new(out_dir: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(out_dir)
            .map_err(|e| Failure::internal(format!("cannot create {}: {e}", out_dir.display())))?;
        Ok(ArtifactSet {
            out_dir: out_dir.to_path_buf(),
            artifacts: BTreeMap::new(),
            inputs: BTreeMap::new(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Atomically write one artifact at `rel` under the output root.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), Failure> {
        write_atomic(&self.out_dir.join(rel), bytes)?;
        self.artifacts.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Record a consumed input under a stable label (never an absolute
    /// path, so identical runs rooted elsewhere stay byte-identical).
    pub fn record_input(&mut self, label: impl Into<String>, digest: String) {
        self.inputs.insert(label.into(), digest);
    }

    pub fn record_input_file(
        &mut self,
        label: impl Into<String>,
        path: &Path,
    ) -> Result<(), Failure> {
        let digest = digest_file(path)?;
        self.record_input(label, digest);
        Ok(())
    }

    pub fn artifact_count(&self) -> usize {
        self.artifacts.len()
    }

    /// Seal the run: write `manifest.json` referencing every artifact.
    pub fn finish(self, subcommand: &str, config_hash: &str) -> Result<(), Failure> {
        let manifest = Manifest {
            artifacts: &self.artifacts,
            config_hash,
            inputs: &self.inputs,
            subcommand,
            version: env!("CARGO_PKG_VERSION"),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| Failure::internal(format!("cannot encode manifest: {e}")))?;
        bytes.push(b'\n');
        write_atomic(&self.out_dir.join("manifest.json"), &bytes)
    }
}

/// Merge per-worker input digests into the set after a parallel stage.
pub fn absorb_inputs(set: &mut ArtifactSet, batches: impl IntoIterator<Item = Vec<(String, String)>>) {
    for batch in batches {
        for (label, digest) in batch {
            set.record_input(label, digest);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_are_atomic_and_sealed_into_a_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = ArtifactSet::new(dir.path()).unwrap();
        set.write("a.csv", b"x,y\n1,2\n").unwrap();
        set.write("nested/b.csv", b"z\n3\n").unwrap();
        set.record_input("data:input.csv", sha256_hex(b"raw"));
        set.finish("test", "cafe").unwrap();

        let manifest: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["subcommand"], "test");
        assert_eq!(manifest["config_hash"], "cafe");
        assert_eq!(
            manifest["artifacts"]["a.csv"],
            sha256_hex(b"x,y\n1,2\n").as_str()
        );
        assert_eq!(
            manifest["artifacts"]["nested/b.csv"],
            sha256_hex(b"z\n3\n").as_str()
        );
        assert_eq!(manifest["inputs"]["data:input.csv"], sha256_hex(b"raw").as_str());

        // No stray files: everything on disk is either listed or the manifest.
        let mut on_disk = Vec::new();
        for entry in walk(dir.path()) {
            on_disk.push(entry);
        }
        on_disk.sort();
        assert_eq!(on_disk, vec!["a.csv", "manifest.json", "nested/b.csv"]);
    }

    fn walk(root: &Path) -> Vec<String> {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    out.push(
                        path.strip_prefix(root)
                            .unwrap()
                            .to_string_lossy()
                            .replace('\\', "/"),
                    );
                }
            }
        }
        out
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
