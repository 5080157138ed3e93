//! Run manifests: what was run, with which inputs, producing which outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};
use slabrecon::kv::KvDoc;

pub const MANIFEST_FORMAT: &str = "slabrecon-manifest-1";
pub const MANIFEST_NAME: &str = "manifest.txt";

/// SHA-256 of a file, or of a directory's files in sorted relative-path order
/// (manifests excluded).
pub fn digest_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        for rel in files {
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(digest_path(&path.join(&rel))?.as_bytes());
        }
    } else {
        h.update(fs::read(path).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else if !p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(MANIFEST_NAME)) {
            out.push(p.strip_prefix(root)?.to_path_buf());
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub subcommand: String,
    pub args: Vec<String>,
    pub config: KvDoc,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            args: std::env::args().skip(1).collect(),
            config: KvDoc::new(),
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn to_kv(&self) -> Result<KvDoc> {
        let mut d = KvDoc::new();
        d.push("format", MANIFEST_FORMAT)
            .push("tool", "slabrecon")
            .push("version", env!("CARGO_PKG_VERSION"))
            .push("subcommand", &self.subcommand)
            .push("args", self.args.join(" "));
        if let Some(seed) = self.seed {
            d.push("seed", seed);
        }
        for (k, v) in self.config.entries() {
            d.push(format!("config.{k}"), v);
        }
        for (i, p) in self.inputs.iter().enumerate() {
            d.push(format!("input.{i}.path"), p.display());
            d.push(format!("input.{i}.sha256"), digest_path(p)?);
        }
        for (i, p) in self.outputs.iter().enumerate() {
            d.push(format!("output.{i}.path"), p.display());
            d.push(format!("output.{i}.sha256"), digest_path(p)?);
        }
        Ok(d)
    }

    /// Write via a temporary file and rename, so a manifest is either
    /// complete or absent.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("txt.tmp");
        fs::write(&tmp, self.to_kv()?.to_string())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_digest_ignores_manifest_and_order() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        fs::write(a.path().join("x.txt"), "1").unwrap();
        fs::write(a.path().join("y.txt"), "2").unwrap();
        fs::write(b.path().join("y.txt"), "2").unwrap();
        fs::write(b.path().join("x.txt"), "1").unwrap();
        fs::write(b.path().join(MANIFEST_NAME), "anything").unwrap();
        assert_eq!(digest_path(a.path()).unwrap(), digest_path(b.path()).unwrap());
        fs::write(b.path().join("x.txt"), "3").unwrap();
        assert_ne!(digest_path(a.path()).unwrap(), digest_path(b.path()).unwrap());
    }

    #[test]
    fn known_file_digest() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("abc");
        fs::write(&p, "abc").unwrap();
        assert_eq!(
            digest_path(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
