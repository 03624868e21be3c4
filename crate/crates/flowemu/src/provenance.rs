//! Content checksums that tie every stage output to the exact upstream
//! bundles it was computed from.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::{read_json, write_json};
use crate::error::{io_err, Error, Result};

pub const FILE: &str = "provenance.json";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Provenance {
    pub stage: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Stage settings, e.g. the penalty used.
    #[serde(default)]
    pub settings: serde_json::Value,
    /// Digest of each upstream bundle this stage consumed.
    #[serde(default)]
    pub upstream: BTreeMap<String, String>,
    /// SHA-256 of every file in the bundle, keyed by relative path.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_bytes(&fs::read(path).map_err(io_err(path))?))
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            list_files(root, &path, out)?;
        } else if path != root.join(FILE) {
            out.push(path.strip_prefix(root).expect("listed below root").to_path_buf());
        }
    }
    Ok(())
}

fn checksums(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    list_files(dir, dir, &mut files)?;
    files
        .into_iter()
        .map(|rel| {
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            Ok((key, sha256_file(&dir.join(&rel))?))
        })
        .collect()
}

/// Records checksums of everything currently in `dir` and returns the bundle digest.
pub fn seal(
    dir: &Path,
    stage: &str,
    seed: Option<u64>,
    settings: serde_json::Value,
    upstream: BTreeMap<String, String>,
) -> Result<String> {
    let p = Provenance {
        stage: stage.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        settings,
        upstream,
        files: checksums(dir)?,
    };
    write_json(&dir.join(FILE), &p)?;
    digest(dir)
}

/// Digest identifying a sealed bundle.
pub fn digest(dir: &Path) -> Result<String> {
    sha256_file(&dir.join(FILE))
}

/// Checks that a bundle is sealed by `stage` and unchanged since.
pub fn verify(dir: &Path, stage: &str) -> Result<Provenance> {
    let path = dir.join(FILE);
    if !path.exists() {
        return Err(Error::Stale(format!("{} has no {FILE}; run the {stage} stage first", dir.display())));
    }
    let p: Provenance = read_json(&path)?;
    if p.stage != stage {
        return Err(Error::Stale(format!("{} was produced by {}, expected {stage}", dir.display(), p.stage)));
    }
    for (rel, sum) in &p.files {
        let f = dir.join(rel);
        if !f.exists() {
            return Err(Error::Stale(format!("{} is missing", f.display())));
        }
        if &sha256_file(&f)? != sum {
            return Err(Error::Stale(format!("{} changed after the {stage} stage wrote it", f.display())));
        }
    }
    Ok(p)
}

/// Checks that `downstream` was computed from the current contents of `upstream_dir`.
pub fn check_upstream(downstream: &Provenance, name: &str, upstream_dir: &Path) -> Result<()> {
    let current = digest(upstream_dir)?;
    match downstream.upstream.get(name) {
        Some(d) if *d == current => Ok(()),
        Some(_) => Err(Error::Stale(format!("{name} bundle {} changed since the {} stage ran", upstream_dir.display(), downstream.stage))),
        None => Err(Error::Stale(format!("{} stage output does not record a {name} bundle", downstream.stage))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_modified_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("a.txt"), "x").unwrap();
        fs::write(dir.path().join("sub/b.txt"), "y").unwrap();
        seal(dir.path(), "extract", None, serde_json::Value::Null, BTreeMap::new()).unwrap();
        let p = verify(dir.path(), "extract").unwrap();
        assert!(p.files.contains_key("sub/b.txt"));
        assert!(matches!(verify(dir.path(), "fit"), Err(Error::Stale(_))));
        fs::write(dir.path().join("sub/b.txt"), "z").unwrap();
        assert_eq!(verify(dir.path(), "extract").unwrap_err().exit_code(), 4);
    }
}
