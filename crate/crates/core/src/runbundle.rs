//! Run manifests: seeds, platform, and SHA-256 digests of every artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BUNDLE_VERSION: &str = "0.3.0";
pub const COMMIT_ENV: &str = "OPGRAPH_COMMIT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Platform {
    pub os: String,
    pub arch: String,
    pub family: String,
    pub toolkit_version: String,
}

impl Platform {
    pub fn current() -> Self {
        Platform {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            family: std::env::consts::FAMILY.into(),
            toolkit_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    pub start: String,
    pub end: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunBundle {
    pub version: String,
    pub vcs_commit: String,
    pub command: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub platform: Platform,
    pub input_hashes: BTreeMap<String, String>,
    pub output_hashes: BTreeMap<String, String>,
    pub metrics: serde_json::Value,
    pub timestamps: Timestamps,
    /// Fields that legitimately differ between reruns of the same command.
    pub volatile: Vec<String>,
}

/// Resolve the commit string: explicit flag, then the environment, then "unknown".
pub fn resolve_commit(flag: Option<&str>) -> String {
    if let Some(c) = flag.filter(|c| !c.is_empty()) {
        return c.to_string();
    }
    match std::env::var(COMMIT_ENV) {
        Ok(c) if !c.is_empty() => c,
        _ => {
            log::warn!("no commit given (set {COMMIT_ENV} or pass --commit); recording \"unknown\"");
            "unknown".into()
        }
    }
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Everything a finished run contributes to its manifest. Output paths are
/// relative to the run directory; inputs may live anywhere.
#[derive(Debug, Clone, Default)]
pub struct RunRecord {
    pub command: Vec<String>,
    pub commit: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<String>,
    pub metrics: serde_json::Value,
    pub started: String,
}

pub fn write_runbundle(run_dir: &Path, rec: &RunRecord) -> Result<RunBundle> {
    let mut input_hashes = BTreeMap::new();
    for p in &rec.inputs {
        input_hashes.insert(p.display().to_string(), sha256_file(p)?);
    }
    let mut output_hashes = BTreeMap::new();
    for rel in &rec.outputs {
        if rel == MANIFEST_FILE {
            return Err(Error::InvalidArgument("the manifest cannot list itself".into()));
        }
        output_hashes.insert(rel.clone(), sha256_file(&run_dir.join(rel))?);
    }
    let started = if rec.started.is_empty() { now_rfc3339() } else { rec.started.clone() };
    let bundle = RunBundle {
        version: BUNDLE_VERSION.into(),
        vcs_commit: resolve_commit(rec.commit.as_deref()),
        command: rec.command.clone(),
        seeds: rec.seeds.clone(),
        platform: Platform::current(),
        input_hashes,
        output_hashes,
        metrics: rec.metrics.clone(),
        timestamps: Timestamps { start: started, end: now_rfc3339() },
        volatile: vec!["timestamps".into(), "vcs_commit".into()],
    };
    let text = serde_json::to_string_pretty(&bundle)?;
    fs::write(run_dir.join(MANIFEST_FILE), text + "\n")?;
    Ok(bundle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileVerdict {
    Ok,
    Mismatch,
    Missing,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub files: BTreeMap<String, FileVerdict>,
    pub seeds: BTreeMap<String, u64>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn failures(&self) -> Vec<&str> {
        self.files.iter().filter(|(_, v)| **v != FileVerdict::Ok).map(|(k, _)| k.as_str()).collect()
    }

    /// Turn a failed report into the error naming the first bad file.
    pub fn into_result(self) -> Result<VerifyReport> {
        match self.failures().first() {
            Some(f) => Err(Error::HashMismatch(f.to_string())),
            None => Ok(self),
        }
    }
}

pub fn read_manifest(run_dir: &Path) -> Result<RunBundle> {
    let path = run_dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::MissingManifest(run_dir.display().to_string()));
    }
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn check(path: &Path, want: &str) -> FileVerdict {
    match sha256_file(path) {
        Ok(h) if h == want => FileVerdict::Ok,
        Ok(_) => FileVerdict::Mismatch,
        Err(_) => FileVerdict::Missing,
    }
}

/// Recompute every recorded digest. Inputs that no longer exist are
/// reported as missing rather than as an error.
pub fn verify_runbundle(run_dir: &Path) -> Result<VerifyReport> {
    let m = read_manifest(run_dir)?;
    if m.version != BUNDLE_VERSION {
        return Err(Error::InvalidArgument(format!("unsupported bundle version {}", m.version)));
    }
    let mut files = BTreeMap::new();
    for (rel, h) in &m.output_hashes {
        files.insert(rel.clone(), check(&run_dir.join(rel), h));
    }
    for (p, h) in &m.input_hashes {
        files.insert(p.clone(), check(Path::new(p), h));
    }
    let passed = files.values().all(|v| *v == FileVerdict::Ok);
    Ok(VerifyReport { files, seeds: m.seeds, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(dir: &Path) -> RunBundle {
        fs::write(dir.join("a.json"), b"{\"x\":1}").unwrap();
        fs::create_dir_all(dir.join("sub")).unwrap();
        fs::write(dir.join("sub/b.bin"), [0u8, 1, 2, 3]).unwrap();
        let rec = RunRecord {
            command: vec!["test".into()],
            commit: Some("abc123".into()),
            seeds: BTreeMap::from([("master".into(), 7)]),
            outputs: vec!["a.json".into(), "sub/b.bin".into()],
            metrics: serde_json::json!({"psnr": 1.5}),
            ..Default::default()
        };
        write_runbundle(dir, &rec).unwrap()
    }

    #[test]
    fn write_then_verify_passes() {
        let d = tempfile::tempdir().unwrap();
        let b = bundle(d.path());
        assert_eq!(b.version, "0.3.0");
        assert_eq!(b.vcs_commit, "abc123");
        let r = verify_runbundle(d.path()).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.seeds["master"], 7);
        assert_eq!(read_manifest(d.path()).unwrap(), b);
    }

    #[test]
    fn flipped_byte_is_named() {
        let d = tempfile::tempdir().unwrap();
        bundle(d.path());
        let p = d.path().join("sub/b.bin");
        let mut bytes = fs::read(&p).unwrap();
        bytes[2] ^= 0x01;
        fs::write(&p, bytes).unwrap();
        let r = verify_runbundle(d.path()).unwrap();
        assert!(!r.passed);
        assert_eq!(r.failures(), ["sub/b.bin"]);
        let e = r.into_result().unwrap_err();
        assert_eq!(e.code(), "HASH_MISMATCH");
        assert!(e.to_string().contains("sub/b.bin"));
    }

    #[test]
    fn deleted_artifact_is_missing() {
        let d = tempfile::tempdir().unwrap();
        bundle(d.path());
        fs::remove_file(d.path().join("a.json")).unwrap();
        let r = verify_runbundle(d.path()).unwrap();
        assert_eq!(r.files["a.json"], FileVerdict::Missing);
    }

    #[test]
    fn missing_manifest() {
        let d = tempfile::tempdir().unwrap();
        assert_eq!(verify_runbundle(d.path()).unwrap_err().code(), "MISSING_MANIFEST");
    }

    #[test]
    fn sha256_known_vector() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("abc");
        fs::write(&p, b"abc").unwrap();
        assert_eq!(sha256_file(&p).unwrap(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
