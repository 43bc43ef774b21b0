//! Local study store.
//!
//! ```text
//! <root>/catalog.json
//! <root>/studies/<accession>/study.json
//!                           /docs/<name>
//!                           /bundles/<stem>/{data.csv, dict.csv, meta.json}
//!                           /harmonized/<stem>_harmonized/{data.csv, dict.csv, meta.json}
//!                           /manifest.json
//!                           /persistent_id
//! ```
//!
//! The manifest lists every other file of the study with its SHA-256 and
//! size. The persistent id is derived from the manifest bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ingest::{BUNDLES_DIR, DATA_FILE, DICT_FILE, DOCS_DIR, META_FILE, STUDY_FILE};
use crate::catalog::StudyRecord;
use crate::dictionary::parse_dictionary;
use crate::issue::{Issue, IssueCode, Location};
use crate::metadata::{parse_metadata, FileMetadata, Instance, StudyMetadata};

pub const STUDIES_DIR: &str = "studies";
pub const HARMONIZED_DIR: &str = "harmonized";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PID_FILE: &str = "persistent_id";
pub const CATALOG_FILE: &str = "catalog.json";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("study {0} is locked by another run")]
    Locked(String),
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

fn corrupt(path: &Path, message: impl Into<String>) -> StoreError {
    StoreError::Corrupt { path: path.to_path_buf(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub accession: String,
    /// Data file name → version, for regression checks on resubmission.
    pub versions: BTreeMap<String, u32>,
    /// Sorted by path.
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn serialize_manifest(m: &Manifest) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(m).expect("manifest serializes");
    out.push(b'\n');
    out
}

pub fn parse_manifest(raw: &[u8]) -> Result<Manifest, serde_json::Error> {
    serde_json::from_slice(raw)
}

pub fn persistent_id(manifest_bytes: &[u8]) -> String {
    format!("local:{}", &sha256_hex(manifest_bytes)[..12])
}

/// One stored bundle: its directory under the study and the three files.
#[derive(Debug, Clone)]
pub struct BundleFiles {
    pub dir: String,
    pub data: Vec<u8>,
    pub dict: Vec<u8>,
    pub meta: Vec<u8>,
}

/// Everything written for one accepted study.
#[derive(Debug, Clone)]
pub struct StudyArtifacts {
    pub accession: String,
    pub study_json: Vec<u8>,
    pub docs: Vec<(String, Vec<u8>)>,
    pub bundles: Vec<BundleFiles>,
    pub harmonized: Vec<BundleFiles>,
    pub versions: BTreeMap<String, u32>,
}

impl StudyArtifacts {
    /// Relative path → bytes, sorted by path.
    fn files(&self) -> BTreeMap<String, &[u8]> {
        let mut out = BTreeMap::new();
        out.insert(STUDY_FILE.to_string(), self.study_json.as_slice());
        for (name, bytes) in &self.docs {
            out.insert(format!("{DOCS_DIR}/{name}"), bytes.as_slice());
        }
        for (top, list) in [(BUNDLES_DIR, &self.bundles), (HARMONIZED_DIR, &self.harmonized)] {
            for b in list {
                out.insert(format!("{top}/{}/{DATA_FILE}", b.dir), b.data.as_slice());
                out.insert(format!("{top}/{}/{DICT_FILE}", b.dir), b.dict.as_slice());
                out.insert(format!("{top}/{}/{META_FILE}", b.dir), b.meta.as_slice());
            }
        }
        out
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            accession: self.accession.clone(),
            versions: self.versions.clone(),
            files: self
                .files()
                .into_iter()
                .map(|(path, bytes)| ManifestEntry { path, sha256: sha256_hex(bytes), size: bytes.len() as u64 })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreOutcome {
    pub manifest: Manifest,
    pub manifest_sha256: String,
    pub persistent_id: String,
}

pub fn study_dir(root: &Path, accession: &str) -> PathBuf {
    root.join(STUDIES_DIR).join(accession)
}

/// Held while a study is being written; removes its lock file on drop.
pub struct StudyLock {
    path: PathBuf,
}

impl StudyLock {
    pub fn acquire(root: &Path, accession: &str) -> Result<StudyLock, StoreError> {
        let dir = root.join(STUDIES_DIR);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(format!(".{accession}.lock"));
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(StudyLock { path }),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(StoreError::Locked(accession.to_string())),
            Err(e) => Err(StoreError::Io { path, source: e }),
        }
    }
}

impl Drop for StudyLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn read_manifest(root: &Path, accession: &str) -> Result<Option<Manifest>, StoreError> {
    let path = study_dir(root, accession).join(MANIFEST_FILE);
    match fs::read(&path) {
        Ok(raw) => parse_manifest(&raw).map(Some).map_err(|e| corrupt(&path, e.to_string())),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(StoreError::Io { path, source: e }),
    }
}

/// Errors for files whose version is lower than the stored one.
pub fn version_regressions(root: &Path, accession: &str, versions: &BTreeMap<String, u32>) -> Result<Vec<Issue>, StoreError> {
    let Some(old) = read_manifest(root, accession)? else { return Ok(Vec::new()) };
    Ok(versions
        .iter()
        .filter_map(|(file, &v)| {
            let &stored = old.versions.get(file)?;
            (v < stored).then(|| {
                Issue::error(
                    IssueCode::StoreVersionRegression,
                    Location::file(file.as_str()),
                    format!("version {v} is older than stored version {stored}"),
                )
            })
        })
        .collect())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

/// Writes into a scratch directory and swaps it in, so readers never see a
/// half-written study. The caller holds the study lock.
pub fn write_study(root: &Path, a: &StudyArtifacts, _lock: &StudyLock) -> Result<StoreOutcome, StoreError> {
    let studies = root.join(STUDIES_DIR);
    let scratch = studies.join(format!(".{}.tmp", a.accession));
    let old = studies.join(format!(".{}.old", a.accession));
    for d in [&scratch, &old] {
        if d.exists() {
            fs::remove_dir_all(d).map_err(io_err(d))?;
        }
    }
    for (rel, bytes) in a.files() {
        write_file(&scratch.join(rel), bytes)?;
    }
    let manifest = a.manifest();
    let manifest_bytes = serialize_manifest(&manifest);
    let pid = persistent_id(&manifest_bytes);
    write_file(&scratch.join(MANIFEST_FILE), &manifest_bytes)?;
    write_file(&scratch.join(PID_FILE), format!("{pid}\n").as_bytes())?;

    let target = study_dir(root, &a.accession);
    if target.exists() {
        fs::rename(&target, &old).map_err(io_err(&target))?;
    }
    fs::rename(&scratch, &target).map_err(io_err(&scratch))?;
    if old.exists() {
        fs::remove_dir_all(&old).map_err(io_err(&old))?;
    }
    Ok(StoreOutcome { manifest, manifest_sha256: sha256_hex(&manifest_bytes), persistent_id: pid })
}

/// Rehashes every file listed in the manifest and reports mismatches and
/// unlisted files.
pub fn verify_study(root: &Path, accession: &str) -> Result<Vec<String>, StoreError> {
    let dir = study_dir(root, accession);
    let manifest = read_manifest(root, accession)?.ok_or_else(|| corrupt(&dir, "no manifest"))?;
    let mut problems = Vec::new();
    let mut listed = BTreeSet::new();
    for e in &manifest.files {
        listed.insert(e.path.clone());
        match fs::read(dir.join(&e.path)) {
            Ok(bytes) if sha256_hex(&bytes) == e.sha256 && bytes.len() as u64 == e.size => {}
            Ok(_) => problems.push(format!("{}: content does not match manifest", e.path)),
            Err(_) => problems.push(format!("{}: missing", e.path)),
        }
    }
    let mut stack = vec![(dir.clone(), String::new())];
    while let Some((d, prefix)) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(io_err(&d))? {
            let entry = entry.map_err(io_err(&d))?;
            let name = format!("{prefix}{}", entry.file_name().to_string_lossy());
            if entry.file_type().map_err(io_err(&d))?.is_dir() {
                stack.push((entry.path(), format!("{name}/")));
            } else if name != MANIFEST_FILE && name != PID_FILE && !listed.contains(&name) {
                problems.push(format!("{name}: not in manifest"));
            }
        }
    }
    problems.sort();
    Ok(problems)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileKind {
    Original,
    Harmonized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredFile {
    /// Directory relative to the study, e.g. `bundles/visits`.
    pub dir: String,
    pub kind: FileKind,
    pub metadata: FileMetadata,
    pub variables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredStudy {
    pub study: Instance,
    pub metadata: StudyMetadata,
    pub persistent_id: String,
    pub docs: Vec<String>,
    pub files: Vec<StoredFile>,
}

impl StoredStudy {
    pub fn record(&self) -> StudyRecord {
        StudyRecord {
            metadata: self.metadata.clone(),
            variables: self.files.iter().flat_map(|f| f.variables.iter().cloned()).collect(),
            has_data_files: !self.files.is_empty(),
        }
    }

    pub fn file(&self, name: &str) -> Option<&StoredFile> {
        self.files.iter().find(|f| f.metadata.file_name == name)
    }
}

fn sorted_names(dir: &Path, want_dirs: bool) -> Result<Vec<String>, StoreError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(io_err(dir))? {
        let e = e.map_err(io_err(dir))?;
        if e.file_type().map_err(io_err(dir))?.is_dir() == want_dirs {
            out.push(e.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

/// Accessions with a stored study, sorted. Scratch and lock entries are skipped.
pub fn list_accessions(root: &Path) -> Result<Vec<String>, StoreError> {
    Ok(sorted_names(&root.join(STUDIES_DIR), true)?.into_iter().filter(|n| !n.starts_with('.')).collect())
}

pub fn load_study(root: &Path, accession: &str) -> Result<StoredStudy, StoreError> {
    let dir = study_dir(root, accession);
    let read = |p: &Path| fs::read(p).map_err(io_err(p));
    let study_path = dir.join(STUDY_FILE);
    let study = parse_metadata(&read(&study_path)?, STUDY_FILE)
        .map_err(|_| corrupt(&study_path, "study metadata is not a JSON object"))?;
    let metadata = StudyMetadata::from_instance(&study).map_err(|e| corrupt(&study_path, e.to_string()))?;
    let pid_path = dir.join(PID_FILE);
    let persistent_id = String::from_utf8_lossy(&read(&pid_path)?).trim().to_string();
    let docs = sorted_names(&dir.join(DOCS_DIR), false)?;
    let mut files = Vec::new();
    for (top, kind) in [(BUNDLES_DIR, FileKind::Original), (HARMONIZED_DIR, FileKind::Harmonized)] {
        for name in sorted_names(&dir.join(top), true)? {
            let rel = format!("{top}/{name}");
            let meta_path = dir.join(&rel).join(META_FILE);
            let raw = read(&meta_path)?;
            let inst = parse_metadata(&raw, META_FILE).map_err(|_| corrupt(&meta_path, "bad file metadata"))?;
            let metadata: FileMetadata = serde_json::from_value(serde_json::Value::Object(inst))
                .map_err(|e| corrupt(&meta_path, e.to_string()))?;
            let dict_path = dir.join(&rel).join(DICT_FILE);
            let dict = parse_dictionary(&read(&dict_path)?, DICT_FILE)
                .map_err(|_| corrupt(&dict_path, "stored dictionary does not parse"))?;
            files.push(StoredFile { dir: rel, kind, metadata, variables: dict.ids().map(str::to_string).collect() });
        }
    }
    Ok(StoredStudy { study, metadata, persistent_id, docs, files })
}

pub fn load_all(root: &Path) -> Result<Vec<StoredStudy>, StoreError> {
    list_accessions(root)?.iter().map(|a| load_study(root, a)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogFile {
    pub records: Vec<StudyRecord>,
}

/// Rebuilds `catalog.json` from the stored studies, replacing it atomically.
pub fn write_catalog(root: &Path) -> Result<CatalogFile, StoreError> {
    let mut records: Vec<StudyRecord> = load_all(root)?.iter().map(StoredStudy::record).collect();
    records.sort_by(|a, b| a.accession().cmp(b.accession()));
    let catalog = CatalogFile { records };
    let mut bytes = serde_json::to_vec_pretty(&catalog).expect("catalog serializes");
    bytes.push(b'\n');
    let tmp = root.join(format!(".{CATALOG_FILE}.tmp"));
    write_file(&tmp, &bytes)?;
    let path = root.join(CATALOG_FILE);
    fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok(catalog)
}

pub fn read_catalog(root: &Path) -> Result<CatalogFile, StoreError> {
    let path = root.join(CATALOG_FILE);
    let raw = fs::read(&path).map_err(io_err(&path))?;
    serde_json::from_slice(&raw).map_err(|e| corrupt(&path, e.to_string()))
}
