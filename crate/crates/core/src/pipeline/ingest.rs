//! Reading a submitted study directory.
//!
//! ```text
//! <study>/study.json
//! <study>/bundles/<stem>/{data.csv, dict.csv, meta.json}
//! <study>/docs/...            (optional)
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::dictionary::parse_dictionary;
use crate::issue::{Issue, IssueCode, Location};
use crate::metadata::{parse_metadata, FileMetadata, Instance};
use crate::tabledata::{parse_table, FileBundle};

pub const STUDY_FILE: &str = "study.json";
pub const BUNDLES_DIR: &str = "bundles";
pub const DOCS_DIR: &str = "docs";
pub const DATA_FILE: &str = "data.csv";
pub const DICT_FILE: &str = "dict.csv";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone)]
pub struct StagedBundle {
    /// Directory name under `bundles/`.
    pub stem: String,
    pub bundle: FileBundle,
    /// The file metadata document as submitted, for template validation.
    pub meta_instance: Instance,
}

#[derive(Debug, Clone)]
pub struct StagedStudy {
    pub root: PathBuf,
    pub study: Instance,
    pub bundles: Vec<StagedBundle>,
    /// Document file names under `docs/`, sorted.
    pub docs: Vec<String>,
    /// Warnings raised while reading the layout.
    pub warnings: Vec<Issue>,
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("study layout has errors")]
    Issues(Vec<Issue>),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

fn sorted_entries(dir: &Path) -> Result<Vec<(String, bool)>, IngestError> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(io_err(dir))? {
        let e = e.map_err(io_err(dir))?;
        let is_dir = e.file_type().map_err(io_err(dir))?.is_dir();
        out.push((e.file_name().to_string_lossy().into_owned(), is_dir));
    }
    out.sort();
    Ok(out)
}

fn unrecognized(rel: String) -> Issue {
    Issue::warning(IssueCode::IngUnrecognizedFile, Location::file(rel.as_str()), format!("{rel} is not part of the layout"))
}

/// Parses every component. Structural problems and parse failures are all
/// collected before returning.
pub fn ingest(root: &Path) -> Result<StagedStudy, IngestError> {
    if !root.is_dir() {
        return Err(IngestError::Issues(vec![Issue::error(
            IssueCode::IngBadLayout,
            Location::file(root.display().to_string()),
            "study path is not a directory",
        )]));
    }
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    let mut docs = Vec::new();
    let mut bundle_dirs = Vec::new();
    let mut study = None;

    for (name, is_dir) in sorted_entries(root)? {
        match (name.as_str(), is_dir) {
            (STUDY_FILE, false) => {
                let path = root.join(STUDY_FILE);
                let raw = fs::read(&path).map_err(io_err(&path))?;
                match parse_metadata(&raw, STUDY_FILE) {
                    Ok(s) => study = Some(s),
                    Err(e) => errors.extend(e),
                }
            }
            (BUNDLES_DIR, true) => {
                let dir = root.join(BUNDLES_DIR);
                for (stem, is_dir) in sorted_entries(&dir)? {
                    if is_dir {
                        bundle_dirs.push(stem);
                    } else {
                        warnings.push(unrecognized(format!("{BUNDLES_DIR}/{stem}")));
                    }
                }
            }
            (DOCS_DIR, true) => {
                let dir = root.join(DOCS_DIR);
                for (doc, is_dir) in sorted_entries(&dir)? {
                    if is_dir {
                        warnings.push(unrecognized(format!("{DOCS_DIR}/{doc}")));
                    } else {
                        docs.push(doc);
                    }
                }
            }
            _ => warnings.push(unrecognized(name)),
        }
    }
    if study.is_none() && !errors.iter().any(|e| e.location.file == STUDY_FILE) {
        errors.push(Issue::error(
            IssueCode::IngMissingComponent,
            Location::file(STUDY_FILE),
            "study metadata file study.json is missing",
        ));
    }
    if bundle_dirs.is_empty() {
        errors.push(Issue::error(
            IssueCode::IngBadLayout,
            Location::file(BUNDLES_DIR),
            "study has no file bundles under bundles/",
        ));
    }

    let mut bundles = Vec::new();
    for stem in bundle_dirs {
        let dir = root.join(BUNDLES_DIR).join(&stem);
        let rel = |f: &str| format!("{BUNDLES_DIR}/{stem}/{f}");
        let mut parts: [Option<Vec<u8>>; 3] = [None, None, None];
        for (name, is_dir) in sorted_entries(&dir)? {
            let slot = match (name.as_str(), is_dir) {
                (DATA_FILE, false) => 0,
                (DICT_FILE, false) => 1,
                (META_FILE, false) => 2,
                _ => {
                    warnings.push(unrecognized(rel(&name)));
                    continue;
                }
            };
            let path = dir.join(&name);
            parts[slot] = Some(fs::read(&path).map_err(io_err(&path))?);
        }
        let [data, dict, meta] = parts;
        let mut missing = |what: &str, file: &str| {
            errors.push(Issue::error(
                IssueCode::IngMissingComponent,
                Location::file(rel(file)),
                format!("bundle {stem:?} is missing its {what} ({file})"),
            ));
        };
        if data.is_none() {
            missing("data file", DATA_FILE);
        }
        if dict.is_none() {
            missing("data dictionary", DICT_FILE);
        }
        if meta.is_none() {
            missing("file metadata", META_FILE);
        }
        let (Some(data), Some(dict), Some(meta)) = (data, dict, meta) else { continue };

        let table = parse_table(&data, &rel(DATA_FILE));
        let dictionary = parse_dictionary(&dict, &rel(DICT_FILE));
        let meta_instance = parse_metadata(&meta, &rel(META_FILE));
        let file_metadata = meta_instance.as_ref().ok().map(|m| {
            serde_json::from_value::<FileMetadata>(serde_json::Value::Object(m.clone())).map_err(|e| {
                vec![Issue::error(
                    IssueCode::MetaBadDocument,
                    Location::file(rel(META_FILE)),
                    format!("file metadata does not fit the file record: {e}"),
                )]
            })
        });
        match (table, dictionary, meta_instance, file_metadata) {
            (Ok(table), Ok(dictionary), Ok(meta_instance), Some(Ok(file_metadata))) => {
                bundles.push(StagedBundle {
                    stem: stem.clone(),
                    bundle: FileBundle { table, dictionary, file_metadata },
                    meta_instance,
                });
            }
            (t, d, m, fm) => {
                errors.extend(t.err().into_iter().flatten());
                errors.extend(d.err().into_iter().flatten());
                errors.extend(m.err().into_iter().flatten());
                errors.extend(fm.and_then(Result::err).into_iter().flatten());
            }
        }
    }

    match study {
        Some(study) if errors.is_empty() => Ok(StagedStudy { root: root.to_path_buf(), study, bundles, docs, warnings }),
        _ => {
            errors.extend(warnings);
            Err(IngestError::Issues(errors))
        }
    }
}
