//! End-to-end curation of a submitted study: ingest, PII scan,
//! de-identification, validation, harmonization, storage and indexing.

pub mod api;
mod config;
mod ingest;
mod report;
pub mod store;

pub use config::{BundleConfig, ConfigError, DeidMode, PipelineConfig, Resources, StageToggles};
pub use ingest::{ingest, IngestError, StagedBundle, StagedStudy};
pub use report::{BundleDeidSummary, FeedbackReport, Stage, StageReport, StageStatus, Verdict};

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::deid::{deidentify_bundle, DeidKey};
use crate::dictionary::{serialize_dictionary, validate_dictionary};
use crate::harmonize::{both_versions, HarmonizeOptions};
use crate::issue::{has_errors, Issue, IssueCode, Location};
use crate::metadata::{serialize_metadata, validate_metadata, FileMetadata, Instance, StudyMetadata};
use crate::piiscan::{builtin_detectors, is_blocking, scan_table, Detector};
use crate::tabledata::{summarize, validate_against_dictionary, FileBundle, MissingPolicy, ValidationOptions};
use store::{BundleFiles, StoreError, StoreOutcome, StudyArtifacts, StudyLock};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("reading {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("store: {0}")]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: FeedbackReport,
    pub stored: Option<StoreOutcome>,
}

fn data_label(stem: &str) -> String {
    format!("{}/{stem}/{}", ingest::BUNDLES_DIR, ingest::DATA_FILE)
}

fn meta_label(stem: &str) -> String {
    format!("{}/{stem}/{}", ingest::BUNDLES_DIR, ingest::META_FILE)
}

fn relabel(mut issues: Vec<Issue>, file: &str) -> Vec<Issue> {
    for i in &mut issues {
        i.location.file = file.to_string();
    }
    issues
}

fn to_instance<T: serde::Serialize>(v: &T) -> Instance {
    match serde_json::to_value(v).expect("record serializes") {
        serde_json::Value::Object(m) => m,
        _ => unreachable!("records serialize to objects"),
    }
}

/// Bundles as they move through the stages.
struct Work {
    stem: String,
    bundle: FileBundle,
    meta_instance: Instance,
    harmonized: Option<FileBundle>,
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    res: &'a Resources,
    key: Option<&'a DeidKey>,
    detectors: Vec<Detector>,
    missing: MissingPolicy,
    report: FeedbackReport,
}

impl Run<'_> {
    /// Records a stage and says whether later stages may run.
    fn finish(&mut self, stage: Stage, issues: Vec<Issue>) -> bool {
        let ok = !has_errors(&issues);
        let status = if ok { StageStatus::Passed } else { StageStatus::Failed };
        self.report.stages.push(StageReport { stage, status, issues });
        ok
    }

    fn skip(&mut self, stage: Stage) {
        self.report.stages.push(StageReport { stage, status: StageStatus::Skipped, issues: Vec::new() });
    }

    fn scan(&mut self, work: &[Work]) -> bool {
        let gate_here = !self.cfg.stages.deid;
        let mut issues = Vec::new();
        for w in work {
            let file = data_label(&w.stem);
            for f in scan_table(&w.bundle.table, &self.detectors) {
                let sev = if gate_here && is_blocking(&f, &self.detectors) {
                    crate::issue::Severity::Error
                } else {
                    crate::issue::Severity::Warning
                };
                issues.push(f.to_issue(&file, sev));
            }
        }
        self.finish(Stage::Scan, issues)
    }

    fn deid(&mut self, work: &mut [Work]) -> bool {
        let mut issues = Vec::new();
        for w in work.iter_mut() {
            let bc = self.cfg.bundle_config(&w.stem);
            match self.cfg.deid_mode {
                DeidMode::Transform => {
                    let key = self.key.expect("transform mode checked for a key at start").clone();
                    let dc = bc.deid.clone().with_key(key);
                    match deidentify_bundle(&w.bundle, &dc, &self.missing) {
                        Ok((b, rep)) => {
                            issues.extend(relabel(rep.warnings.clone(), &data_label(&w.stem)));
                            self.report.deid.insert(w.stem.clone(), BundleDeidSummary::from(&rep));
                            w.bundle = b;
                        }
                        Err(e) => {
                            issues.extend(relabel(e, &data_label(&w.stem)));
                            continue;
                        }
                    }
                }
                DeidMode::VerifyOnly => issues.extend(verify_deidentified(w, &bc.deid, &self.missing)),
            }
            let file = data_label(&w.stem);
            for f in scan_table(&w.bundle.table, &self.detectors) {
                if is_blocking(&f, &self.detectors) {
                    let mut issue = f.to_issue(&file, crate::issue::Severity::Error);
                    issue.message = format!("still present after de-identification: {}", issue.message);
                    issues.push(issue);
                }
            }
        }
        self.finish(Stage::Deid, issues)
    }

    fn validate_bundles(&mut self, work: &[Work]) -> bool {
        let mut issues = Vec::new();
        for w in work {
            let dict_file = format!("{}/{}/{}", ingest::BUNDLES_DIR, w.stem, ingest::DICT_FILE);
            issues.extend(relabel(validate_dictionary(&w.bundle.dictionary), &dict_file));
            let opts = ValidationOptions { missing: self.missing.clone(), file: data_label(&w.stem) };
            issues.extend(validate_against_dictionary(&w.bundle.table, &w.bundle.dictionary, &opts));
        }
        self.finish(Stage::BundleValidate, issues)
    }

    fn validate_metadata(&mut self, study: &Instance, work: &[Work]) -> bool {
        let res = self.res;
        let mut issues = relabel(validate_metadata(study, &res.study_template, &res.terms), ingest::STUDY_FILE);
        if !has_errors(&issues) {
            if let Err(e) = StudyMetadata::from_instance(study) {
                issues.push(Issue::error(
                    IssueCode::MetaBadDocument,
                    Location::file(ingest::STUDY_FILE),
                    format!("study metadata does not fit the study record: {e}"),
                ));
            }
        }
        let accession = study.get("accession").and_then(|v| v.as_str()).unwrap_or_default();
        let mut names = BTreeMap::new();
        for w in work {
            let file = meta_label(&w.stem);
            issues.extend(relabel(validate_metadata(&w.meta_instance, &res.file_template, &res.terms), &file));
            let m = &w.bundle.file_metadata;
            if m.study_accession != accession {
                issues.push(Issue::error(
                    IssueCode::MetaBadValue,
                    Location::file(file.as_str()).with_column("study_accession"),
                    format!("file belongs to {:?} but the study is {accession:?}", m.study_accession),
                ));
            }
            if let Some(other) = names.insert(m.file_name.clone(), w.stem.clone()) {
                issues.push(Issue::error(
                    IssueCode::MetaBadValue,
                    Location::file(file.as_str()).with_column("file_name"),
                    format!("file name {:?} is also used by bundle {other:?}", m.file_name),
                ));
            }
        }
        self.finish(Stage::MetadataValidate, issues)
    }

    fn harmonize(&mut self, work: &mut [Work]) -> bool {
        let opts = HarmonizeOptions { strictness: self.cfg.harmonization, missing: self.missing.clone() };
        let mut issues = Vec::new();
        for w in work.iter_mut() {
            let bc = self.cfg.bundle_config(&w.stem);
            let Some(path) = &bc.mapping else { continue };
            let mapping = &self.res.mappings[path];
            match both_versions(&w.bundle, &self.res.codebook, mapping, &opts) {
                Ok(pair) => {
                    let mut rep = pair.report;
                    issues.extend(relabel(std::mem::take(&mut rep.warnings), &data_label(&w.stem)));
                    self.report.harmonization.insert(w.stem.clone(), rep);
                    w.harmonized = Some(pair.harmonized);
                }
                Err(e) => issues.extend(relabel(e, &data_label(&w.stem))),
            }
        }
        self.finish(Stage::Harmonize, issues)
    }

    fn store(&mut self, staged: &StagedStudy, study: &Instance, work: &mut [Work]) -> Result<Option<StoreOutcome>, PipelineError> {
        let res = self.res;
        let Some(accession) = study.get("accession").and_then(|v| v.as_str()).map(str::to_string) else {
            let missing = Issue::error(
                IssueCode::MetaMissingRequired,
                Location::file(ingest::STUDY_FILE).with_column("accession"),
                "a study needs an accession to be stored",
            );
            self.finish(Stage::Store, vec![missing]);
            return Ok(None);
        };
        let mut docs = Vec::new();
        for name in &staged.docs {
            let path = staged.root.join(ingest::DOCS_DIR).join(name);
            docs.push((name.clone(), fs::read(&path).map_err(|source| PipelineError::Io { path, source })?));
        }
        let files = |dir: String, b: &FileBundle| -> BundleFiles {
            let mut meta: FileMetadata = b.file_metadata.clone();
            meta.summary = Some(summarize(&b.table, &b.dictionary, &self.missing));
            BundleFiles {
                dir,
                data: b.table.to_csv(),
                dict: serialize_dictionary(&b.dictionary),
                meta: serialize_metadata(&to_instance(&meta), &res.file_template),
            }
        };
        let mut versions = BTreeMap::new();
        let mut bundles = Vec::new();
        let mut harmonized = Vec::new();
        for w in work.iter() {
            versions.insert(w.bundle.file_metadata.file_name.clone(), w.bundle.file_metadata.version);
            bundles.push(files(w.stem.clone(), &w.bundle));
            if let Some(h) = &w.harmonized {
                versions.insert(h.file_metadata.file_name.clone(), h.file_metadata.version);
                harmonized.push(files(format!("{}_harmonized", w.stem), h));
            }
        }
        let artifacts = StudyArtifacts {
            accession: accession.clone(),
            study_json: serialize_metadata(study, &res.study_template),
            docs,
            bundles,
            harmonized,
            versions,
        };
        let root = &self.cfg.store_root;
        let lock = StudyLock::acquire(root, &accession)?;
        let regressions = store::version_regressions(root, &accession, &artifacts.versions)?;
        if !self.finish(Stage::Store, regressions) {
            return Ok(None);
        }
        let outcome = store::write_study(root, &artifacts, &lock)?;
        drop(lock);
        self.report.persistent_id = Some(outcome.persistent_id.clone());
        self.report.manifest_sha256 = Some(outcome.manifest_sha256.clone());
        Ok(Some(outcome))
    }
}

/// Checks for bundles submitted as already de-identified: generalized ZIPs
/// and capped ages.
fn verify_deidentified(w: &Work, s: &crate::deid::DeidSettings, missing: &MissingPolicy) -> Vec<Issue> {
    let t = &w.bundle.table;
    let file = data_label(&w.stem);
    let mut out = Vec::new();
    for col in s.zip_columns.iter().chain(&s.age_columns).chain(&s.direct_identifier_columns) {
        if t.column_index(col).is_none() {
            out.push(Issue::error(
                IssueCode::DeidUnknownColumn,
                Location::file(file.as_str()).with_column(col.as_str()),
                format!("configured column {col:?} is not in the table"),
            ));
        }
    }
    let check = |cols: &std::collections::BTreeSet<String>, code, ok: &dyn Fn(&str) -> bool, what: &str| {
        let mut v = Vec::new();
        for col in cols {
            let Some(c) = t.column_index(col) else { continue };
            for (r, cell) in t.column(c).enumerate() {
                if !missing.is_missing(cell) && !ok(cell) {
                    v.push(Issue::error(code, Location::at(file.as_str(), r + 2, col.as_str()), what.to_string()));
                }
            }
        }
        v
    };
    out.extend(check(
        &s.zip_columns,
        IssueCode::DeidBadZip,
        &|c| c.len() == 3 && c.bytes().all(|b| b.is_ascii_digit()),
        "ZIP code is not generalized to three digits",
    ));
    out.extend(check(
        &s.age_columns,
        IssueCode::DeidBadAge,
        &|c| crate::values::parse_integer(c).is_some_and(|a| (0..=91).contains(&a)),
        "age is not a whole number of years within the de-identified range",
    ));
    out.extend(check(
        &s.direct_identifier_columns,
        IssueCode::DeidBadConfig,
        &|c| c == crate::deid::REDACTED,
        "direct identifier is not redacted",
    ));
    crate::issue::sort_by_row_column_code(&mut out);
    out
}

/// Runs every enabled stage in order, stopping at the first stage that
/// reports an error. On acceptance with storage enabled the study is written
/// and the catalog rebuilt.
pub fn run_pipeline(
    study_dir: &Path,
    cfg: &PipelineConfig,
    res: &Resources,
    key: Option<&DeidKey>,
) -> Result<RunOutcome, PipelineError> {
    if cfg.stages.deid && cfg.deid_mode == DeidMode::Transform && key.is_none() {
        return Err(PipelineError::Config("de-identification in transform mode needs a key".into()));
    }
    let mut run = Run {
        cfg,
        res,
        key,
        detectors: builtin_detectors(),
        missing: MissingPolicy::with_sentinels(cfg.missing_sentinels.iter().cloned()),
        report: FeedbackReport::default(),
    };
    let outcome = |run: Run, stored| {
        let mut report = run.report;
        report.finalize();
        Ok(RunOutcome { report, stored })
    };

    let staged = match ingest(study_dir) {
        Ok(s) => s,
        Err(IngestError::Issues(issues)) => {
            run.finish(Stage::Ingest, issues);
            return outcome(run, None);
        }
        Err(IngestError::Io { path, source }) => return Err(PipelineError::Io { path, source }),
    };
    run.report.accession = staged.study.get("accession").and_then(|v| v.as_str()).map(str::to_string);
    run.finish(Stage::Ingest, staged.warnings.clone());
    let mut work: Vec<Work> = staged
        .bundles
        .iter()
        .map(|b| Work {
            stem: b.stem.clone(),
            bundle: b.bundle.clone(),
            meta_instance: b.meta_instance.clone(),
            harmonized: None,
        })
        .collect();
    let study = staged.study.clone();
    let toggles = cfg.stages;

    macro_rules! stage {
        ($enabled:expr, $stage:expr, $call:expr) => {
            if $enabled {
                if !$call {
                    return outcome(run, None);
                }
            } else {
                run.skip($stage);
            }
        };
    }
    stage!(toggles.scan, Stage::Scan, run.scan(&work));
    stage!(toggles.deid, Stage::Deid, run.deid(&mut work));
    stage!(toggles.validate, Stage::BundleValidate, run.validate_bundles(&work));
    stage!(toggles.metadata, Stage::MetadataValidate, run.validate_metadata(&study, &work));
    stage!(toggles.harmonize, Stage::Harmonize, run.harmonize(&mut work));

    if !toggles.store {
        run.skip(Stage::Store);
        run.skip(Stage::Index);
        return outcome(run, None);
    }
    let Some(stored) = run.store(&staged, &study, &mut work)? else {
        return outcome(run, None);
    };
    if toggles.index {
        store::write_catalog(&cfg.store_root)?;
        run.finish(Stage::Index, Vec::new());
    } else {
        run.skip(Stage::Index);
    }
    outcome(run, Some(stored))
}
