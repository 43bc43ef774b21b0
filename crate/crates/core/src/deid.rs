//! Rule-based de-identification of file bundles under a secret key.
//!
//! | rule                 | transform                                              |
//! |----------------------|--------------------------------------------------------|
//! | direct identifiers   | every cell becomes `[REDACTED]`                        |
//! | ZIP codes            | first three digits; `000` for restricted prefixes      |
//! | dates                | shifted by a keyed offset in ±[1, 180] days            |
//! | ages                 | <1 → 0, 1–20 kept, 21–89 → ±2, ≥90 → 90                |
//! | sites                | `SITE-` + six hex chars of a keyed hash                |
//!
//! Every keyed value is HMAC-SHA256 over `domain || 0x00 || input`, so the
//! same key and input always give the same output.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{Duration, NaiveDate};
use hmac::{Hmac, KeyInit, Mac};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::dictionary::{DataDictionary, Datatype};
use crate::issue::{Issue, IssueCode, Location};
use crate::tabledata::{summarize, FileBundle, MissingPolicy, Table};
use crate::values;

pub const REDACTED: &str = "[REDACTED]";
pub const MIN_KEY_LEN: usize = 16;
pub const MAX_SHIFT_DAYS: i64 = 180;

/// Conventional three-digit ZIP prefixes whose areas hold 20,000 people or
/// fewer. A configurable default; supply a current list for production use.
pub const DEFAULT_RESTRICTED_ZIP3: [&str; 17] = [
    "036", "059", "063", "102", "203", "556", "692", "790", "821", "823", "830", "831", "878", "879", "884",
    "890", "893",
];

const DOMAIN_DATE_SHIFT: &str = "date-shift";
const DOMAIN_AGE_SIGN: &str = "age-sign";
const DOMAIN_SITE: &str = "site";
const DOMAIN_PARTICIPANT: &str = "participant-label";

/// Secret key for keyed transforms. Never printed.
#[derive(Clone, PartialEq, Eq)]
pub struct DeidKey(Vec<u8>);

impl DeidKey {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, DeidError> {
        let bytes = bytes.into();
        if bytes.len() < MIN_KEY_LEN {
            return Err(DeidError::KeyTooShort(bytes.len()));
        }
        Ok(DeidKey(bytes))
    }

    pub fn from_hex(s: &str) -> Result<Self, DeidError> {
        let bytes = hex::decode(s.trim()).map_err(|_| DeidError::KeyNotHex)?;
        DeidKey::new(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for DeidKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DeidKey(<{} bytes>)", self.0.len())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DeidError {
    #[error("de-identification key must be at least {MIN_KEY_LEN} bytes, got {0}")]
    KeyTooShort(usize),
    #[error("de-identification key is not valid hex")]
    KeyNotHex,
}

pub fn keyed_hash(key: &DeidKey, domain: &str, input: &str) -> [u8; 32] {
    let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(key.as_bytes()).expect("HMAC accepts any key length");
    mac.update(domain.as_bytes());
    mac.update(&[0]);
    mac.update(input.as_bytes());
    mac.finalize().into_bytes().into()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DateShiftScope {
    /// One offset for the whole study; every interval is preserved.
    #[default]
    PerStudy,
    /// One offset per participant; intervals across participants change.
    PerParticipant,
}

/// Column assignments and options, as read from the JSON config file. The key
/// is supplied separately.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeidSettings {
    #[serde(default)]
    pub restricted_zip3: Option<BTreeSet<String>>,
    #[serde(default)]
    pub date_shift_scope: DateShiftScope,
    #[serde(default)]
    pub id_column: Option<String>,
    #[serde(default)]
    pub direct_identifier_columns: BTreeSet<String>,
    #[serde(default)]
    pub zip_columns: BTreeSet<String>,
    #[serde(default)]
    pub date_columns: BTreeSet<String>,
    #[serde(default)]
    pub age_columns: BTreeSet<String>,
    #[serde(default)]
    pub site_columns: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub struct DeidConfig {
    pub key: DeidKey,
    pub restricted_zip3: BTreeSet<String>,
    pub date_shift_scope: DateShiftScope,
    pub id_column: Option<String>,
    pub direct_identifier_columns: BTreeSet<String>,
    pub zip_columns: BTreeSet<String>,
    pub date_columns: BTreeSet<String>,
    pub age_columns: BTreeSet<String>,
    pub site_columns: BTreeSet<String>,
}

impl DeidSettings {
    pub fn with_key(self, key: DeidKey) -> DeidConfig {
        DeidConfig {
            key,
            restricted_zip3: self
                .restricted_zip3
                .unwrap_or_else(|| DEFAULT_RESTRICTED_ZIP3.iter().map(|s| s.to_string()).collect()),
            date_shift_scope: self.date_shift_scope,
            id_column: self.id_column,
            direct_identifier_columns: self.direct_identifier_columns,
            zip_columns: self.zip_columns,
            date_columns: self.date_columns,
            age_columns: self.age_columns,
            site_columns: self.site_columns,
        }
    }
}

impl DeidConfig {
    pub fn new(key: DeidKey) -> Self {
        DeidSettings::default().with_key(key)
    }

    fn column_sets(&self) -> [(&'static str, &BTreeSet<String>); 5] {
        [
            ("direct_identifier_columns", &self.direct_identifier_columns),
            ("zip_columns", &self.zip_columns),
            ("date_columns", &self.date_columns),
            ("age_columns", &self.age_columns),
            ("site_columns", &self.site_columns),
        ]
    }

    /// Config invariants that do not depend on a particular table.
    pub fn validate(&self) -> Vec<Issue> {
        let mut out = Vec::new();
        let bad = |msg: String| Issue::error(IssueCode::DeidBadConfig, Location::file("deid-config"), msg);
        let sets = self.column_sets();
        for (i, (name_a, a)) in sets.iter().enumerate() {
            for (name_b, b) in &sets[i + 1..] {
                for col in a.intersection(b) {
                    out.push(bad(format!("column {col:?} is listed in both {name_a} and {name_b}")));
                }
            }
        }
        if self.date_shift_scope == DateShiftScope::PerParticipant && self.id_column.is_none() {
            out.push(bad("per-participant date shifting needs id_column".into()));
        }
        for z in &self.restricted_zip3 {
            if z.len() != 3 || !z.bytes().all(|b| b.is_ascii_digit()) {
                out.push(bad(format!("restricted ZIP prefix {z:?} is not three digits")));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZipOutcome {
    Generalized,
    Zeroed,
    Malformed,
}

/// First three digits of a five-digit ZIP, or `000` when the prefix is
/// restricted or the input is malformed.
pub fn generalize_zip(zip: &str, restricted: &BTreeSet<String>) -> (String, ZipOutcome) {
    if zip.len() != 5 || !zip.bytes().all(|b| b.is_ascii_digit()) {
        return ("000".to_string(), ZipOutcome::Malformed);
    }
    let prefix = &zip[..3];
    if restricted.contains(prefix) {
        ("000".to_string(), ZipOutcome::Zeroed)
    } else {
        (prefix.to_string(), ZipOutcome::Generalized)
    }
}

/// Keyed offset in [-180, -1] ∪ [1, 180].
pub fn derive_date_shift(scope_key: &str, key: &DeidKey) -> i64 {
    let h = keyed_hash(key, DOMAIN_DATE_SHIFT, scope_key);
    let u = u64::from_be_bytes(h[..8].try_into().expect("8 bytes"));
    let span = 2 * MAX_SHIFT_DAYS as u64;
    let m = (u % span) as i64;
    if m < MAX_SHIFT_DAYS {
        -(m + 1)
    } else {
        m - (MAX_SHIFT_DAYS - 1)
    }
}

pub fn shift_date(d: NaiveDate, offset_days: i64) -> NaiveDate {
    d + Duration::days(offset_days)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BadAge;

/// Applies the age rules. Ages of one and above are rounded to the nearest
/// integer before the band is chosen.
pub fn transform_age(age: f64, subject_key: &str, key: &DeidKey) -> Result<i64, BadAge> {
    if !age.is_finite() || age < 0.0 {
        return Err(BadAge);
    }
    if age < 1.0 {
        return Ok(0);
    }
    let years = age.round() as i64;
    Ok(match years {
        ..=20 => years,
        21..=89 => {
            let h = keyed_hash(key, DOMAIN_AGE_SIGN, subject_key);
            if h[0] & 1 == 0 {
                years + 2
            } else {
                years - 2
            }
        }
        _ => 90,
    })
}

pub fn pseudonymize_site(site: &str, key: &DeidKey) -> String {
    let h = keyed_hash(key, DOMAIN_SITE, site.trim());
    format!("SITE-{}", hex::encode(&h[..3]))
}

fn participant_label(id: &str, key: &DeidKey) -> String {
    format!("participant-{}", hex::encode(&keyed_hash(key, DOMAIN_PARTICIPANT, id)[..4]))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeidReport {
    pub cells_redacted: usize,
    pub zips_generalized: usize,
    pub zips_zeroed: usize,
    pub dates_shifted: usize,
    pub ages_altered: usize,
    pub sites_pseudonymized: usize,
    /// Scope label → offset in days. Per-participant scopes are labelled by a
    /// keyed hash, never by the participant id.
    pub shift_offsets: BTreeMap<String, i64>,
    pub deid_applied: bool,
    #[serde(default)]
    pub warnings: Vec<Issue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Rule {
    Redact,
    Zip,
    Date,
    Age,
    Site,
}

#[derive(Default)]
struct ColumnOutcome {
    values: Vec<String>,
    counts: DeidReport,
    offsets: BTreeMap<String, i64>,
    warnings: Vec<Issue>,
}

struct Ctx<'a> {
    cfg: &'a DeidConfig,
    file: &'a str,
    accession: &'a str,
    ids: Option<Vec<&'a str>>,
    missing: &'a MissingPolicy,
}

impl Ctx<'_> {
    fn subject_key(&self, row: usize) -> String {
        match &self.ids {
            Some(ids) => ids[row].to_string(),
            None => format!("{}:row:{}", self.accession, row + 2),
        }
    }

    fn transform_column(&self, rule: Rule, name: &str, cells: Vec<&str>) -> ColumnOutcome {
        let mut o = ColumnOutcome { values: Vec::with_capacity(cells.len()), ..Default::default() };
        let key = &self.cfg.key;
        let warn = |code, row: usize, msg: &str| Issue::warning(code, Location::at(self.file, row + 2, name), msg);
        let study_offset = derive_date_shift(self.accession, key);
        for (r, cell) in cells.into_iter().enumerate() {
            if rule == Rule::Redact {
                o.values.push(REDACTED.to_string());
                o.counts.cells_redacted += 1;
                continue;
            }
            if self.missing.is_missing(cell) && !(rule == Rule::Site && cell.is_empty()) {
                o.values.push(cell.to_string());
                continue;
            }
            let out = match rule {
                Rule::Redact => unreachable!(),
                Rule::Zip => {
                    let (v, outcome) = generalize_zip(cell, &self.cfg.restricted_zip3);
                    match outcome {
                        ZipOutcome::Generalized => o.counts.zips_generalized += 1,
                        ZipOutcome::Zeroed => o.counts.zips_zeroed += 1,
                        ZipOutcome::Malformed => {
                            o.counts.zips_zeroed += 1;
                            o.warnings.push(warn(IssueCode::DeidBadZip, r, "malformed ZIP code replaced by 000"));
                        }
                    }
                    v
                }
                Rule::Date => {
                    let (scope, offset) = match self.cfg.date_shift_scope {
                        DateShiftScope::PerStudy => (self.accession.to_string(), study_offset),
                        DateShiftScope::PerParticipant => {
                            let id = self.subject_key(r);
                            (participant_label(&id, key), derive_date_shift(&id, key))
                        }
                    };
                    let shifted = if let Some(d) = values::parse_date(cell) {
                        Some(shift_date(d, offset).format(values::DATE_FORMAT).to_string())
                    } else {
                        values::parse_datetime(cell)
                            .map(|dt| (dt + Duration::days(offset)).format(values::DATETIME_FORMAT).to_string())
                    };
                    match shifted {
                        Some(v) => {
                            o.counts.dates_shifted += 1;
                            o.offsets.insert(scope, offset);
                            v
                        }
                        None => {
                            o.warnings.push(warn(IssueCode::DeidBadDate, r, "unparseable date blanked"));
                            String::new()
                        }
                    }
                }
                Rule::Age => match values::parse_decimal(cell)
                    .ok_or(BadAge)
                    .and_then(|a| transform_age(a, &self.subject_key(r), key))
                {
                    Ok(age) => {
                        let v = age.to_string();
                        if v != cell {
                            o.counts.ages_altered += 1;
                        }
                        v
                    }
                    Err(BadAge) => {
                        o.warnings.push(warn(IssueCode::DeidBadAge, r, "negative or non-numeric age blanked"));
                        String::new()
                    }
                },
                Rule::Site => {
                    if cell.trim().is_empty() {
                        o.warnings.push(warn(IssueCode::DeidEmptySite, r, "empty site name pseudonymized"));
                    }
                    o.counts.sites_pseudonymized += 1;
                    pseudonymize_site(cell, key)
                }
            };
            o.values.push(out);
        }
        o
    }
}

fn update_dictionary(d: &mut DataDictionary, rule: Rule, column: &str) {
    let Some(v) = d.variables.iter_mut().find(|v| v.id == column) else {
        return;
    };
    match rule {
        Rule::Redact | Rule::Site => {
            v.datatype = Datatype::String;
            v.enumeration.clear();
            v.pattern = None;
            v.min = None;
            v.max = None;
        }
        Rule::Zip => {
            v.datatype = Datatype::String;
            v.enumeration.clear();
            v.pattern = Some(r"\d{3}".to_string());
            v.min = None;
            v.max = None;
        }
        Rule::Age => {
            v.datatype = Datatype::Integer;
            v.enumeration.clear();
            v.pattern = None;
            v.min = None;
            v.max = None;
        }
        Rule::Date => {}
    }
}

/// De-identifies a bundle. Refuses bundles already flagged as de-identified
/// and configs naming columns the table lacks.
pub fn deidentify_bundle(
    b: &FileBundle,
    cfg: &DeidConfig,
    missing: &MissingPolicy,
) -> Result<(FileBundle, DeidReport), Vec<Issue>> {
    let meta = &b.file_metadata;
    let file = meta.file_name.as_str();
    if meta.deid_applied {
        return Err(vec![Issue::error(
            IssueCode::DeidAlreadyApplied,
            Location::file(file),
            "bundle is already flagged as de-identified",
        )]);
    }
    let mut errors = cfg.validate();
    let t = &b.table;
    let named = cfg.column_sets().into_iter().flat_map(|(_, s)| s.iter()).chain(cfg.id_column.iter());
    for col in named {
        if t.column_index(col).is_none() {
            errors.push(Issue::error(
                IssueCode::DeidUnknownColumn,
                Location::file(file).with_column(col.as_str()),
                format!("configured column {col:?} is not in the table"),
            ));
        }
    }
    if !errors.is_empty() {
        errors.dedup();
        return Err(errors);
    }

    let ctx = Ctx {
        cfg,
        file,
        accession: &meta.study_accession,
        ids: cfg.id_column.as_ref().map(|c| {
            let i = t.column_index(c).expect("checked above");
            t.column(i).collect()
        }),
        missing,
    };
    let mut jobs: Vec<(usize, Rule, &str)> = Vec::new();
    for (rule, set) in [
        (Rule::Redact, &cfg.direct_identifier_columns),
        (Rule::Zip, &cfg.zip_columns),
        (Rule::Date, &cfg.date_columns),
        (Rule::Age, &cfg.age_columns),
        (Rule::Site, &cfg.site_columns),
    ] {
        for col in set {
            jobs.push((t.column_index(col).expect("checked above"), rule, col.as_str()));
        }
    }
    jobs.sort();

    let outcomes: Vec<(usize, Rule, &str, ColumnOutcome)> = jobs
        .par_iter()
        .map(|&(c, rule, name)| (c, rule, name, ctx.transform_column(rule, name, t.column(c).collect())))
        .collect();

    let mut table: Table = t.clone();
    let mut dictionary = b.dictionary.clone();
    let mut report = DeidReport { deid_applied: true, ..Default::default() };
    for (c, rule, name, o) in outcomes {
        table.replace_column(c, o.values);
        update_dictionary(&mut dictionary, rule, name);
        let n = o.counts;
        report.cells_redacted += n.cells_redacted;
        report.zips_generalized += n.zips_generalized;
        report.zips_zeroed += n.zips_zeroed;
        report.dates_shifted += n.dates_shifted;
        report.ages_altered += n.ages_altered;
        report.sites_pseudonymized += n.sites_pseudonymized;
        report.shift_offsets.extend(o.offsets);
        report.warnings.extend(o.warnings);
    }
    crate::issue::sort_by_row_column_code(&mut report.warnings);

    let mut file_metadata = meta.clone();
    file_metadata.deid_applied = true;
    if file_metadata.summary.is_some() {
        file_metadata.summary = Some(summarize(&table, &dictionary, missing));
    }
    Ok((FileBundle { table, dictionary, file_metadata }, report))
}
