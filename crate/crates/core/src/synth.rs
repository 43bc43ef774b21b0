//! Deterministic synthetic studies with injected defects and a ground-truth
//! ledger of what was injected where.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::catalog::StudyRecord;
use crate::deid::{DateShiftScope, DeidSettings, DEFAULT_RESTRICTED_ZIP3};
use crate::dictionary::{serialize_dictionary, DataDictionary, Datatype, EnumerationEntry, VariableSpec};
use crate::harmonize::{MappingAction, MappingSet, VariableMapping};
use crate::issue::IssueCode;
use crate::metadata::{AccessTier, Creator, FileMetadata, Instance, StudyMetadata, TermRef};
use crate::pipeline::{BundleConfig, PipelineConfig};
use crate::samples;
use crate::tabledata::{FileBundle, Table};

pub const CORE_VARIABLES: usize = 10;

/// Defects to inject into every bundle (study-level metadata defects into
/// every study). Cell defects go into the non-core columns only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionPlan {
    #[serde(default)]
    pub ssn: usize,
    #[serde(default)]
    pub email: usize,
    #[serde(default)]
    pub phone: usize,
    #[serde(default)]
    pub type_errors: usize,
    #[serde(default)]
    pub enum_violations: usize,
    #[serde(default)]
    pub bounds_violations: usize,
    #[serde(default)]
    pub required_missing: usize,
    #[serde(default)]
    pub metadata_violations: usize,
}

impl InjectionPlan {
    fn cell_total(&self) -> usize {
        self.ssn
            + self.email
            + self.phone
            + self.type_errors
            + self.enum_violations
            + self.bounds_violations
            + self.required_missing
    }
}

fn default_one() -> usize {
    1
}

fn default_rows() -> usize {
    100
}

fn default_extra() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    #[serde(default = "default_one")]
    pub n_studies: usize,
    #[serde(default = "default_one")]
    pub bundles_per_study: usize,
    #[serde(default = "default_rows")]
    pub rows_per_bundle: usize,
    /// Typed columns added after the ten core columns.
    #[serde(default = "default_extra")]
    pub extra_variables: usize,
    #[serde(default)]
    pub injections: InjectionPlan,
    /// Access tier for every study; alternates public/controlled when unset.
    #[serde(default)]
    pub access_tier: Option<AccessTier>,
}

impl SynthSpec {
    pub fn new(seed: u64) -> Self {
        SynthSpec {
            seed,
            n_studies: 1,
            bundles_per_study: 1,
            rows_per_bundle: default_rows(),
            extra_variables: default_extra(),
            injections: InjectionPlan::default(),
            access_tier: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_studies == 0 || self.bundles_per_study == 0 {
            return Err("n_studies and bundles_per_study must be at least 1".into());
        }
        let p = &self.injections;
        if p.cell_total() > 0 && self.extra_variables < EXTRA_KINDS.len() {
            return Err(format!("cell injections need at least {} extra variables", EXTRA_KINDS.len()));
        }
        if p.cell_total() > self.rows_per_bundle * self.extra_variables / 2 {
            return Err("too many cell injections for the table size".into());
        }
        if p.metadata_violations > METADATA_DEFECTS.len() {
            return Err(format!("at most {} metadata violations per study", METADATA_DEFECTS.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefectClass {
    /// The deliberate direct-identifier column, flagged by name.
    PiiColumn,
    Pii,
    Type,
    Enum,
    Bounds,
    RequiredMissing,
    Metadata,
}

/// One expected issue. `row` is 1-based with the header as row 1; metadata
/// defects have no row and use the field name as the column.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Defect {
    pub accession: String,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    pub column: String,
    pub class: DefectClass,
    pub expected_code: IssueCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SynthBundle {
    pub stem: String,
    pub bundle: FileBundle,
    pub meta: Instance,
}

#[derive(Debug, Clone)]
pub struct SynthStudy {
    pub accession: String,
    pub study: Instance,
    pub bundles: Vec<SynthBundle>,
    pub docs: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub spec: SynthSpec,
    pub studies: Vec<SynthStudy>,
    /// Sorted.
    pub ledger: Vec<Defect>,
}

const GIVEN: &[&str] = &[
    "Ada", "Bo", "Carmen", "Dmitri", "Esi", "Farid", "Grace", "Hiro", "Ines", "Jamal", "Keiko", "Luis", "Mara", "Nia",
    "Omar", "Priya", "Quinn", "Rosa", "Sven", "Tariq",
];
const FAMILY: &[&str] = &[
    "Abara", "Berg", "Castillo", "Dube", "Eriksen", "Fofana", "Garcia", "Haddad", "Ivanova", "Jensen", "Kowalski",
    "Lopez", "Mensah", "Nakamura", "Okafor", "Petrov", "Quispe", "Rahman", "Silva", "Tanaka",
];
const WORDS: &[&str] = &[
    "amber", "birch", "cedar", "delta", "ember", "fjord", "grove", "harbor", "iris", "juniper", "kelp", "lumen",
    "maple", "nectar", "orchid", "pebble", "quartz", "reed", "sage", "tundra",
];
const TITLE_TOPICS: &[&str] = &[
    "COVID-19 Testing", "Vaccine Uptake", "Wastewater Surveillance", "Long COVID Symptoms", "Rapid Antigen Screening",
    "Community Health Workers", "Telehealth Access", "School Reopening", "Contact Tracing", "Home Diagnostics",
    "Mental Health", "Essential Workers",
];
const TITLE_GROUPS: &[&str] = &[
    "Safety-Net Patients", "Rural Communities", "Older Adults", "Children", "Tribal Nations", "Migrant Farmworkers",
    "Health Care Workers", "Pregnant Individuals", "Urban Neighborhoods", "College Students",
];
const PROGRAMS: &[&str] = &["RADx-UP", "RADx-rad", "RADx-Tech", "RADx-DHT"];
const INSTITUTES: &[&str] =
    &["NCATS", "NCI", "NHLBI", "NIA", "NIAID", "NIBIB", "NICHD", "NIDA", "NIDDK", "NIEHS", "NIMHD", "NINR", "NLM"];
const DOMAINS: &[&str] = &[
    "Vaccination Rate/Uptake", "Pandemic Perceptions and Decision-Making", "Testing Rate/Uptake",
    "Virological Testing", "Community Engagement", "Diagnostic Technology", "Surveillance",
    "Social Determinants of Health", "Mental Health", "Long COVID", "Wastewater Surveillance", "Digital Health",
];
const POPULATIONS: &[&str] = &[
    "Underserved/Vulnerable Population", "General Population", "Older Adults", "Children",
    "Racial and Ethnic Minorities", "Low Socioeconomic Status", "Health Care Workers",
    "Pregnant or Lactating Individuals",
];
const METHODS: &[&str] = &[
    "Interview or Focus Group", "Survey", "Wearable Device", "Diagnostic Test", "Electronic Health Record",
    "Biospecimen Collection", "Environmental Sampling",
];
const DESIGNS: &[&str] = &[
    "Longitudinal Cohort", "Cross-Sectional", "Randomized Controlled Trial", "Case-Control", "Observational",
    "Interventional", "Other",
];
const DATA_TYPES: &[&str] =
    &["Behavioral", "Clinical", "Electronic Medical Records", "Environmental", "Genomic", "Imaging", "Digital Health", "Other"];
const SITES: &[&str] = &["Clinic A", "Clinic B", "Clinic C", "Clinic D", "Clinic E"];

const COVID_IRI: &str = "http://purl.bioontology.org/ontology/MESH/D000086382";
const PERSON_IRI: &str = "http://vocab.fairdatacollective.org/gdmt/Person";

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items.choose(rng).expect("non-empty list")
}

fn pick_some(rng: &mut ChaCha8Rng, items: &[&str], lo: usize, hi: usize) -> Vec<String> {
    let n = rng.random_range(lo..=hi).min(items.len());
    let mut chosen: Vec<&str> = items.choose_multiple(rng, n).copied().collect();
    chosen.sort();
    chosen.into_iter().map(str::to_string).collect()
}

pub fn accession_for(seed: u64, i: usize) -> String {
    format!("phs{:06}", (seed % 400_000) as usize + 100_000 + i)
}

/// Valid study-level metadata.
pub fn synth_study_metadata(rng: &mut ChaCha8Rng, accession: &str, tier: AccessTier) -> StudyMetadata {
    let release = NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date") + Duration::days(rng.random_range(0..1200));
    StudyMetadata {
        accession: accession.to_string(),
        title: format!(
            "{} {} among {} in {}",
            pick(rng, &["Improving", "Measuring", "Understanding", "Expanding", "Evaluating"]),
            pick(rng, TITLE_TOPICS),
            pick(rng, TITLE_GROUPS),
            pick(rng, &["Los Angeles", "Atlanta", "New Mexico", "Appalachia", "Detroit", "Puerto Rico", "Seattle"]),
        ),
        principal_investigator: format!("{}, {}", pick(rng, FAMILY), pick(rng, GIVEN)),
        program: pick(rng, PROGRAMS).to_string(),
        nih_institute: pick(rng, INSTITUTES).to_string(),
        doi: Some(format!("10.60773/{}-{}", pick(rng, WORDS), rng.random_range(1000..10000))),
        release_date: release.format("%Y-%m-%d").to_string(),
        estimated_cohort_size: (10f64 * 2000f64.powf(rng.random::<f64>())).round() as u64,
        study_domains: pick_some(rng, DOMAINS, 1, 3),
        population_focus: pick_some(rng, POPULATIONS, 1, 2),
        data_collection_methods: pick_some(rng, METHODS, 1, 2),
        study_design: pick(rng, DESIGNS).to_string(),
        multi_center: rng.random_bool(0.5),
        sites: pick_some(rng, SITES, 1, 3),
        data_types: pick_some(rng, DATA_TYPES, 1, 2),
        keywords: pick_some(rng, WORDS, 1, 3),
        access_tier: tier,
    }
}

/// Random catalog records: valid metadata, random variable sets and data
/// file flags.
pub fn synth_records(seed: u64, n: usize) -> Vec<StudyRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vars: Vec<String> = (0..40).map(|i| format!("var_{i:03}")).collect();
    (0..n)
        .map(|i| {
            let tier = if rng.random_bool(0.5) { AccessTier::Public } else { AccessTier::Controlled };
            let mut r = StudyRecord::new(synth_study_metadata(&mut rng, &accession_for(seed, i), tier));
            let k = rng.random_range(0..6);
            r.variables = vars.choose_multiple(&mut rng, k).cloned().collect();
            r.has_data_files = rng.random_bool(0.8);
            r
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ExtraKind {
    Integer,
    Decimal,
    Enum,
    Text,
    Date,
    Boolean,
    DateTime,
}

const EXTRA_KINDS: [ExtraKind; 7] = [
    ExtraKind::Integer,
    ExtraKind::Decimal,
    ExtraKind::Enum,
    ExtraKind::Text,
    ExtraKind::Date,
    ExtraKind::Boolean,
    ExtraKind::DateTime,
];

fn extra_kind(j: usize) -> ExtraKind {
    EXTRA_KINDS[j % EXTRA_KINDS.len()]
}

fn extra_required(j: usize) -> bool {
    j % 3 == 0
}

fn enum_entries(pairs: &[(&str, &str)]) -> Vec<EnumerationEntry> {
    pairs.iter().map(|(c, l)| EnumerationEntry::new(*c, *l)).collect()
}

fn education_entries() -> Vec<EnumerationEntry> {
    samples::education_dictionary().get("edu_years_of_school").expect("sample has education").enumeration.clone()
}

/// The shared dictionary shape: ten core columns then typed extras.
pub fn synth_dictionary(file: &str, extra: usize) -> DataDictionary {
    let mut vars = vec![
        VariableSpec::new("participant_id", "Participant identifier", Datatype::String)
            .required(true)
            .with_pattern(r"P\d{6}"),
        VariableSpec::new("participant_name", "Participant full name", Datatype::String),
        VariableSpec::new("zip_code", "Residential ZIP code", Datatype::String).with_pattern(r"\d{5}"),
        VariableSpec::new("enroll_date", "Enrollment date", Datatype::Date).required(true),
        VariableSpec::new("visit_date", "Visit date", Datatype::Date),
        VariableSpec::new("age", "Age at enrollment", Datatype::Integer)
            .with_units("years")
            .with_bounds(Some(0.0), Some(120.0)),
        VariableSpec::new("site", "Enrolling site", Datatype::String),
        VariableSpec::new("edu_years_of_school", "Highest grade or year of school completed", Datatype::Enum)
            .with_enumeration(education_entries()),
        VariableSpec::new("sex_at_birth", "Sex assigned at birth", Datatype::Enum).with_enumeration(enum_entries(&[
            ("M", "Male"),
            ("F", "Female"),
            ("I", "Intersex"),
            ("U", "Unknown or prefer not to answer"),
        ])),
        VariableSpec::new("custom_score", "Study-specific wellbeing score", Datatype::Integer)
            .with_units("points")
            .with_bounds(Some(0.0), Some(100.0)),
    ];
    debug_assert_eq!(vars.len(), CORE_VARIABLES);
    for j in 0..extra {
        let id = format!("var_{j:03}");
        let label = format!("Measure {j}");
        let v = match extra_kind(j) {
            ExtraKind::Integer => VariableSpec::new(id, label, Datatype::Integer).with_bounds(Some(0.0), Some(1000.0)),
            ExtraKind::Decimal => VariableSpec::new(id, label, Datatype::Decimal).with_bounds(Some(0.0), Some(100.0)),
            ExtraKind::Enum => VariableSpec::new(id, label, Datatype::Enum).with_enumeration(enum_entries(&[
                ("1", "Never"),
                ("2", "Rarely"),
                ("3", "Sometimes"),
                ("4", "Often"),
                ("5", "Always"),
            ])),
            ExtraKind::Text => VariableSpec::new(id, label, Datatype::String),
            ExtraKind::Date => VariableSpec::new(id, label, Datatype::Date),
            ExtraKind::Boolean => VariableSpec::new(id, label, Datatype::Boolean),
            ExtraKind::DateTime => VariableSpec::new(id, label, Datatype::Datetime),
        };
        vars.push(v.required(extra_required(j)));
    }
    DataDictionary::new(file, vars)
}

/// Mapping of the core columns onto the sample codebook.
pub fn synth_mapping() -> MappingSet {
    let map = |src: &str, cde: &str, pairs: &[(&str, &str)]| VariableMapping {
        source_variable: src.into(),
        target_cde: Some(cde.into()),
        action: MappingAction::Map,
        value_map: pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
    };
    let mut education = samples::education_mapping().mappings.remove(0);
    education.source_variable = "edu_years_of_school".into();
    MappingSet {
        scope: "synthetic-core".into(),
        mappings: vec![
            education,
            map("sex_at_birth", "nih_sex", &[("M", "1"), ("F", "2"), ("I", "3"), ("U", "99")]),
            map("age", "nih_age", &[]),
            map("zip_code", "nih_zip_code", &[]),
        ],
    }
}

/// De-identification settings for the core columns.
pub fn synth_deid_settings() -> DeidSettings {
    let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    DeidSettings {
        restricted_zip3: None,
        date_shift_scope: DateShiftScope::PerStudy,
        id_column: Some("participant_id".into()),
        direct_identifier_columns: set(&["participant_name"]),
        zip_columns: set(&["zip_code"]),
        date_columns: set(&["enroll_date", "visit_date"]),
        age_columns: set(&["age"]),
        site_columns: set(&["site"]),
    }
}

fn date_str(d: NaiveDate) -> String {
    d.format("%Y-%m-%d").to_string()
}

fn clean_extra(rng: &mut ChaCha8Rng, kind: ExtraKind) -> String {
    let base = NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date");
    match kind {
        ExtraKind::Integer => rng.random_range(0..=1000).to_string(),
        ExtraKind::Decimal => format!("{:.2}", rng.random_range(0.0..100.0)),
        ExtraKind::Enum => rng.random_range(1..=5).to_string(),
        ExtraKind::Text => format!("{} {}", pick(rng, WORDS), pick(rng, WORDS)),
        ExtraKind::Date => date_str(base + Duration::days(rng.random_range(0..1000))),
        ExtraKind::Boolean => if rng.random_bool(0.5) { "true" } else { "false" }.to_string(),
        ExtraKind::DateTime => format!(
            "{}T{:02}:{:02}:{:02}",
            date_str(base + Duration::days(rng.random_range(0..1000))),
            rng.random_range(0..24),
            rng.random_range(0..60),
            rng.random_range(0..60)
        ),
    }
}

fn core_columns(rng: &mut ChaCha8Rng, rows: usize) -> Vec<Vec<String>> {
    let mut cols: Vec<Vec<String>> = (0..CORE_VARIABLES).map(|_| Vec::with_capacity(rows)).collect();
    let base = NaiveDate::from_ymd_opt(2020, 6, 1).expect("valid date");
    let edu = ["1", "2", "3", "4", "5", "6", "7", "99"];
    for r in 0..rows {
        let enroll = base + Duration::days(rng.random_range(0..700));
        let zip = if rng.random_bool(0.05) {
            format!("{}{:02}", pick(rng, &DEFAULT_RESTRICTED_ZIP3), rng.random_range(0..100))
        } else {
            format!("{:05}", rng.random_range(10_000..100_000))
        };
        let row = [
            format!("P{:06}", r + 1),
            format!("{} {}", pick(rng, GIVEN), pick(rng, FAMILY)),
            zip,
            date_str(enroll),
            date_str(enroll + Duration::days(rng.random_range(0..400))),
            rng.random_range(0..=100).to_string(),
            pick(rng, SITES).to_string(),
            if rng.random_bool(0.05) { String::new() } else { pick(rng, &edu).to_string() },
            pick(rng, &["M", "F", "I", "U"]).to_string(),
            rng.random_range(0..=100).to_string(),
        ];
        for (c, v) in row.into_iter().enumerate() {
            cols[c].push(v);
        }
    }
    cols
}

struct Injection {
    class: DefectClass,
    code: IssueCode,
    detector: Option<&'static str>,
    eligible: fn(usize) -> bool,
    value: fn(&mut ChaCha8Rng, ExtraKind) -> String,
}

fn is_text(j: usize) -> bool {
    extra_kind(j) == ExtraKind::Text
}

fn injections(plan: &InjectionPlan) -> Vec<(usize, Injection)> {
    vec![
        (
            plan.ssn,
            Injection {
                class: DefectClass::Pii,
                code: IssueCode::PiiFinding,
                detector: Some("ssn"),
                eligible: is_text,
                value: |rng, _| {
                    format!(
                        "{:03}-{:02}-{:04}",
                        rng.random_range(100..900),
                        rng.random_range(10..100),
                        rng.random_range(1000..10000)
                    )
                },
            },
        ),
        (
            plan.email,
            Injection {
                class: DefectClass::Pii,
                code: IssueCode::PiiFinding,
                detector: Some("email"),
                eligible: is_text,
                value: |rng, _| format!("{}{}@example.org", pick(rng, WORDS), rng.random_range(1..100)),
            },
        ),
        (
            plan.phone,
            Injection {
                class: DefectClass::Pii,
                code: IssueCode::PiiFinding,
                detector: Some("phone"),
                eligible: is_text,
                value: |rng, _| {
                    format!(
                        "{:03}-{:03}-{:04}",
                        rng.random_range(200..1000),
                        rng.random_range(200..1000),
                        rng.random_range(0..10000)
                    )
                },
            },
        ),
        (
            plan.type_errors,
            Injection {
                class: DefectClass::Type,
                code: IssueCode::DataTypeMismatch,
                detector: None,
                eligible: |j| !matches!(extra_kind(j), ExtraKind::Text | ExtraKind::Enum),
                value: |rng, _| format!("{}?", pick(rng, WORDS)),
            },
        ),
        (
            plan.enum_violations,
            Injection {
                class: DefectClass::Enum,
                code: IssueCode::DataEnumViolation,
                detector: None,
                eligible: |j| extra_kind(j) == ExtraKind::Enum,
                value: |rng, _| rng.random_range(6..100).to_string(),
            },
        ),
        (
            plan.bounds_violations,
            Injection {
                class: DefectClass::Bounds,
                code: IssueCode::DataOutOfBounds,
                detector: None,
                eligible: |j| matches!(extra_kind(j), ExtraKind::Integer | ExtraKind::Decimal),
                value: |rng, kind| match kind {
                    ExtraKind::Integer => rng.random_range(1001..100_000).to_string(),
                    _ => format!("{:.2}", rng.random_range(100.5..1000.0)),
                },
            },
        ),
        (
            plan.required_missing,
            Injection {
                class: DefectClass::RequiredMissing,
                code: IssueCode::DataRequiredMissing,
                detector: None,
                eligible: extra_required,
                value: |_, _| String::new(),
            },
        ),
    ]
}

const METADATA_DEFECTS: [(&str, IssueCode); 7] = [
    ("program", IssueCode::MetaBadValue),
    ("nih_institute", IssueCode::MetaBadValue),
    ("release_date", IssueCode::MetaBadKind),
    ("estimated_cohort_size", IssueCode::MetaBadValue),
    ("title", IssueCode::MetaMissingRequired),
    ("multi_center", IssueCode::MetaBadKind),
    ("doi", IssueCode::MetaBadValue),
];

fn break_field(study: &mut Instance, field: &str) {
    match field {
        "program" => study.insert(field.into(), json!("RADx-XYZ")),
        "nih_institute" => study.insert(field.into(), json!("NIXX")),
        "release_date" => study.insert(field.into(), json!("2023-13-45")),
        "estimated_cohort_size" => study.insert(field.into(), json!(-5)),
        "title" => study.remove(field),
        "multi_center" => study.insert(field.into(), json!("yes")),
        "doi" => study.insert(field.into(), json!("doi:unregistered")),
        _ => unreachable!("known defect field"),
    };
}

fn to_instance<T: Serialize>(v: &T) -> Instance {
    match serde_json::to_value(v).expect("serializes") {
        Value::Object(m) => m,
        _ => unreachable!("records serialize to objects"),
    }
}

pub fn bundle_data_label(stem: &str) -> String {
    format!("bundles/{stem}/data.csv")
}

/// A random eligible cell not used by an earlier injection.
fn free_cell(rng: &mut ChaCha8Rng, used: &mut HashSet<(usize, usize)>, rows: usize, cols: &[usize]) -> Option<(usize, usize)> {
    for _ in 0..64 {
        let cand = (rng.random_range(0..rows), *cols.choose(rng)?);
        if used.insert(cand) {
            return Some(cand);
        }
    }
    let free: Vec<(usize, usize)> =
        (0..rows).flat_map(|r| cols.iter().map(move |&j| (r, j))).filter(|c| !used.contains(c)).collect();
    let cand = *free.choose(rng)?;
    used.insert(cand);
    Some(cand)
}

fn synth_bundle(
    rng: &mut ChaCha8Rng,
    spec: &SynthSpec,
    accession: &str,
    b: usize,
    ledger: &mut Vec<Defect>,
) -> Result<SynthBundle, String> {
    let stem = format!("file{:02}", b + 1);
    let file_name = format!("{stem}.csv");
    let label = bundle_data_label(&stem);
    let rows = spec.rows_per_bundle;
    let dictionary = synth_dictionary(&file_name, spec.extra_variables);
    let mut columns = core_columns(rng, rows);
    for j in 0..spec.extra_variables {
        let kind = extra_kind(j);
        let optional = !extra_required(j);
        columns.push(
            (0..rows)
                .map(|_| if optional && rng.random_bool(0.02) { String::new() } else { clean_extra(rng, kind) })
                .collect(),
        );
    }
    ledger.push(Defect {
        accession: accession.into(),
        file: label.clone(),
        row: Some(1),
        column: "participant_name".into(),
        class: DefectClass::PiiColumn,
        expected_code: IssueCode::PiiFinding,
        detector: Some("column_name".into()),
    });

    let mut used = HashSet::new();
    for (count, inj) in injections(&spec.injections) {
        let cols: Vec<usize> = (0..spec.extra_variables).filter(|&j| (inj.eligible)(j)).collect();
        for _ in 0..count {
            let (r, j) = free_cell(rng, &mut used, rows, &cols)
                .ok_or_else(|| format!("no free cell left for {:?} injections in {accession}/{stem}", inj.class))?;
            let value = (inj.value)(rng, extra_kind(j));
            columns[CORE_VARIABLES + j][r] = value;
            ledger.push(Defect {
                accession: accession.into(),
                file: label.clone(),
                row: Some(r + 2),
                column: format!("var_{j:03}"),
                class: inj.class,
                expected_code: inj.code,
                detector: inj.detector.map(str::to_string),
            });
        }
    }

    let header = dictionary.variables.iter().map(|v| v.id.clone()).collect();
    let table = Table::from_columns(header, columns);
    let file_metadata = FileMetadata {
        creators: vec![Creator {
            creator_type: TermRef { iri: PERSON_IRI.into(), label: Some("Person".into()) },
            creator_name: format!("{} {}", pick(rng, GIVEN), pick(rng, FAMILY)),
        }],
        subjects: vec![TermRef { iri: COVID_IRI.into(), label: Some("COVID-19".into()) }],
        ..FileMetadata::new(accession, file_name, 1)
    };
    let meta = to_instance(&file_metadata);
    Ok(SynthBundle { stem, bundle: FileBundle { table, dictionary, file_metadata }, meta })
}

/// Generates the whole corpus in memory. Identical specs give identical
/// corpora.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus, String> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut ledger = Vec::new();
    let mut studies = Vec::new();
    for i in 0..spec.n_studies {
        let accession = accession_for(spec.seed, i);
        let tier = spec.access_tier.unwrap_or(if i % 2 == 0 { AccessTier::Public } else { AccessTier::Controlled });
        let meta = synth_study_metadata(&mut rng, &accession, tier);
        let mut study = meta.to_instance();
        let mut defects: Vec<(&str, IssueCode)> = METADATA_DEFECTS.to_vec();
        defects.shuffle(&mut rng);
        for (field, code) in defects.into_iter().take(spec.injections.metadata_violations) {
            break_field(&mut study, field);
            ledger.push(Defect {
                accession: accession.clone(),
                file: "study.json".into(),
                row: None,
                column: field.into(),
                class: DefectClass::Metadata,
                expected_code: code,
                detector: None,
            });
        }
        let bundles = (0..spec.bundles_per_study)
            .map(|b| synth_bundle(&mut rng, spec, &accession, b, &mut ledger))
            .collect::<Result<_, _>>()?;
        let docs = vec![(
            "protocol.txt".to_string(),
            format!("Study protocol for {accession}.\nSynthetic data; no real participants.\n"),
        )];
        studies.push(SynthStudy { accession, study, bundles, docs });
    }
    ledger.sort();
    Ok(SynthCorpus { spec: spec.clone(), studies, ledger })
}

fn write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    fs::write(path, bytes)
}

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializes");
    out.push(b'\n');
    out
}

/// The pipeline config written next to a corpus.
pub fn synth_pipeline_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::new("store");
    cfg.codebook = Some(PathBuf::from("resources/codebook.json"));
    cfg.study_template = Some(PathBuf::from("resources/study-template.json"));
    cfg.file_template = Some(PathBuf::from("resources/file-template.json"));
    cfg.term_registry = Some(PathBuf::from("resources/terms.jsonl"));
    cfg.default_bundle = BundleConfig { deid: synth_deid_settings(), mapping: Some(PathBuf::from("resources/mapping.json")) };
    cfg
}

/// Writes a study in the submission layout.
pub fn write_study(s: &SynthStudy, dir: &Path) -> io::Result<()> {
    write(&dir.join("study.json"), &pretty(&s.study))?;
    for (name, text) in &s.docs {
        write(&dir.join("docs").join(name), text.as_bytes())?;
    }
    for b in &s.bundles {
        let bd = dir.join("bundles").join(&b.stem);
        write(&bd.join("data.csv"), &b.bundle.table.to_csv())?;
        write(&bd.join("dict.csv"), &serialize_dictionary(&b.bundle.dictionary))?;
        write(&bd.join("meta.json"), &pretty(&b.meta))?;
    }
    Ok(())
}

/// ```text
/// <out>/ledger.json  <out>/spec.json  <out>/pipeline.json
/// <out>/resources/{codebook.json, mapping.json, study-template.json, file-template.json, terms.jsonl}
/// <out>/studies/<accession>/...
/// ```
pub fn write_corpus(c: &SynthCorpus, out: &Path) -> io::Result<()> {
    for s in &c.studies {
        write_study(s, &out.join("studies").join(&s.accession))?;
    }
    let res = out.join("resources");
    write(&res.join("codebook.json"), samples::CODEBOOK_JSON.as_bytes())?;
    write(&res.join("study-template.json"), samples::STUDY_TEMPLATE_JSON.as_bytes())?;
    write(&res.join("file-template.json"), samples::FILE_TEMPLATE_JSON.as_bytes())?;
    write(&res.join("terms.jsonl"), samples::TERMS_JSONL.as_bytes())?;
    write(&res.join("mapping.json"), &pretty(&synth_mapping()))?;
    write(&out.join("pipeline.json"), &pretty(&synth_pipeline_config()))?;
    write(&out.join("spec.json"), &pretty(&c.spec))?;
    write(&out.join("ledger.json"), &pretty(&c.ledger))
}

pub fn synth_generate(spec: &SynthSpec, out: &Path) -> Result<SynthCorpus, String> {
    let corpus = generate(spec)?;
    write_corpus(&corpus, out).map_err(|e| format!("writing {}: {e}", out.display()))?;
    Ok(corpus)
}

/// Ledger entries grouped by data file label, for per-bundle comparisons.
pub fn ledger_by_file(ledger: &[Defect]) -> BTreeMap<(String, String), Vec<&Defect>> {
    let mut out: BTreeMap<(String, String), Vec<&Defect>> = BTreeMap::new();
    for d in ledger {
        out.entry((d.accession.clone(), d.file.clone())).or_default().push(d);
    }
    out
}
