//! Study and file metadata: templates, ontology terms and the typed records
//! the rest of the pipeline reads.

mod template;
mod terms;

pub use template::{
    check_template, parse_template, validate_metadata, FieldKind, FieldSpec, Instance, Section, Template,
};
pub use terms::{
    is_absolute_iri, load_term_registry, OfflineTermService, OntologyTerm, RemoteTermService, RemoteUnavailable,
    TermRegistry, TermResolver,
};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::issue::{Issue, IssueCode, Location};
use crate::tabledata::SummaryStats;

pub const CONTEXT_KEY: &str = "@context";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessTier {
    Public,
    Controlled,
}

/// Study-level metadata, the typed view of a validated study instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyMetadata {
    pub accession: String,
    pub title: String,
    pub principal_investigator: String,
    pub program: String,
    pub nih_institute: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doi: Option<String>,
    pub release_date: String,
    pub estimated_cohort_size: u64,
    #[serde(default)]
    pub study_domains: Vec<String>,
    #[serde(default)]
    pub population_focus: Vec<String>,
    #[serde(default)]
    pub data_collection_methods: Vec<String>,
    pub study_design: String,
    pub multi_center: bool,
    #[serde(default)]
    pub sites: Vec<String>,
    #[serde(default)]
    pub data_types: Vec<String>,
    #[serde(default)]
    pub keywords: Vec<String>,
    pub access_tier: AccessTier,
}

impl StudyMetadata {
    pub fn from_instance(instance: &Instance) -> Result<Self, serde_json::Error> {
        serde_json::from_value(Value::Object(instance.clone()))
    }

    pub fn to_instance(&self) -> Instance {
        match serde_json::to_value(self).expect("plain struct serializes") {
            Value::Object(m) => m,
            _ => unreachable!("struct serializes to an object"),
        }
    }
}

/// Reference to an ontology term by IRI, with an optional display label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermRef {
    pub iri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Creator {
    /// Person or organization, as a term IRI.
    pub creator_type: TermRef,
    pub creator_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileMetadata {
    pub file_name: String,
    pub version: u32,
    pub study_accession: String,
    #[serde(default)]
    pub creators: Vec<Creator>,
    #[serde(default)]
    pub subjects: Vec<TermRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<SummaryStats>,
    #[serde(default)]
    pub deid_applied: bool,
    #[serde(default)]
    pub harmonized: bool,
}

impl FileMetadata {
    pub fn new(study_accession: impl Into<String>, file_name: impl Into<String>, version: u32) -> Self {
        FileMetadata {
            file_name: file_name.into(),
            version,
            study_accession: study_accession.into(),
            creators: Vec::new(),
            subjects: Vec::new(),
            summary: None,
            deid_applied: false,
            harmonized: false,
        }
    }
}

/// Recursively rebuilds objects with keys inserted in sorted order, so output
/// is stable whether or not serde_json preserves insertion order.
fn canonical(v: &Value) -> Value {
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            let mut out = Map::new();
            for k in keys {
                out.insert(k.clone(), canonical(&m[k]));
            }
            Value::Object(out)
        }
        Value::Array(a) => Value::Array(a.iter().map(canonical).collect()),
        other => other.clone(),
    }
}

fn with_context(instance: &Instance, tpl: &Template) -> Value {
    let mut ctx = Map::new();
    for f in &tpl.fields {
        ctx.insert(f.name.clone(), Value::String(f.context_iri()));
    }
    let mut doc = instance.clone();
    doc.insert(CONTEXT_KEY.to_string(), Value::Object(ctx));
    canonical(&Value::Object(doc))
}

/// Stable-ordered JSON with a context block naming each template field's IRI.
pub fn serialize_metadata(instance: &Instance, tpl: &Template) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&with_context(instance, tpl)).expect("JSON values serialize");
    out.push(b'\n');
    out
}

/// YAML mirror of [`serialize_metadata`].
pub fn serialize_metadata_yaml(instance: &Instance, tpl: &Template) -> String {
    serde_yaml::to_string(&with_context(instance, tpl)).expect("JSON values serialize to YAML")
}

/// Reads a metadata document, dropping its context block.
pub fn parse_metadata(raw: &[u8], file: &str) -> Result<Instance, Vec<Issue>> {
    match serde_json::from_slice::<Value>(raw) {
        Ok(Value::Object(mut m)) => {
            m.remove(CONTEXT_KEY);
            Ok(m)
        }
        Ok(_) => Err(vec![Issue::error(
            IssueCode::MetaBadDocument,
            Location::file(file),
            "metadata document must be a JSON object",
        )]),
        Err(e) => Err(vec![Issue::error(
            IssueCode::MetaBadDocument,
            Location::file(file),
            format!("bad metadata JSON: {e}"),
        )]),
    }
}
