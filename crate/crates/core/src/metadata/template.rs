//! Metadata templates and instance validation.

use std::collections::HashSet;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::terms::TermResolver;
use crate::issue::{Issue, IssueCode, Location};
use crate::values;

/// A metadata instance: field name → JSON value.
pub type Instance = Map<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum FieldKind {
    Text {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pattern: Option<String>,
    },
    Integer {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<i64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<i64>,
    },
    Date,
    Boolean,
    Controlled {
        values: Vec<String>,
    },
    Term {
        sources: Vec<String>,
    },
    List {
        item: Box<FieldKind>,
    },
    /// A nested group of fields, such as a creator with type and name.
    Record {
        fields: Vec<FieldSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    #[serde(default)]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iri: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub help: Option<String>,
}

impl FieldSpec {
    pub fn context_iri(&self) -> String {
        self.iri.clone().unwrap_or_else(|| format!("urn:fairhub:field:{}", self.name))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub fields: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub name: String,
    pub version: String,
    pub fields: Vec<FieldSpec>,
    pub sections: Vec<Section>,
}

impl Template {
    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }
}

fn check_fields(fields: &[FieldSpec], prefix: &str, file: &str, out: &mut Vec<Issue>) {
    let mut seen = HashSet::new();
    for f in fields {
        let path = format!("{prefix}{}", f.name);
        let loc = || Location::file(file).with_column(path.as_str());
        if !seen.insert(f.name.as_str()) {
            out.push(Issue::error(IssueCode::TplDupField, loc(), format!("field {path:?} declared twice")));
        }
        check_kind(&f.kind, &path, file, out);
    }
}

fn check_kind(kind: &FieldKind, path: &str, file: &str, out: &mut Vec<Issue>) {
    let bad = |msg: String| Issue::error(IssueCode::TplBadField, Location::file(file).with_column(path), msg);
    match kind {
        FieldKind::Controlled { values } if values.is_empty() => {
            out.push(bad(format!("controlled field {path:?} has an empty value set")))
        }
        FieldKind::Term { sources } if sources.is_empty() => {
            out.push(bad(format!("term field {path:?} lists no ontology sources")))
        }
        FieldKind::Text { pattern: Some(p) } if Regex::new(p).is_err() => {
            out.push(bad(format!("field {path:?} pattern does not compile")))
        }
        FieldKind::List { item } => check_kind(item, path, file, out),
        FieldKind::Record { fields } => check_fields(fields, &format!("{path}."), file, out),
        _ => {}
    }
}

/// Checks template invariants: unique field names, usable kinds, and every
/// top-level field in exactly one section.
pub fn check_template(tpl: &Template) -> Vec<Issue> {
    let file = tpl.name.as_str();
    let mut out = Vec::new();
    check_fields(&tpl.fields, "", file, &mut out);
    let names: HashSet<&str> = tpl.fields.iter().map(|f| f.name.as_str()).collect();
    let mut placed: HashSet<&str> = HashSet::new();
    for s in &tpl.sections {
        for f in &s.fields {
            let loc = || Location::file(file).with_column(f.as_str());
            if !names.contains(f.as_str()) {
                out.push(Issue::error(
                    IssueCode::TplBadSection,
                    loc(),
                    format!("section {:?} lists unknown field {f:?}", s.name),
                ));
            } else if !placed.insert(f.as_str()) {
                out.push(Issue::error(
                    IssueCode::TplBadSection,
                    loc(),
                    format!("field {f:?} appears in more than one section"),
                ));
            }
        }
    }
    for f in &tpl.fields {
        if !placed.contains(f.name.as_str()) {
            out.push(Issue::error(
                IssueCode::TplBadSection,
                Location::file(file).with_column(f.name.as_str()),
                format!("field {:?} belongs to no section", f.name),
            ));
        }
    }
    out
}

pub fn parse_template(raw: &[u8]) -> Result<Template, Vec<Issue>> {
    let tpl: Template = serde_json::from_slice(raw).map_err(|e| {
        vec![Issue::error(IssueCode::TplBadDocument, Location::file("template"), format!("bad template JSON: {e}"))]
    })?;
    let issues = check_template(&tpl);
    if issues.is_empty() {
        Ok(tpl)
    } else {
        Err(issues)
    }
}

struct Validator<'a> {
    file: &'a str,
    reg: &'a dyn TermResolver,
    out: Vec<Issue>,
}

fn is_blank(v: &Value) -> bool {
    match v {
        Value::Null => true,
        Value::String(s) => s.trim().is_empty(),
        Value::Array(a) => a.is_empty(),
        _ => false,
    }
}

fn kind_name(kind: &FieldKind) -> &'static str {
    match kind {
        FieldKind::Text { .. } => "text",
        FieldKind::Integer { .. } => "integer",
        FieldKind::Date => "date (YYYY-MM-DD)",
        FieldKind::Boolean => "boolean",
        FieldKind::Controlled { .. } => "controlled value",
        FieldKind::Term { .. } => "ontology term",
        FieldKind::List { .. } => "list",
        FieldKind::Record { .. } => "record",
    }
}

impl Validator<'_> {
    fn push(&mut self, code: IssueCode, path: &str, msg: String) {
        let issue = Issue::error(code, Location::file(self.file).with_column(path), msg);
        self.out.push(issue);
    }

    fn fields(&mut self, fields: &[FieldSpec], obj: &Map<String, Value>, prefix: &str) {
        for f in fields {
            let path = format!("{prefix}{}", f.name);
            match obj.get(&f.name) {
                Some(v) if !is_blank(v) => self.value(&f.kind, v, &path),
                _ if f.required => {
                    self.push(IssueCode::MetaMissingRequired, &path, format!("required field {path:?} is missing"))
                }
                _ => {}
            }
        }
        for k in obj.keys() {
            if !fields.iter().any(|f| &f.name == k) {
                let path = format!("{prefix}{k}");
                self.out.push(Issue::warning(
                    IssueCode::MetaUnknownField,
                    Location::file(self.file).with_column(path.as_str()),
                    format!("field {path:?} is not defined by the template"),
                ));
            }
        }
    }

    fn bad_kind(&mut self, kind: &FieldKind, path: &str) {
        self.push(IssueCode::MetaBadKind, path, format!("field {path:?} must be a {}", kind_name(kind)));
    }

    fn value(&mut self, kind: &FieldKind, v: &Value, path: &str) {
        match kind {
            FieldKind::Text { pattern } => {
                let Some(s) = v.as_str() else { return self.bad_kind(kind, path) };
                if let Some(p) = pattern {
                    let re = Regex::new(&format!("^(?:{p})$")).expect("template patterns are checked at load");
                    if !re.is_match(s) {
                        self.push(IssueCode::MetaBadValue, path, format!("field {path:?} does not match {p:?}"));
                    }
                }
            }
            FieldKind::Integer { min, max } => {
                let Some(n) = v.as_i64() else { return self.bad_kind(kind, path) };
                if min.is_some_and(|lo| n < lo) || max.is_some_and(|hi| n > hi) {
                    self.push(IssueCode::MetaBadValue, path, format!("field {path:?} is out of range"));
                }
            }
            FieldKind::Date => {
                if v.as_str().and_then(values::parse_date).is_none() {
                    self.bad_kind(kind, path)
                }
            }
            FieldKind::Boolean => {
                if !v.is_boolean() {
                    self.bad_kind(kind, path)
                }
            }
            FieldKind::Controlled { values } => {
                let Some(s) = v.as_str() else { return self.bad_kind(kind, path) };
                if !values.iter().any(|x| x == s) {
                    self.push(IssueCode::MetaBadValue, path, format!("{s:?} is not an allowed value of {path:?}"));
                }
            }
            FieldKind::Term { sources } => {
                let iri = match v {
                    Value::String(s) => Some(s.as_str()),
                    Value::Object(o) => o.get("iri").and_then(Value::as_str),
                    _ => None,
                };
                let Some(iri) = iri else { return self.bad_kind(kind, path) };
                match self.reg.resolve(iri) {
                    Some(t) if sources.iter().any(|s| s == &t.source) => {}
                    Some(t) => self.push(
                        IssueCode::MetaUnresolvedTerm,
                        path,
                        format!("term {iri:?} comes from {} but {path:?} allows {}", t.source, sources.join(", ")),
                    ),
                    None => self.push(
                        IssueCode::MetaUnresolvedTerm,
                        path,
                        format!("term {iri:?} is not in the term registry"),
                    ),
                }
            }
            FieldKind::List { item } => {
                let Some(items) = v.as_array() else { return self.bad_kind(kind, path) };
                for (i, x) in items.iter().enumerate() {
                    self.value(item, x, &format!("{path}[{i}]"));
                }
            }
            FieldKind::Record { fields } => {
                let Some(obj) = v.as_object() else { return self.bad_kind(kind, path) };
                self.fields(fields, obj, &format!("{path}."));
            }
        }
    }
}

/// Validates an instance against a template and term registry. Issues are
/// sorted by field path, then code.
pub fn validate_metadata(instance: &Instance, tpl: &Template, reg: &dyn TermResolver) -> Vec<Issue> {
    let mut v = Validator { file: &tpl.name, reg, out: Vec::new() };
    v.fields(&tpl.fields, instance, "");
    let mut out = v.out;
    out.sort_by(|a, b| (&a.location.column, a.code).cmp(&(&b.location.column, b.code)));
    out
}
