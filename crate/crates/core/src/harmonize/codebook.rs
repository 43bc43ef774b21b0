use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::dictionary::{Datatype, EnumerationEntry};
use crate::issue::{Issue, IssueCode, Location};

/// A common data element: a standard variable with its allowed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cde {
    pub name: String,
    pub label: String,
    pub category: String,
    pub datatype: Datatype,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
    #[serde(default)]
    pub enumeration: Vec<EnumerationEntry>,
}

impl Cde {
    pub fn is_categorical(&self) -> bool {
        self.datatype == Datatype::Enum
    }

    pub fn label_of(&self, code: &str) -> Option<&str> {
        self.enumeration.iter().find(|e| e.code == code).map(|e| e.label.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub version: String,
    pub categories: Vec<String>,
    pub cdes: Vec<Cde>,
}

impl Codebook {
    pub fn get(&self, name: &str) -> Option<&Cde> {
        self.cdes.iter().find(|c| c.name == name)
    }

    pub fn in_category<'a>(&'a self, category: &'a str) -> impl Iterator<Item = &'a Cde> + 'a {
        self.cdes.iter().filter(move |c| c.category == category)
    }
}

pub fn check_codebook(cb: &Codebook) -> Vec<Issue> {
    const FILE: &str = "codebook";
    let mut out = Vec::new();
    if cb.categories.is_empty() {
        out.push(Issue::error(IssueCode::CbBadDocument, Location::file(FILE), "codebook declares no categories"));
    }
    let mut cats = HashSet::new();
    for c in &cb.categories {
        if !cats.insert(c.as_str()) {
            out.push(Issue::error(
                IssueCode::CbDupCategory,
                Location::file(FILE),
                format!("category {c:?} declared twice"),
            ));
        }
    }
    let mut names = HashSet::new();
    for cde in &cb.cdes {
        let loc = || Location::file(FILE).with_column(cde.name.as_str());
        if !names.insert(cde.name.as_str()) {
            out.push(Issue::error(IssueCode::CbDupName, loc(), format!("CDE {:?} defined twice", cde.name)));
        }
        if !cats.contains(cde.category.as_str()) {
            out.push(Issue::error(
                IssueCode::CbBadCategory,
                loc(),
                format!("CDE {:?} uses undeclared category {:?}", cde.name, cde.category),
            ));
        }
        if cde.is_categorical() == cde.enumeration.is_empty() {
            out.push(Issue::error(
                IssueCode::CbBadCde,
                loc(),
                format!("CDE {:?} must have an enumeration iff it is categorical", cde.name),
            ));
        }
    }
    out
}

pub fn parse_codebook(raw: &[u8]) -> Result<Codebook, Vec<Issue>> {
    let cb: Codebook = serde_json::from_slice(raw).map_err(|e| {
        vec![Issue::error(IssueCode::CbBadDocument, Location::file("codebook"), format!("bad codebook JSON: {e}"))]
    })?;
    let issues = check_codebook(&cb);
    if issues.is_empty() {
        Ok(cb)
    } else {
        Err(issues)
    }
}
