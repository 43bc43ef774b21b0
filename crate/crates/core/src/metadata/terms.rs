//! Offline ontology term registry.
//!
//! One JSON object per line: `{"iri": "...", "label": "...", "source": "MESH"}`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::issue::{Issue, IssueCode, Location};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologyTerm {
    pub iri: String,
    pub label: String,
    pub source: String,
}

/// Anything that can resolve a term IRI.
pub trait TermResolver: Send + Sync {
    fn resolve(&self, iri: &str) -> Option<&OntologyTerm>;
}

#[derive(Debug, Clone, Default)]
pub struct TermRegistry {
    terms: Vec<OntologyTerm>,
    by_iri: HashMap<String, usize>,
}

impl TermRegistry {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[OntologyTerm] {
        &self.terms
    }
}

impl TermResolver for TermRegistry {
    fn resolve(&self, iri: &str) -> Option<&OntologyTerm> {
        self.by_iri.get(iri).map(|&i| &self.terms[i])
    }
}

pub fn is_absolute_iri(s: &str) -> bool {
    !s.chars().any(char::is_whitespace) && Url::parse(s).is_ok()
}

pub fn load_term_registry(raw: &[u8], source_name: &str) -> Result<TermRegistry, Vec<Issue>> {
    let text = std::str::from_utf8(raw).map_err(|e| {
        vec![Issue::error(IssueCode::TermBadRecord, Location::file(source_name), format!("not UTF-8: {e}"))]
    })?;
    let mut reg = TermRegistry::default();
    let mut issues = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let loc = || Location::row(source_name, i + 1);
        if line.trim().is_empty() {
            continue;
        }
        let term: OntologyTerm = match serde_json::from_str(line) {
            Ok(t) => t,
            Err(e) => {
                issues.push(Issue::error(IssueCode::TermBadRecord, loc(), format!("bad term record: {e}")));
                continue;
            }
        };
        if !is_absolute_iri(&term.iri) {
            issues.push(Issue::error(
                IssueCode::TermBadIri,
                loc(),
                format!("{:?} is not an absolute IRI", term.iri),
            ));
            continue;
        }
        if reg.by_iri.contains_key(&term.iri) {
            issues.push(Issue::error(IssueCode::TermDupIri, loc(), format!("duplicate IRI {:?}", term.iri)));
            continue;
        }
        reg.by_iri.insert(term.iri.clone(), reg.terms.len());
        reg.terms.push(term);
    }
    if issues.is_empty() {
        Ok(reg)
    } else {
        Err(issues)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("remote terminology service at {endpoint} is not available in offline builds")]
pub struct RemoteUnavailable {
    pub endpoint: String,
}

/// Client interface for a remote terminology service. Only the offline stub
/// ships: every lookup reports the service as unavailable.
pub trait RemoteTermService {
    fn lookup(&self, iri: &str) -> Result<OntologyTerm, RemoteUnavailable>;
}

#[derive(Debug, Clone)]
pub struct OfflineTermService {
    pub endpoint: String,
}

impl RemoteTermService for OfflineTermService {
    fn lookup(&self, _iri: &str) -> Result<OntologyTerm, RemoteUnavailable> {
        Err(RemoteUnavailable { endpoint: self.endpoint.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const COVID: &str = "http://purl.bioontology.org/ontology/MESH/D000086382";

    fn line(iri: &str, label: &str) -> String {
        format!("{{\"iri\":\"{iri}\",\"label\":\"{label}\",\"source\":\"MESH\"}}\n")
    }

    #[test]
    fn loads_three_terms() {
        let raw = [line(COVID, "COVID-19"), line("http://x.org/a", "A"), line("http://x.org/b", "B")].concat();
        let reg = load_term_registry(raw.as_bytes(), "t").unwrap();
        assert_eq!(reg.len(), 3);
        assert_eq!(reg.resolve(COVID).unwrap().label, "COVID-19");
        assert!(reg.resolve("http://x.org/c").is_none());
    }

    #[test]
    fn duplicate_and_relative_iris() {
        let raw = [line(COVID, "a"), line(COVID, "b")].concat();
        assert_eq!(load_term_registry(raw.as_bytes(), "t").unwrap_err()[0].code, IssueCode::TermDupIri);
        let raw = line("MESH/D000086382", "rel");
        assert_eq!(load_term_registry(raw.as_bytes(), "t").unwrap_err()[0].code, IssueCode::TermBadIri);
        assert_eq!(load_term_registry(b"{not json", "t").unwrap_err()[0].code, IssueCode::TermBadRecord);
    }

    #[test]
    fn offline_stub_never_resolves() {
        let svc = OfflineTermService { endpoint: "https://terms.example".into() };
        assert!(svc.lookup(COVID).is_err());
    }
}
