//! Pattern-based screening for personal identifiers in data tables.
//!
//! Cell detectors run a regular expression over every cell; column-name
//! detectors look for telltale substrings in the header. This is a screening
//! gate with known precision limits: it finds well-formed identifiers and
//! nothing that needs context to recognise.

use rayon::prelude::*;
use regex::{Regex, RegexBuilder, RegexSet};
use serde::{Deserialize, Serialize};

use crate::issue::{Issue, IssueCode, Location, Severity};
use crate::tabledata::Table;

const CHUNK_ROWS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    CellPattern,
    ColumnName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    Medium,
    High,
}

#[derive(Debug, Clone)]
pub struct Detector {
    pub id: String,
    pub kind: DetectorKind,
    pub pattern: Regex,
    pub confidence: Confidence,
}

impl Detector {
    pub fn new(id: &str, kind: DetectorKind, pattern: &str, confidence: Confidence) -> Result<Self, regex::Error> {
        let pattern = RegexBuilder::new(pattern).case_insensitive(kind == DetectorKind::ColumnName).build()?;
        Ok(Detector { id: id.to_string(), kind, pattern, confidence })
    }
}

const STREET_SUFFIXES: &str = "street|st|avenue|ave|road|rd|boulevard|blvd|lane|ln|drive|dr|court|ct|way|place|pl|terrace|circle|highway|hwy|parkway|pkwy";

/// The shipped detector set.
pub fn builtin_detectors() -> Vec<Detector> {
    use Confidence::*;
    use DetectorKind::*;
    let address = format!(r"(?i)\b\d{{1,6}}\s+(?:[a-z0-9.'-]+\s+){{0,4}}(?:{STREET_SUFFIXES})\b");
    let specs: Vec<(&str, DetectorKind, String, Confidence)> = vec![
        ("ssn", CellPattern, r"\b\d{3}-\d{2}-\d{4}\b".into(), High),
        ("email", CellPattern, r"\b[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}\b".into(), High),
        ("phone", CellPattern, r"(?:\+?1[-. ]?)?(?:\(\d{3}\)\s?|\b\d{3}[-. ])\d{3}[-. ]\d{4}\b".into(), High),
        ("zip4", CellPattern, r"\b\d{5}-\d{4}\b".into(), Medium),
        ("street_address", CellPattern, address, Medium),
        ("column_name", ColumnName, "name".into(), Medium),
        ("column_ssn", ColumnName, "ssn".into(), Medium),
        ("column_address", ColumnName, "address".into(), Medium),
        ("column_phone", ColumnName, "phone".into(), Medium),
        ("column_email", ColumnName, "email".into(), Medium),
        ("column_dob", ColumnName, "dob".into(), Medium),
    ];
    specs
        .into_iter()
        .map(|(id, kind, pattern, conf)| Detector::new(id, kind, &pattern, conf).expect("builtin pattern compiles"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub detector: String,
    /// 1-based, header is row 1.
    pub row: usize,
    pub column: String,
    /// First and last character of the match, the rest masked.
    pub excerpt: String,
    pub confidence: Confidence,
}

impl Finding {
    pub fn to_issue(&self, file: &str, severity: Severity) -> Issue {
        Issue {
            severity,
            code: IssueCode::PiiFinding,
            location: Location::at(file, self.row, self.column.as_str()),
            message: format!(
                "possible {} ({} confidence): {}",
                self.detector,
                match self.confidence {
                    Confidence::High => "high",
                    Confidence::Medium => "medium",
                },
                self.excerpt
            ),
        }
    }
}

/// Keeps the first and last character and stars out everything between.
/// Matches of two characters or fewer are fully masked.
pub fn mask(token: &str) -> String {
    let chars: Vec<char> = token.chars().collect();
    if chars.len() <= 2 {
        return "*".repeat(chars.len().max(1));
    }
    let mut s = String::with_capacity(token.len());
    s.push(chars[0]);
    s.extend(std::iter::repeat_n('*', chars.len() - 2));
    s.push(chars[chars.len() - 1]);
    s
}

fn sort_findings(f: &mut [Finding]) {
    f.sort_by(|a, b| (a.row, &a.column, &a.detector).cmp(&(b.row, &b.column, &b.detector)));
}

/// Tests every cell against every cell detector and every column name against
/// every column-name detector. At most one finding per (cell, detector).
/// Sorted by (row, column, detector id).
pub fn scan_table(t: &Table, detectors: &[Detector]) -> Vec<Finding> {
    let mut findings = Vec::new();
    for name in t.header() {
        for d in detectors.iter().filter(|d| d.kind == DetectorKind::ColumnName) {
            if let Some(m) = d.pattern.find(name) {
                findings.push(Finding {
                    detector: d.id.clone(),
                    row: 1,
                    column: name.clone(),
                    excerpt: mask(m.as_str()),
                    confidence: d.confidence,
                });
            }
        }
    }

    let cell_detectors: Vec<&Detector> = detectors.iter().filter(|d| d.kind == DetectorKind::CellPattern).collect();
    if !cell_detectors.is_empty() {
        let set = RegexSet::new(cell_detectors.iter().map(|d| d.pattern.as_str()))
            .expect("patterns already compiled individually");
        let n = t.n_rows();
        let chunks: Vec<Vec<Finding>> = (0..n.div_ceil(CHUNK_ROWS))
            .into_par_iter()
            .map(|c| {
                let mut out = Vec::new();
                for r in c * CHUNK_ROWS..((c + 1) * CHUNK_ROWS).min(n) {
                    for (col, cell) in t.row(r).iter().enumerate() {
                        if cell.is_empty() {
                            continue;
                        }
                        for k in set.matches(cell).iter() {
                            let d = cell_detectors[k];
                            let m = d.pattern.find(cell).expect("set reported a match");
                            out.push(Finding {
                                detector: d.id.clone(),
                                row: r + 2,
                                column: t.header()[col].clone(),
                                excerpt: mask(m.as_str()),
                                confidence: d.confidence,
                            });
                        }
                    }
                }
                out
            })
            .collect();
        findings.extend(chunks.into_iter().flatten());
    }
    sort_findings(&mut findings);
    findings
}

/// True when any finding would fail a pipeline run on its own.
pub fn has_blocking(findings: &[Finding], detectors: &[Detector]) -> bool {
    findings.iter().any(|f| is_blocking(f, detectors))
}

/// High-confidence cell findings block; column-name findings never do.
pub fn is_blocking(f: &Finding, detectors: &[Detector]) -> bool {
    f.confidence == Confidence::High
        && detectors.iter().any(|d| d.id == f.detector && d.kind == DetectorKind::CellPattern)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabledata::parse_table;

    fn scan(csv: &str) -> Vec<Finding> {
        scan_table(&parse_table(csv.as_bytes(), "t").unwrap(), &builtin_detectors())
    }

    #[test]
    fn builtin_set_shape() {
        let ds = builtin_detectors();
        assert!(ds.iter().any(|d| d.id == "ssn"));
        let ids: std::collections::HashSet<_> = ds.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids.len(), ds.len());
        for want in ["name", "ssn", "address", "phone", "email", "dob"] {
            assert!(ds.iter().any(|d| d.kind == DetectorKind::ColumnName && d.pattern.as_str() == want));
        }
    }

    #[test]
    fn ssn_cell() {
        let f = scan("note\n123-45-6789\n");
        assert_eq!(f.len(), 1);
        assert_eq!((f[0].detector.as_str(), f[0].confidence, f[0].row), ("ssn", Confidence::High, 2));
        assert_eq!(f[0].excerpt, "1*********9");
    }

    #[test]
    fn email_cell() {
        let f = scan("contact\njane.doe@example.org\n");
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].detector, "email");
        assert!(!f[0].excerpt.contains("jane.doe@example.org"));
    }

    #[test]
    fn phone_zip_and_address() {
        let f = scan("x\n(555) 123-4567\n555.123.4567\n94305-1234\n12 Main Street\n");
        let got: Vec<_> = f.iter().map(|f| (f.row, f.detector.as_str())).collect();
        assert_eq!(got, vec![(2, "phone"), (3, "phone"), (4, "zip4"), (5, "street_address")]);
    }

    #[test]
    fn clean_table_has_no_findings() {
        assert!(scan("x,y,visit\n1,2.5,2021-03-10\n3,4.75,2020-02-29\n100000,-3,1999-12-31\n").is_empty());
    }

    #[test]
    fn column_names_are_medium_and_non_blocking() {
        let ds = builtin_detectors();
        let t = parse_table(b"Participant_Name,DOB_text\nx,y\n", "t").unwrap();
        let f = scan_table(&t, &ds);
        let got: Vec<_> = f.iter().map(|f| (f.row, f.column.as_str(), f.detector.as_str())).collect();
        assert_eq!(got, vec![(1, "DOB_text", "column_dob"), (1, "Participant_Name", "column_name")]);
        assert!(f.iter().all(|f| f.confidence == Confidence::Medium));
        assert!(!has_blocking(&f, &ds));
    }

    #[test]
    fn masking_never_reveals_token() {
        assert_eq!(mask("ab"), "**");
        assert_eq!(mask("abc"), "a*c");
        assert_eq!(mask(""), "*");
    }
}
