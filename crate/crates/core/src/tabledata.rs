//! Data files: parsing, conformance against a dictionary, and summary
//! statistics.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::csvio;
use crate::dictionary::{DataDictionary, Datatype, VariableSpec};
use crate::issue::{sort_by_row_column_code, Issue, IssueCode, Location};
use crate::metadata::FileMetadata;
use crate::values;

/// Rows per parallel validation chunk.
const CHUNK_ROWS: usize = 4096;

/// A rectangular table of string cells, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    header: Vec<String>,
    cells: Vec<String>,
}

impl Table {
    /// Builds a table, checking rectangularity and distinct column names.
    pub fn new(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self, Vec<Issue>> {
        let mut issues = header_issues("table", &header);
        let width = header.len();
        let mut cells = Vec::with_capacity(width * rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != width {
                issues.push(ragged("table", i + 2, width, row.len()));
            } else {
                cells.extend(row);
            }
        }
        if issues.is_empty() {
            Ok(Table { header, cells })
        } else {
            Err(issues)
        }
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn width(&self) -> usize {
        self.header.len()
    }

    pub fn n_rows(&self) -> usize {
        if self.header.is_empty() {
            0
        } else {
            self.cells.len() / self.header.len()
        }
    }

    pub fn row(&self, i: usize) -> &[String] {
        let w = self.width();
        &self.cells[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[String]> + '_ {
        let w = self.width().max(1);
        self.cells.chunks(w).take(self.n_rows())
    }

    pub fn cell(&self, row: usize, col: usize) -> &str {
        &self.cells[row * self.width() + col]
    }

    pub fn set_cell(&mut self, row: usize, col: usize, value: String) {
        let w = self.width();
        self.cells[row * w + col] = value;
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = &str> + '_ {
        self.rows().map(move |r| r[col].as_str())
    }

    /// Replaces a whole column.
    pub fn replace_column(&mut self, col: usize, values: Vec<String>) {
        assert_eq!(values.len(), self.n_rows(), "column length must equal row count");
        let w = self.width();
        for (r, v) in values.into_iter().enumerate() {
            self.cells[r * w + col] = v;
        }
    }

    /// Builds a table from columns of equal length. Used by transforms that
    /// work column-wise.
    pub fn from_columns(header: Vec<String>, columns: Vec<Vec<String>>) -> Self {
        assert_eq!(header.len(), columns.len());
        let n = columns.first().map_or(0, Vec::len);
        let w = header.len();
        let mut cells = vec![String::new(); n * w];
        for (c, column) in columns.into_iter().enumerate() {
            assert_eq!(column.len(), n, "ragged columns");
            for (r, v) in column.into_iter().enumerate() {
                cells[r * w + c] = v;
            }
        }
        Table { header, cells }
    }

    pub fn into_columns(self) -> (Vec<String>, Vec<Vec<String>>) {
        let n = self.n_rows();
        let w = self.width();
        let mut columns: Vec<Vec<String>> = (0..w).map(|_| Vec::with_capacity(n)).collect();
        for (i, v) in self.cells.into_iter().enumerate() {
            columns[i % w].push(v);
        }
        (self.header, columns)
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csvio::writer();
        w.write_record(&self.header).expect("in-memory write");
        for row in self.rows() {
            w.write_record(row).expect("in-memory write");
        }
        csvio::finish(w)
    }
}

fn ragged(file: &str, row: usize, width: usize, found: usize) -> Issue {
    Issue::error(
        IssueCode::DataRaggedRow,
        Location::row(file, row),
        format!("expected {width} cells, found {found}"),
    )
}

fn header_issues(file: &str, header: &[String]) -> Vec<Issue> {
    let mut seen = HashSet::new();
    header
        .iter()
        .filter(|h| !seen.insert(h.as_str()))
        .map(|h| {
            Issue::error(
                IssueCode::DataDupColumn,
                Location::at(file, 1, h.as_str()),
                format!("column {h:?} appears more than once"),
            )
        })
        .collect()
}

/// Parses a CSV data file whose first record is the header.
pub fn parse_table(raw: &[u8], file: &str) -> Result<Table, Vec<Issue>> {
    let text = csvio::decode(raw).map_err(|e| {
        vec![Issue::error(
            IssueCode::DataBadEncoding,
            Location::file(file),
            format!("data file is not valid UTF-8: {e}"),
        )]
    })?;
    let mut records = csvio::records(text);
    let header: Vec<String> = match records.next() {
        Some(h) if !(h.len() == 1 && h[0].is_empty()) => h.iter().map(str::to_string).collect(),
        _ => {
            return Err(vec![Issue::error(IssueCode::DataEmpty, Location::file(file), "data file is empty")])
        }
    };
    let mut issues = header_issues(file, &header);
    let width = header.len();
    let mut cells = Vec::with_capacity(width * (text.len() / (width * 4).max(1)));
    for (i, rec) in records.enumerate() {
        if rec.len() != width {
            issues.push(ragged(file, i + 2, width, rec.len()));
            continue;
        }
        cells.extend(rec.iter().map(str::to_string));
    }
    if issues.is_empty() {
        Ok(Table { header, cells })
    } else {
        sort_by_row_column_code(&mut issues);
        Err(issues)
    }
}

/// Which cell values count as missing. The empty string always does.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingPolicy {
    #[serde(default)]
    pub sentinels: Vec<String>,
}

impl MissingPolicy {
    pub fn with_sentinels<I, S>(sentinels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        MissingPolicy { sentinels: sentinels.into_iter().map(Into::into).collect() }
    }

    pub fn is_missing(&self, cell: &str) -> bool {
        cell.is_empty() || self.sentinels.iter().any(|s| s == cell)
    }
}

struct ColumnCheck<'a> {
    name: &'a str,
    spec: &'a VariableSpec,
    enum_codes: HashSet<&'a str>,
    pattern: Option<Regex>,
}

impl ColumnCheck<'_> {
    fn check(&self, file: &str, row: usize, cell: &str, missing: &MissingPolicy, out: &mut Vec<Issue>) {
        let loc = || Location::at(file, row, self.name);
        let spec = self.spec;
        if missing.is_missing(cell) {
            if spec.required {
                out.push(Issue::error(
                    IssueCode::DataRequiredMissing,
                    loc(),
                    format!("required variable {:?} is missing", spec.id),
                ));
            }
            return;
        }
        let numeric = match spec.datatype {
            Datatype::Integer => match values::parse_integer(cell) {
                Some(v) => Some(v as f64),
                None => return out.push(mismatch(loc(), spec.datatype)),
            },
            Datatype::Decimal => match values::parse_decimal(cell) {
                Some(v) => Some(v),
                None => return out.push(mismatch(loc(), spec.datatype)),
            },
            Datatype::Date if values::parse_date(cell).is_none() => {
                return out.push(mismatch(loc(), spec.datatype))
            }
            Datatype::Datetime if values::parse_datetime(cell).is_none() => {
                return out.push(mismatch(loc(), spec.datatype))
            }
            Datatype::Boolean if values::parse_bool(cell).is_none() => {
                return out.push(mismatch(loc(), spec.datatype))
            }
            Datatype::Enum if !self.enum_codes.contains(cell) => {
                return out.push(Issue::error(
                    IssueCode::DataEnumViolation,
                    loc(),
                    format!("value is not an enumerated code of {:?}", spec.id),
                ))
            }
            _ => None,
        };
        if let Some(v) = numeric {
            let below = spec.min.is_some_and(|lo| v < lo);
            let above = spec.max.is_some_and(|hi| v > hi);
            if below || above {
                out.push(Issue::error(
                    IssueCode::DataOutOfBounds,
                    loc(),
                    format!(
                        "value outside [{}, {}]",
                        spec.min.map_or("-inf".into(), |x| x.to_string()),
                        spec.max.map_or("inf".into(), |x| x.to_string())
                    ),
                ));
            }
        }
        if let Some(re) = &self.pattern {
            if !re.is_match(cell) {
                out.push(Issue::error(
                    IssueCode::DataPatternMismatch,
                    loc(),
                    format!("value does not match pattern of {:?}", spec.id),
                ));
            }
        }
    }
}

fn mismatch(loc: Location, datatype: Datatype) -> Issue {
    Issue::error(IssueCode::DataTypeMismatch, loc, format!("value is not a valid {datatype}"))
}

#[derive(Debug, Clone, Default)]
pub struct ValidationOptions {
    pub missing: MissingPolicy,
    /// File label used in issue locations.
    pub file: String,
}

impl ValidationOptions {
    pub fn for_file(file: impl Into<String>) -> Self {
        ValidationOptions { file: file.into(), ..Default::default() }
    }
}

/// Checks every cell and column of `t` against `d`. Issues are sorted by
/// (row, column, code); the result does not depend on how rows are split
/// across threads.
pub fn validate_against_dictionary(t: &Table, d: &DataDictionary, opts: &ValidationOptions) -> Vec<Issue> {
    let file = opts.file.as_str();
    let mut issues = Vec::new();
    let specs: HashMap<&str, &VariableSpec> = d.variables.iter().map(|v| (v.id.as_str(), v)).collect();
    let mut checks: Vec<Option<ColumnCheck>> = Vec::with_capacity(t.width());
    for name in t.header() {
        match specs.get(name.as_str()) {
            Some(spec) => checks.push(Some(ColumnCheck {
                name,
                spec,
                enum_codes: spec.enumeration.iter().map(|e| e.code.as_str()).collect(),
                pattern: spec.pattern.as_deref().and_then(|p| Regex::new(&format!("^(?:{p})$")).ok()),
            })),
            None => {
                issues.push(Issue::error(
                    IssueCode::DataUndeclaredVariable,
                    Location::at(file, 1, name.as_str()),
                    format!("column {name:?} is not declared in the dictionary"),
                ));
                checks.push(None);
            }
        }
    }
    let present: HashSet<&str> = t.header().iter().map(String::as_str).collect();
    for v in &d.variables {
        if !present.contains(v.id.as_str()) {
            issues.push(Issue::warning(
                IssueCode::DataMissingVariable,
                Location::at(file, 1, v.id.as_str()),
                format!("declared variable {:?} has no column", v.id),
            ));
        }
    }

    let n = t.n_rows();
    let chunks: Vec<Vec<Issue>> = (0..n.div_ceil(CHUNK_ROWS))
        .into_par_iter()
        .map(|c| {
            let mut out = Vec::new();
            for r in c * CHUNK_ROWS..((c + 1) * CHUNK_ROWS).min(n) {
                for (cell, check) in t.row(r).iter().zip(&checks) {
                    if let Some(check) = check {
                        check.check(file, r + 2, cell, &opts.missing, &mut out);
                    }
                }
            }
            out
        })
        .collect();
    issues.extend(chunks.into_iter().flatten());
    sort_by_row_column_code(&mut issues);
    issues
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSummary {
    pub name: String,
    pub missing: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n_records: usize,
    pub n_variables: usize,
    #[serde(default)]
    pub variables: Vec<VariableSummary>,
}

/// Counts, missingness, and min/max/mean of columns the dictionary declares
/// numeric. Cells that are missing or do not parse are left out of the
/// numeric statistics.
pub fn summarize(t: &Table, d: &DataDictionary, missing: &MissingPolicy) -> SummaryStats {
    let variables = t
        .header()
        .par_iter()
        .enumerate()
        .map(|(c, name)| {
            let numeric = d.get(name).is_some_and(|v| v.datatype.is_numeric());
            let mut n_missing = 0;
            let (mut lo, mut hi, mut sum, mut count) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
            for cell in t.column(c) {
                if missing.is_missing(cell) {
                    n_missing += 1;
                } else if numeric {
                    if let Some(x) = values::parse_decimal(cell) {
                        lo = lo.min(x);
                        hi = hi.max(x);
                        sum += x;
                        count += 1;
                    }
                }
            }
            let have = count > 0;
            VariableSummary {
                name: name.clone(),
                missing: n_missing,
                min: have.then_some(lo),
                max: have.then_some(hi),
                mean: have.then(|| sum / count as f64),
            }
        })
        .collect();
    SummaryStats { n_records: t.n_rows(), n_variables: t.width(), variables }
}

/// A data table with its dictionary and file metadata: the unit of curation.
#[derive(Debug, Clone)]
pub struct FileBundle {
    pub table: Table,
    pub dictionary: DataDictionary,
    pub file_metadata: FileMetadata,
}

impl FileBundle {
    /// (study accession, file name, version)
    pub fn identity(&self) -> (&str, &str, u32) {
        let m = &self.file_metadata;
        (&m.study_accession, &m.file_name, m.version)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::EnumerationEntry;

    fn table(csv: &str) -> Table {
        parse_table(csv.as_bytes(), "t.csv").unwrap()
    }

    fn codes(issues: &[Issue]) -> Vec<(Option<usize>, Option<String>, IssueCode)> {
        issues.iter().map(|i| (i.location.row, i.location.column.clone(), i.code)).collect()
    }

    #[test]
    fn parse_two_by_two() {
        let t = table("a,b\n1,2\n3,4\n");
        assert_eq!(t.header(), ["a", "b"]);
        assert_eq!(t.n_rows(), 2);
        assert_eq!(t.row(1), ["3", "4"]);
    }

    #[test]
    fn ragged_row_location() {
        let err = parse_table(b"a,b\n1,2\n3,4,5\n", "t.csv").unwrap_err();
        assert_eq!(codes(&err), vec![(Some(3), None, IssueCode::DataRaggedRow)]);
    }

    #[test]
    fn empty_and_duplicate_header() {
        let err = parse_table(b"", "t.csv").unwrap_err();
        assert_eq!(err[0].code, IssueCode::DataEmpty);
        let err = parse_table(b"a,a\n1,2\n", "t.csv").unwrap_err();
        assert_eq!(codes(&err), vec![(Some(1), Some("a".into()), IssueCode::DataDupColumn)]);
    }

    #[test]
    fn header_only_table_has_zero_rows() {
        let t = table("a,b\n");
        assert_eq!(t.n_rows(), 0);
        assert_eq!(t.rows().count(), 0);
    }

    fn dict() -> DataDictionary {
        DataDictionary::new(
            "d.csv",
            vec![
                VariableSpec::new("n", "N", Datatype::Integer).with_bounds(Some(0.0), Some(10.0)),
                VariableSpec::new("e", "E", Datatype::Enum).with_enumeration(vec![
                    EnumerationEntry::new("1", "one"),
                    EnumerationEntry::new("2", "two"),
                    EnumerationEntry::new("3", "three"),
                ]),
            ],
        )
    }

    #[test]
    fn conformant_table_has_no_issues() {
        let t = table("n,e\n1,1\n2,2\n3,3\n");
        assert!(validate_against_dictionary(&t, &dict(), &ValidationOptions::for_file("t")).is_empty());
    }

    #[test]
    fn cell_level_checks() {
        let t = table("n,e\nabc,1\n11,7\n");
        let issues = validate_against_dictionary(&t, &dict(), &ValidationOptions::for_file("t"));
        assert_eq!(
            codes(&issues),
            vec![
                (Some(2), Some("n".into()), IssueCode::DataTypeMismatch),
                (Some(3), Some("e".into()), IssueCode::DataEnumViolation),
                (Some(3), Some("n".into()), IssueCode::DataOutOfBounds),
            ]
        );
    }

    #[test]
    fn column_level_checks() {
        let mut d = dict();
        d.variables.push(VariableSpec::new("r", "R", Datatype::String).required(true));
        d.variables.push(VariableSpec::new("gone", "Gone", Datatype::String));
        let t = table("n,e,r,extra\n1,1,,x\n");
        let issues = validate_against_dictionary(&t, &d, &ValidationOptions::for_file("t"));
        assert_eq!(
            codes(&issues),
            vec![
                (Some(1), Some("extra".into()), IssueCode::DataUndeclaredVariable),
                (Some(1), Some("gone".into()), IssueCode::DataMissingVariable),
                (Some(2), Some("r".into()), IssueCode::DataRequiredMissing),
            ]
        );
        assert!(!issues[1].is_error());
    }

    #[test]
    fn pattern_and_sentinels() {
        let d = DataDictionary::new(
            "d",
            vec![VariableSpec::new("id", "Id", Datatype::String).with_pattern(r"P\d{3}").required(true)],
        );
        let t = table("id\nP001\nP0012\nNA\n");
        let mut opts = ValidationOptions::for_file("t");
        let issues = validate_against_dictionary(&t, &d, &opts);
        assert_eq!(
            codes(&issues),
            vec![
                (Some(3), Some("id".into()), IssueCode::DataPatternMismatch),
                (Some(4), Some("id".into()), IssueCode::DataPatternMismatch),
            ]
        );
        opts.missing = MissingPolicy::with_sentinels(["NA"]);
        let issues = validate_against_dictionary(&t, &d, &opts);
        assert_eq!(codes(&issues)[1].2, IssueCode::DataRequiredMissing);
    }

    #[test]
    fn summary_examples() {
        let d = DataDictionary::new(
            "d",
            vec![VariableSpec::new("x", "X", Datatype::Integer), VariableSpec::new("y", "Y", Datatype::Integer)],
        );
        let s = summarize(&table("x,y\n1,\n,\n5,\n"), &d, &MissingPolicy::default());
        assert_eq!((s.n_records, s.n_variables), (3, 2));
        let x = &s.variables[0];
        assert_eq!((x.missing, x.min, x.max, x.mean), (1, Some(1.0), Some(5.0), Some(3.0)));
        let y = &s.variables[1];
        assert_eq!((y.missing, y.min, y.max, y.mean), (3, None, None, None));

        let full = summarize(&table("x,y\n1,2\n3,4\n5,6\n"), &d, &MissingPolicy::default());
        assert_eq!((full.n_records, full.n_variables), (3, 2));
        assert!(full.variables.iter().all(|v| v.missing == 0));
    }

    #[test]
    fn columns_round_trip() {
        let t = table("a,b,c\n1,2,3\n4,5,6\n");
        let (h, cols) = t.clone().into_columns();
        assert_eq!(cols[1], ["2", "5"]);
        assert_eq!(Table::from_columns(h, cols), t);
    }
}
