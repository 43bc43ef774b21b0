//! Data dictionaries: one row per variable, nine fixed columns.
//!
//! ```text
//! Id,Label,Datatype,Units,Enumeration,Required,Pattern,Min,Max
//! nih_age,Age in years,integer,years,,TRUE,,0,120
//! sex,Sex at birth,enum,,"1=""Male""; 2=""Female""",FALSE,,,
//! ```
//!
//! Enumerations are written as `code="label"` pairs joined by `; `. A double
//! quote inside a label is doubled. Parsing collects every issue instead of
//! stopping at the first one.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::csvio;
use crate::issue::{sort_by_row_code, Issue, IssueCode, Location};
use crate::values::parse_decimal;

pub const HEADER: [&str; 9] =
    ["Id", "Label", "Datatype", "Units", "Enumeration", "Required", "Pattern", "Min", "Max"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Datatype {
    Integer,
    Decimal,
    String,
    Date,
    Datetime,
    Boolean,
    Enum,
}

impl Datatype {
    pub const ALL: [Datatype; 7] = [
        Datatype::Integer,
        Datatype::Decimal,
        Datatype::String,
        Datatype::Date,
        Datatype::Datetime,
        Datatype::Boolean,
        Datatype::Enum,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Datatype::Integer => "integer",
            Datatype::Decimal => "decimal",
            Datatype::String => "string",
            Datatype::Date => "date",
            Datatype::Datetime => "datetime",
            Datatype::Boolean => "boolean",
            Datatype::Enum => "enum",
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, Datatype::Integer | Datatype::Decimal)
    }
}

impl fmt::Display for Datatype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownDatatype(pub String);

impl FromStr for Datatype {
    type Err = UnknownDatatype;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Datatype::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| UnknownDatatype(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumerationEntry {
    pub code: String,
    pub label: String,
}

impl EnumerationEntry {
    pub fn new(code: impl Into<String>, label: impl Into<String>) -> Self {
        EnumerationEntry { code: code.into(), label: label.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub id: String,
    pub label: String,
    pub datatype: Datatype,
    #[serde(default)]
    pub units: Option<String>,
    #[serde(default)]
    pub enumeration: Vec<EnumerationEntry>,
    #[serde(default)]
    pub required: bool,
    #[serde(default)]
    pub pattern: Option<String>,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

impl VariableSpec {
    pub fn new(id: impl Into<String>, label: impl Into<String>, datatype: Datatype) -> Self {
        VariableSpec {
            id: id.into(),
            label: label.into(),
            datatype,
            units: None,
            enumeration: Vec::new(),
            required: false,
            pattern: None,
            min: None,
            max: None,
        }
    }

    pub fn with_enumeration(mut self, entries: Vec<EnumerationEntry>) -> Self {
        self.enumeration = entries;
        self
    }

    pub fn with_bounds(mut self, min: Option<f64>, max: Option<f64>) -> Self {
        self.min = min;
        self.max = max;
        self
    }

    pub fn required(mut self, required: bool) -> Self {
        self.required = required;
        self
    }

    pub fn with_units(mut self, units: impl Into<String>) -> Self {
        self.units = Some(units.into());
        self
    }

    pub fn with_pattern(mut self, pattern: impl Into<String>) -> Self {
        self.pattern = Some(pattern.into());
        self
    }

    pub fn enum_label(&self, code: &str) -> Option<&str> {
        self.enumeration.iter().find(|e| e.code == code).map(|e| e.label.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataDictionary {
    pub source_name: String,
    pub variables: Vec<VariableSpec>,
}

impl DataDictionary {
    pub fn new(source_name: impl Into<String>, variables: Vec<VariableSpec>) -> Self {
        DataDictionary { source_name: source_name.into(), variables }
    }

    pub fn get(&self, id: &str) -> Option<&VariableSpec> {
        self.variables.iter().find(|v| v.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.variables.iter().map(|v| v.id.as_str())
    }
}

/// Row of variable `index` in the serialized file (header is row 1).
fn row_of(index: usize) -> usize {
    index + 2
}

fn is_valid_id(id: &str) -> bool {
    let mut chars = id.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parses the enumeration grammar. An empty or all-whitespace cell is an
/// empty enumeration.
pub fn parse_enumeration(cell: &str) -> Result<Vec<EnumerationEntry>, String> {
    let chars: Vec<char> = cell.chars().collect();
    let mut entries = Vec::new();
    let mut i = 0;
    let skip_ws = |i: &mut usize| {
        while *i < chars.len() && chars[*i].is_whitespace() {
            *i += 1;
        }
    };
    skip_ws(&mut i);
    if i == chars.len() {
        return Ok(entries);
    }
    loop {
        skip_ws(&mut i);
        let start = i;
        while i < chars.len() && !matches!(chars[i], '=' | ';' | '"') {
            i += 1;
        }
        let code: String = chars[start..i].iter().collect::<String>().trim().to_string();
        if code.is_empty() {
            return Err(format!("empty code at character {}", start + 1));
        }
        if i == chars.len() || chars[i] != '=' {
            return Err(format!("expected '=' after code {code:?}"));
        }
        i += 1;
        if i == chars.len() || chars[i] != '"' {
            return Err(format!("expected '\"' to open label of code {code:?}"));
        }
        i += 1;
        let mut label = String::new();
        loop {
            match chars.get(i) {
                None => return Err(format!("unterminated label for code {code:?}")),
                Some('"') if chars.get(i + 1) == Some(&'"') => {
                    label.push('"');
                    i += 2;
                }
                Some('"') => {
                    i += 1;
                    break;
                }
                Some(&c) => {
                    label.push(c);
                    i += 1;
                }
            }
        }
        if label.is_empty() {
            return Err(format!("empty label for code {code:?}"));
        }
        entries.push(EnumerationEntry { code, label });
        skip_ws(&mut i);
        match chars.get(i) {
            None => return Ok(entries),
            Some(';') => i += 1,
            Some(c) => return Err(format!("unexpected {c:?} after label")),
        }
    }
}

pub fn format_enumeration(entries: &[EnumerationEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{}=\"{}\"", e.code, e.label.replace('"', "\"\"")))
        .collect::<Vec<_>>()
        .join("; ")
}

fn check_id(source: &str, row: usize, id: &str, seen: &mut HashSet<String>, out: &mut Vec<Issue>) {
    let loc = || Location::at(source, row, "Id");
    if !is_valid_id(id) {
        out.push(Issue::error(
            IssueCode::DictBadId,
            loc(),
            format!("variable id {id:?} must match [A-Za-z_][A-Za-z0-9_]*"),
        ));
    }
    if !seen.insert(id.to_string()) {
        out.push(Issue::error(IssueCode::DictDupId, loc(), format!("duplicate variable id {id:?}")));
    }
}

/// Checks everything about a variable except its id.
fn check_constraints(source: &str, row: usize, v: &VariableSpec, out: &mut Vec<Issue>) {
    let loc = |col: &str| Location::at(source, row, col);
    if v.datatype == Datatype::Enum && v.enumeration.is_empty() {
        out.push(Issue::error(
            IssueCode::DictEnumRequired,
            loc("Enumeration"),
            format!("variable {:?} has datatype enum but no enumeration", v.id),
        ));
    }
    if v.datatype != Datatype::Enum && !v.enumeration.is_empty() {
        out.push(Issue::error(
            IssueCode::DictEnumNotAllowed,
            loc("Enumeration"),
            format!("variable {:?} has datatype {} but declares an enumeration", v.id, v.datatype),
        ));
    }
    let mut codes = HashSet::new();
    for e in &v.enumeration {
        if e.code.is_empty() || e.label.is_empty() {
            out.push(Issue::error(
                IssueCode::DictBadEnumSyntax,
                loc("Enumeration"),
                format!("variable {:?} has an enumeration entry with an empty code or label", v.id),
            ));
        } else if !codes.insert(e.code.as_str()) {
            out.push(Issue::error(
                IssueCode::DictDupEnumCode,
                loc("Enumeration"),
                format!("variable {:?} repeats enumeration code {:?}", v.id, e.code),
            ));
        }
    }
    if let Some(p) = &v.pattern {
        if let Err(e) = Regex::new(p) {
            out.push(Issue::error(
                IssueCode::DictBadPattern,
                loc("Pattern"),
                format!("variable {:?} pattern does not compile: {e}", v.id),
            ));
        }
    }
    let has_bounds = v.min.is_some() || v.max.is_some();
    if has_bounds && !v.datatype.is_numeric() {
        out.push(Issue::error(
            IssueCode::DictBadBounds,
            loc("Min"),
            format!("variable {:?} declares bounds on non-numeric datatype {}", v.id, v.datatype),
        ));
    } else if let (Some(lo), Some(hi)) = (v.min, v.max) {
        if lo > hi {
            out.push(Issue::error(
                IssueCode::DictBadBounds,
                loc("Min"),
                format!("variable {:?} has min {lo} greater than max {hi}", v.id),
            ));
        }
    }
}

/// All invariant violations in a structurally built dictionary, sorted by
/// (row, code).
pub fn validate_dictionary(d: &DataDictionary) -> Vec<Issue> {
    let mut out = Vec::new();
    if d.variables.is_empty() {
        out.push(Issue::error(
            IssueCode::DictEmpty,
            Location::file(&d.source_name),
            "dictionary declares no variables",
        ));
    }
    let mut seen = HashSet::new();
    for (i, v) in d.variables.iter().enumerate() {
        check_id(&d.source_name, row_of(i), &v.id, &mut seen, &mut out);
        check_constraints(&d.source_name, row_of(i), v, &mut out);
    }
    sort_by_row_code(&mut out);
    out
}

/// Parses dictionary CSV. Returns the dictionary iff no error-severity issue
/// was found; otherwise every issue, sorted by (row, code).
pub fn parse_dictionary(raw: &[u8], source_name: &str) -> Result<DataDictionary, Vec<Issue>> {
    let text = match csvio::decode(raw) {
        Ok(t) => t,
        Err(e) => {
            return Err(vec![Issue::error(
                IssueCode::DictBadEncoding,
                Location::file(source_name),
                format!("dictionary is not valid UTF-8: {e}"),
            )])
        }
    };
    let mut records = csvio::records(text);
    let Some(header) = records.next() else {
        return Err(vec![Issue::error(
            IssueCode::DictEmpty,
            Location::file(source_name),
            "dictionary file is empty",
        )]);
    };
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(vec![Issue::error(
            IssueCode::DictBadHeader,
            Location::row(source_name, 1),
            format!("header must be exactly `{}`", HEADER.join(",")),
        )]);
    }

    let mut issues = Vec::new();
    let mut variables = Vec::new();
    let mut seen = HashSet::new();
    let mut n_rows = 0;
    for (i, rec) in records.enumerate() {
        n_rows += 1;
        let row = row_of(i);
        if rec.len() != HEADER.len() {
            issues.push(Issue::error(
                IssueCode::DictRaggedRow,
                Location::row(source_name, row),
                format!("expected {} cells, found {}", HEADER.len(), rec.len()),
            ));
            continue;
        }
        let cell = |k: usize| rec.get(k).unwrap_or("");
        let loc = |col: &str| Location::at(source_name, row, col);
        let id = cell(0).to_string();
        check_id(source_name, row, &id, &mut seen, &mut issues);

        let mut row_ok = true;
        let datatype = match cell(2).parse::<Datatype>() {
            Ok(d) => Some(d),
            Err(UnknownDatatype(tag)) => {
                issues.push(Issue::error(
                    IssueCode::DictBadDatatype,
                    loc("Datatype"),
                    format!("unknown datatype {tag:?}"),
                ));
                row_ok = false;
                None
            }
        };
        let enumeration = match parse_enumeration(cell(4)) {
            Ok(e) => e,
            Err(msg) => {
                issues.push(Issue::error(IssueCode::DictBadEnumSyntax, loc("Enumeration"), msg));
                row_ok = false;
                Vec::new()
            }
        };
        let required = match cell(5) {
            "" => false,
            s if s.eq_ignore_ascii_case("true") => true,
            s if s.eq_ignore_ascii_case("false") => false,
            s => {
                issues.push(Issue::error(
                    IssueCode::DictBadRequired,
                    loc("Required"),
                    format!("Required must be TRUE, FALSE or empty, found {s:?}"),
                ));
                row_ok = false;
                false
            }
        };
        let mut bound = |k: usize, col: &str| -> Option<f64> {
            let s = cell(k);
            if s.is_empty() {
                return None;
            }
            let v = parse_decimal(s);
            if v.is_none() {
                issues.push(Issue::error(
                    IssueCode::DictBadBounds,
                    loc(col),
                    format!("{col} {s:?} is not a number"),
                ));
                row_ok = false;
            }
            v
        };
        let min = bound(7, "Min");
        let max = bound(8, "Max");
        let (Some(datatype), true) = (datatype, row_ok) else {
            continue;
        };
        let non_empty = |s: &str| (!s.is_empty()).then(|| s.to_string());
        let spec = VariableSpec {
            id,
            label: cell(1).to_string(),
            datatype,
            units: non_empty(cell(3)),
            enumeration,
            required,
            pattern: non_empty(cell(6)),
            min,
            max,
        };
        check_constraints(source_name, row, &spec, &mut issues);
        variables.push(spec);
    }
    if n_rows == 0 {
        issues.push(Issue::error(
            IssueCode::DictEmpty,
            Location::file(source_name),
            "dictionary declares no variables",
        ));
    }
    sort_by_row_code(&mut issues);
    if crate::issue::has_errors(&issues) {
        Err(issues)
    } else {
        Ok(DataDictionary { source_name: source_name.to_string(), variables })
    }
}

fn format_bound(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn serialize_dictionary(d: &DataDictionary) -> Vec<u8> {
    let mut w = csvio::writer();
    w.write_record(HEADER).expect("in-memory write");
    for v in &d.variables {
        w.write_record([
            v.id.as_str(),
            v.label.as_str(),
            v.datatype.as_str(),
            v.units.as_deref().unwrap_or(""),
            &format_enumeration(&v.enumeration),
            if v.required { "TRUE" } else { "FALSE" },
            v.pattern.as_deref().unwrap_or(""),
            &format_bound(v.min),
            &format_bound(v.max),
        ])
        .expect("in-memory write");
    }
    csvio::finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_header(rows: &str) -> Vec<u8> {
        format!("{}\n{rows}", HEADER.join(",")).into_bytes()
    }

    fn codes(issues: &[Issue]) -> Vec<(Option<usize>, IssueCode)> {
        issues.iter().map(|i| (i.location.row, i.code)).collect()
    }

    #[test]
    fn single_integer_variable() {
        let d = parse_dictionary(&with_header("nih_age,Age in years,integer,years,,TRUE,,0,120\n"), "d.csv")
            .unwrap();
        assert_eq!(d.variables.len(), 1);
        let v = &d.variables[0];
        assert_eq!((v.min, v.max), (Some(0.0), Some(120.0)));
        assert_eq!(v.units.as_deref(), Some("years"));
        assert!(v.required);
        assert_eq!(v.datatype, Datatype::Integer);
    }

    #[test]
    fn duplicate_id_reported_on_second_occurrence() {
        let raw = with_header("sex,Sex,string,,,,,,\nsex,Sex again,string,,,,,,\n");
        let err = parse_dictionary(&raw, "d.csv").unwrap_err();
        assert_eq!(codes(&err), vec![(Some(3), IssueCode::DictDupId)]);
    }

    #[test]
    fn enumeration_cell_yields_entries() {
        let raw = with_header("answer,Answer,enum,,\"1=\"\"Yes\"\"; 2=\"\"No\"\"\",,,,\n");
        let d = parse_dictionary(&raw, "d.csv").unwrap();
        assert_eq!(
            d.variables[0].enumeration,
            vec![EnumerationEntry::new("1", "Yes"), EnumerationEntry::new("2", "No")]
        );
    }

    #[test]
    fn enumeration_grammar() {
        assert_eq!(
            parse_enumeration(r#"1="Yes";2="No""#).unwrap(),
            vec![EnumerationEntry::new("1", "Yes"), EnumerationEntry::new("2", "No")]
        );
        assert_eq!(
            parse_enumeration(r#"a="say ""hi"", ok; fine""#).unwrap(),
            vec![EnumerationEntry::new("a", r#"say "hi", ok; fine"#)]
        );
        assert!(parse_enumeration("").unwrap().is_empty());
        for bad in [r#"1=Yes"#, r#"="x""#, r#"1="open"#, r#"1="""#, r#"1="a" 2="b""#, r#"1="a";"#] {
            assert!(parse_enumeration(bad).is_err(), "{bad}");
        }
        let entries = vec![EnumerationEntry::new("1", "a \"q\""), EnumerationEntry::new("2", "b;c")];
        let text = format_enumeration(&entries);
        assert_eq!(text, r#"1="a ""q"""; 2="b;c""#);
        assert_eq!(parse_enumeration(&text).unwrap(), entries);
    }

    #[test]
    fn header_must_match_exactly() {
        let raw = b"id,Label,Datatype,Units,Enumeration,Required,Pattern,Min,Max\nx,X,string,,,,,,\n";
        let err = parse_dictionary(raw, "d.csv").unwrap_err();
        assert_eq!(codes(&err), vec![(Some(1), IssueCode::DictBadHeader)]);
    }

    #[test]
    fn crlf_is_accepted() {
        let raw = format!("{}\r\nx,X,string,,,,,,\r\n", HEADER.join(","));
        assert!(parse_dictionary(raw.as_bytes(), "d.csv").is_ok());
    }

    #[test]
    fn collects_all_issues() {
        let raw = with_header(concat!(
            "1bad,Bad id,string,,,,,,\n",
            "t,T,text,,,,,,\n",
            "e,E,enum,,,,,,\n",
            "b,B,integer,,,,,5,2\n",
            "r,R,string,,,maybe,,,\n",
            "p,P,string,,,,(,,\n",
            "s,S,string,,,,,1,\n",
            "short,row\n",
        ));
        let err = parse_dictionary(&raw, "d.csv").unwrap_err();
        assert_eq!(
            codes(&err),
            vec![
                (Some(2), IssueCode::DictBadId),
                (Some(3), IssueCode::DictBadDatatype),
                (Some(4), IssueCode::DictEnumRequired),
                (Some(5), IssueCode::DictBadBounds),
                (Some(6), IssueCode::DictBadRequired),
                (Some(7), IssueCode::DictBadPattern),
                (Some(8), IssueCode::DictBadBounds),
                (Some(9), IssueCode::DictRaggedRow),
            ]
        );
    }

    #[test]
    fn empty_and_non_utf8() {
        assert_eq!(codes(&parse_dictionary(b"", "d").unwrap_err()), vec![(None, IssueCode::DictEmpty)]);
        let header_only = with_header("");
        assert_eq!(codes(&parse_dictionary(&header_only, "d").unwrap_err()), vec![(None, IssueCode::DictEmpty)]);
        assert_eq!(
            codes(&parse_dictionary(b"\xff\xfe", "d").unwrap_err()),
            vec![(None, IssueCode::DictBadEncoding)]
        );
    }

    #[test]
    fn validate_examples() {
        let ok = DataDictionary::new("d", vec![VariableSpec::new("x", "X", Datatype::Integer)]);
        assert!(validate_dictionary(&ok).is_empty());

        let e = DataDictionary::new("d", vec![VariableSpec::new("x", "X", Datatype::Enum)]);
        assert_eq!(codes(&validate_dictionary(&e)), vec![(Some(2), IssueCode::DictEnumRequired)]);

        let b = DataDictionary::new(
            "d",
            vec![VariableSpec::new("x", "X", Datatype::Integer).with_bounds(Some(5.0), Some(2.0))],
        );
        assert_eq!(codes(&validate_dictionary(&b)), vec![(Some(2), IssueCode::DictBadBounds)]);

        let empty = DataDictionary::new("d", vec![]);
        assert_eq!(codes(&validate_dictionary(&empty)), vec![(None, IssueCode::DictEmpty)]);
    }

    #[test]
    fn serialize_shape() {
        let d = DataDictionary::new(
            "d",
            vec![VariableSpec::new("answer", "Answer", Datatype::Enum)
                .with_enumeration(vec![EnumerationEntry::new("1", "Yes"), EnumerationEntry::new("2", "No")])],
        );
        let text = String::from_utf8(serialize_dictionary(&d)).unwrap();
        assert_eq!(
            text,
            "Id,Label,Datatype,Units,Enumeration,Required,Pattern,Min,Max\n\
             answer,Answer,enum,,\"1=\"\"Yes\"\"; 2=\"\"No\"\"\",FALSE,,,\n"
        );
        assert_eq!(parse_dictionary(text.as_bytes(), "d").unwrap(), d);
    }
}
