//! Issues reported by every validation stage.
//!
//! Codes form one closed set shared by the dictionary, table, de-identification,
//! harmonization, metadata and ingest stages. Row indices are 1-based and count
//! the header as row 1, so the first data record sits on row 2.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

macro_rules! issue_codes {
    ($($variant:ident => $text:literal),+ $(,)?) => {
        /// The published set of issue codes.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum IssueCode {
            $(
                #[serde(rename = $text)]
                $variant,
            )+
        }

        impl IssueCode {
            pub const ALL: &'static [IssueCode] = &[$(IssueCode::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(IssueCode::$variant => $text,)+
                }
            }
        }
    };
}

issue_codes! {
    // dictionary
    DictBadEncoding => "DICT_BAD_ENCODING",
    DictBadHeader => "DICT_BAD_HEADER",
    DictRaggedRow => "DICT_RAGGED_ROW",
    DictEmpty => "DICT_EMPTY",
    DictBadId => "DICT_BAD_ID",
    DictDupId => "DICT_DUP_ID",
    DictBadDatatype => "DICT_BAD_DATATYPE",
    DictBadEnumSyntax => "DICT_BAD_ENUM_SYNTAX",
    DictDupEnumCode => "DICT_DUP_ENUM_CODE",
    DictEnumRequired => "DICT_ENUM_REQUIRED",
    DictEnumNotAllowed => "DICT_ENUM_NOT_ALLOWED",
    DictBadRequired => "DICT_BAD_REQUIRED",
    DictBadPattern => "DICT_BAD_PATTERN",
    DictBadBounds => "DICT_BAD_BOUNDS",
    // data files
    DataBadEncoding => "DATA_BAD_ENCODING",
    DataEmpty => "DATA_EMPTY",
    DataRaggedRow => "DATA_RAGGED_ROW",
    DataDupColumn => "DATA_DUP_COLUMN",
    DataTypeMismatch => "DATA_TYPE_MISMATCH",
    DataEnumViolation => "DATA_ENUM_VIOLATION",
    DataPatternMismatch => "DATA_PATTERN_MISMATCH",
    DataOutOfBounds => "DATA_OUT_OF_BOUNDS",
    DataUndeclaredVariable => "DATA_UNDECLARED_VARIABLE",
    DataMissingVariable => "DATA_MISSING_VARIABLE",
    DataRequiredMissing => "DATA_REQUIRED_MISSING",
    // PII scanning
    PiiFinding => "PII_FINDING",
    // de-identification
    DeidBadKey => "DEID_BAD_KEY",
    DeidBadConfig => "DEID_BAD_CONFIG",
    DeidAlreadyApplied => "DEID_ALREADY_APPLIED",
    DeidUnknownColumn => "DEID_UNKNOWN_COLUMN",
    DeidBadZip => "DEID_BAD_ZIP",
    DeidBadDate => "DEID_BAD_DATE",
    DeidBadAge => "DEID_BAD_AGE",
    DeidEmptySite => "DEID_EMPTY_SITE",
    // codebook and mappings
    CbBadDocument => "CB_BAD_DOCUMENT",
    CbDupName => "CB_DUP_NAME",
    CbDupCategory => "CB_DUP_CATEGORY",
    CbBadCategory => "CB_BAD_CATEGORY",
    CbBadCde => "CB_BAD_CDE",
    MapBadDocument => "MAP_BAD_DOCUMENT",
    MapDupSource => "MAP_DUP_SOURCE",
    MapDupTarget => "MAP_DUP_TARGET",
    MapMissingTarget => "MAP_MISSING_TARGET",
    MapBadValueMap => "MAP_BAD_VALUE_MAP",
    MapTypeIncompatible => "MAP_TYPE_INCOMPATIBLE",
    MapNameCollision => "MAP_NAME_COLLISION",
    MapUnknownSource => "MAP_UNKNOWN_SOURCE",
    MapUnknownCde => "MAP_UNKNOWN_CDE",
    MapBadSourceCode => "MAP_BAD_SOURCE_CODE",
    MapBadTargetCode => "MAP_BAD_TARGET_CODE",
    MapUncoveredValue => "MAP_UNCOVERED_VALUE",
    MapUnmappedVariable => "MAP_UNMAPPED_VARIABLE",
    MapRuntimeUncovered => "MAP_RUNTIME_UNCOVERED",
    // metadata
    TplBadDocument => "TPL_BAD_DOCUMENT",
    TplDupField => "TPL_DUP_FIELD",
    TplBadField => "TPL_BAD_FIELD",
    TplBadSection => "TPL_BAD_SECTION",
    TermBadRecord => "TERM_BAD_RECORD",
    TermDupIri => "TERM_DUP_IRI",
    TermBadIri => "TERM_BAD_IRI",
    MetaBadDocument => "META_BAD_DOCUMENT",
    MetaMissingRequired => "META_MISSING_REQUIRED",
    MetaBadKind => "META_BAD_KIND",
    MetaBadValue => "META_BAD_VALUE",
    MetaUnresolvedTerm => "META_UNRESOLVED_TERM",
    MetaUnknownField => "META_UNKNOWN_FIELD",
    // ingest and store
    IngMissingComponent => "ING_MISSING_COMPONENT",
    IngBadLayout => "ING_BAD_LAYOUT",
    IngUnrecognizedFile => "ING_UNRECOGNIZED_FILE",
    StoreVersionRegression => "STORE_VERSION_REGRESSION",
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Location {
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
}

impl Location {
    pub fn file(file: impl Into<String>) -> Self {
        Location { file: file.into(), row: None, column: None }
    }

    pub fn at(file: impl Into<String>, row: usize, column: impl Into<String>) -> Self {
        Location { file: file.into(), row: Some(row), column: Some(column.into()) }
    }

    pub fn row(file: impl Into<String>, row: usize) -> Self {
        Location { file: file.into(), row: Some(row), column: None }
    }

    pub fn with_column(mut self, column: impl Into<String>) -> Self {
        self.column = Some(column.into());
        self
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.file)?;
        if let Some(row) = self.row {
            write!(f, ":{row}")?;
        }
        if let Some(column) = &self.column {
            write!(f, " [{column}]")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub code: IssueCode,
    pub location: Location,
    pub message: String,
}

impl Issue {
    pub fn error(code: IssueCode, location: Location, message: impl Into<String>) -> Self {
        Issue { severity: Severity::Error, code, location, message: message.into() }
    }

    pub fn warning(code: IssueCode, location: Location, message: impl Into<String>) -> Self {
        Issue { severity: Severity::Warning, code, location, message: message.into() }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev} {} at {}: {}", self.code, self.location, self.message)
    }
}

pub fn has_errors(issues: &[Issue]) -> bool {
    issues.iter().any(Issue::is_error)
}

/// Sort by (row, code), the order used for dictionary issues.
pub fn sort_by_row_code(issues: &mut [Issue]) {
    issues.sort_by(|a, b| {
        (a.location.row, a.code, &a.location.column, &a.message)
            .cmp(&(b.location.row, b.code, &b.location.column, &b.message))
    });
}

/// Sort by (row, column, code), the order used for data-file issues.
pub fn sort_by_row_column_code(issues: &mut [Issue]) {
    issues.sort_by(|a, b| {
        (a.location.row, &a.location.column, a.code, &a.message)
            .cmp(&(b.location.row, &b.location.column, b.code, &b.message))
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_unique_and_screaming_snake() {
        let mut seen = std::collections::HashSet::new();
        for code in IssueCode::ALL {
            let s = code.as_str();
            assert!(seen.insert(s), "duplicate code {s}");
            assert!(s.chars().all(|c| c.is_ascii_uppercase() || c == '_'), "{s}");
        }
    }

    #[test]
    fn code_serializes_as_published_string() {
        let json = serde_json::to_string(&IssueCode::DataRaggedRow).unwrap();
        assert_eq!(json, "\"DATA_RAGGED_ROW\"");
        let back: IssueCode = serde_json::from_str(&json).unwrap();
        assert_eq!(back, IssueCode::DataRaggedRow);
    }

    #[test]
    fn row_column_code_order() {
        let mut v = vec![
            Issue::error(IssueCode::DataTypeMismatch, Location::at("f", 3, "a"), ""),
            Issue::error(IssueCode::DataEnumViolation, Location::at("f", 2, "b"), ""),
            Issue::error(IssueCode::DataDupColumn, Location::row("f", 1), ""),
            Issue::error(IssueCode::DataOutOfBounds, Location::at("f", 2, "a"), ""),
        ];
        sort_by_row_column_code(&mut v);
        let got: Vec<_> = v.iter().map(|i| (i.location.row, i.location.column.clone())).collect();
        assert_eq!(
            got,
            vec![
                (Some(1), None),
                (Some(2), Some("a".into())),
                (Some(2), Some("b".into())),
                (Some(3), Some("a".into()))
            ]
        );
    }
}
