//! Searchable study catalog: free text, facet filters, autocomplete and
//! facet histograms.

mod index;

pub use index::{Histogram, HistogramRow, Index, SearchResult};

use std::collections::BTreeSet;
use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::metadata::StudyMetadata;

pub const MAX_LIMIT: usize = 500;
pub const DEFAULT_LIMIT: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CatalogError {
    #[error("accession {0} appears more than once")]
    DupAccession(String),
    #[error("unknown or unsupported field {0:?}")]
    BadField(String),
    #[error("bad value: {0}")]
    BadValue(String),
}

impl CatalogError {
    pub fn code(&self) -> &'static str {
        match self {
            CatalogError::DupAccession(_) => "IDX_DUP_ACCESSION",
            CatalogError::BadField(_) => "QRY_BAD_FIELD",
            CatalogError::BadValue(_) => "QRY_BAD_VALUE",
        }
    }
}

/// Study metadata plus what search needs beyond it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub metadata: StudyMetadata,
    /// Variable names across all of the study's dictionaries.
    #[serde(default)]
    pub variables: BTreeSet<String>,
    #[serde(default)]
    pub has_data_files: bool,
}

impl StudyRecord {
    pub fn new(metadata: StudyMetadata) -> Self {
        StudyRecord { metadata, variables: BTreeSet::new(), has_data_files: false }
    }

    pub fn accession(&self) -> &str {
        &self.metadata.accession
    }

    /// Search tokens from title, PI, keywords and study domains.
    pub fn tokens(&self) -> BTreeSet<String> {
        let m = &self.metadata;
        std::iter::once(&m.title)
            .chain(std::iter::once(&m.principal_investigator))
            .chain(&m.keywords)
            .chain(&m.study_domains)
            .flat_map(|s| tokenize(s))
            .collect()
    }
}

/// Case-folds and splits on anything that is not alphanumeric.
pub fn tokenize(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FacetField {
    Program,
    NihInstitute,
    StudyDomains,
    PopulationFocus,
    DataCollectionMethods,
    StudyDesign,
    CohortSize,
    HasDataFiles,
    Variables,
}

pub const COHORT_BUCKETS: [(&str, RangeInclusive<u64>); 4] =
    [("0-99", 0..=99), ("100-999", 100..=999), ("1000-9999", 1000..=9999), ("10000+", 10000..=u64::MAX)];

pub fn cohort_bucket(n: u64) -> &'static str {
    COHORT_BUCKETS.iter().find(|(_, r)| r.contains(&n)).map(|(l, _)| *l).expect("buckets cover u64")
}

impl FacetField {
    pub const ALL: [FacetField; 9] = [
        FacetField::Program,
        FacetField::NihInstitute,
        FacetField::StudyDomains,
        FacetField::PopulationFocus,
        FacetField::DataCollectionMethods,
        FacetField::StudyDesign,
        FacetField::CohortSize,
        FacetField::HasDataFiles,
        FacetField::Variables,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FacetField::Program => "program",
            FacetField::NihInstitute => "nih_institute",
            FacetField::StudyDomains => "study_domains",
            FacetField::PopulationFocus => "population_focus",
            FacetField::DataCollectionMethods => "data_collection_methods",
            FacetField::StudyDesign => "study_design",
            FacetField::CohortSize => "cohort_size",
            FacetField::HasDataFiles => "has_data_files",
            FacetField::Variables => "variables",
        }
    }

    pub fn is_multi_valued(self) -> bool {
        matches!(
            self,
            FacetField::StudyDomains
                | FacetField::PopulationFocus
                | FacetField::DataCollectionMethods
                | FacetField::Variables
        )
    }

    /// The record's values for this field; cohort size is reported by bucket.
    pub fn values(self, r: &StudyRecord) -> Vec<String> {
        let m = &r.metadata;
        match self {
            FacetField::Program => vec![m.program.clone()],
            FacetField::NihInstitute => vec![m.nih_institute.clone()],
            FacetField::StudyDomains => m.study_domains.clone(),
            FacetField::PopulationFocus => m.population_focus.clone(),
            FacetField::DataCollectionMethods => m.data_collection_methods.clone(),
            FacetField::StudyDesign => vec![m.study_design.clone()],
            FacetField::CohortSize => vec![cohort_bucket(m.estimated_cohort_size).to_string()],
            FacetField::HasDataFiles => vec![r.has_data_files.to_string()],
            FacetField::Variables => r.variables.iter().cloned().collect(),
        }
    }
}

impl fmt::Display for FacetField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FacetField {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FacetField::ALL.into_iter().find(|f| f.as_str() == s).ok_or_else(|| CatalogError::BadField(s.to_string()))
    }
}

/// One filter clause. Cohort-size filters take a bucket label or an
/// inclusive `lo..hi` range with either end optional.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Filter {
    Equals(FacetField, String),
    CohortRange(RangeInclusive<u64>),
}

impl Filter {
    pub fn field(&self) -> FacetField {
        match self {
            Filter::Equals(f, _) => *f,
            Filter::CohortRange(_) => FacetField::CohortSize,
        }
    }

    pub fn matches(&self, r: &StudyRecord) -> bool {
        match self {
            Filter::Equals(f, v) => f.values(r).iter().any(|x| x == v),
            Filter::CohortRange(range) => range.contains(&r.metadata.estimated_cohort_size),
        }
    }

    pub fn new(field: FacetField, value: &str) -> Result<Self, CatalogError> {
        if field != FacetField::CohortSize {
            return Ok(Filter::Equals(field, value.to_string()));
        }
        if let Some((_, r)) = COHORT_BUCKETS.iter().find(|(l, _)| *l == value) {
            return Ok(Filter::CohortRange(r.clone()));
        }
        let bad = || CatalogError::BadValue(format!("cohort_size filter {value:?} is neither a bucket nor lo..hi"));
        let (lo, hi) = value.split_once("..").ok_or_else(bad)?;
        let lo = if lo.is_empty() { 0 } else { lo.parse().map_err(|_| bad())? };
        let hi = if hi.is_empty() { u64::MAX } else { hi.parse().map_err(|_| bad())? };
        Ok(Filter::CohortRange(lo..=hi))
    }

    /// Parses `field=value`.
    pub fn parse(clause: &str) -> Result<Self, CatalogError> {
        let (field, value) = clause
            .split_once('=')
            .ok_or_else(|| CatalogError::BadValue(format!("filter {clause:?} is not field=value")))?;
        Filter::new(field.parse()?, value)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortField {
    #[default]
    Title,
    Accession,
    Program,
    ReleaseDate,
    CohortSize,
}

impl FromStr for SortField {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "title" => SortField::Title,
            "accession" => SortField::Accession,
            "program" => SortField::Program,
            "release_date" => SortField::ReleaseDate,
            "cohort_size" => SortField::CohortSize,
            _ => return Err(CatalogError::BadField(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Sort {
    pub field: SortField,
    pub descending: bool,
}

impl FromStr for Sort {
    type Err = CatalogError;

    /// `title`, `-title` (descending) or `title:desc`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, descending) = if let Some(rest) = s.strip_prefix('-') {
            (rest, true)
        } else if let Some((name, dir)) = s.split_once(':') {
            match dir {
                "asc" => (name, false),
                "desc" => (name, true),
                _ => return Err(CatalogError::BadValue(format!("sort direction {dir:?}"))),
            }
        } else {
            (s, false)
        };
        Ok(Sort { field: name.parse()?, descending })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub text: Option<String>,
    pub filters: Vec<Filter>,
    pub sort: Sort,
    pub offset: usize,
    pub limit: usize,
}

impl Default for Query {
    fn default() -> Self {
        Query { text: None, filters: Vec::new(), sort: Sort::default(), offset: 0, limit: DEFAULT_LIMIT }
    }
}

impl Query {
    pub fn validate(&self) -> Result<(), CatalogError> {
        if !(1..=MAX_LIMIT).contains(&self.limit) {
            return Err(CatalogError::BadValue(format!("limit {} outside 1..={MAX_LIMIT}", self.limit)));
        }
        Ok(())
    }

    /// Builds a query from URL-style parameters: `text`, repeated
    /// `filter=field=value`, `sort`, `offset`, `limit`.
    pub fn from_params<'a, I>(params: I) -> Result<Self, CatalogError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut q = Query::default();
        let num = |k: &str, v: &str| v.parse::<usize>().map_err(|_| CatalogError::BadValue(format!("{k}={v:?}")));
        for (k, v) in params {
            match k {
                "text" => q.text = (!v.trim().is_empty()).then(|| v.to_string()),
                "filter" => q.filters.push(Filter::parse(v)?),
                "sort" => q.sort = v.parse()?,
                "offset" => q.offset = num(k, v)?,
                "limit" => q.limit = num(k, v)?,
                _ => return Err(CatalogError::BadField(k.to_string())),
            }
        }
        q.validate()?;
        Ok(q)
    }

    pub fn terms(&self) -> Vec<String> {
        self.text.as_deref().map(tokenize).unwrap_or_default()
    }
}
