//! Curation of study data for a FAIR data hub: dictionaries, data files,
//! PII screening, de-identification, harmonization to common data elements,
//! study metadata, a searchable catalog and the submission pipeline.

pub mod catalog;
mod csvio;
pub mod deid;
pub mod dictionary;
pub mod harmonize;
pub mod issue;
pub mod metadata;
pub mod piiscan;
pub mod pipeline;
pub mod samples;
pub mod synth;
pub mod tabledata;
pub mod values;

pub use dictionary::{DataDictionary, Datatype, EnumerationEntry, VariableSpec};
pub use issue::{Issue, IssueCode, Location, Severity};
pub use metadata::{FileMetadata, StudyMetadata};
pub use tabledata::{FileBundle, MissingPolicy, Table};
