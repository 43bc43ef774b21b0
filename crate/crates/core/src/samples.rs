//! Bundled sample resources: templates, a term registry, a CDE codebook, one
//! study record and a small education bundle with its mapping.

use crate::dictionary::{parse_dictionary, DataDictionary};
use crate::harmonize::{parse_codebook, parse_mapping_set, Codebook, MappingSet};
use crate::metadata::{
    load_term_registry, parse_metadata, parse_template, FileMetadata, Instance, Template, TermRegistry,
};
use crate::tabledata::{parse_table, FileBundle};

pub const STUDY_TEMPLATE_JSON: &str = include_str!("../data/study-template.json");
pub const FILE_TEMPLATE_JSON: &str = include_str!("../data/file-template.json");
pub const TERMS_JSONL: &str = include_str!("../data/terms.jsonl");
pub const CODEBOOK_JSON: &str = include_str!("../data/codebook.json");
pub const EDUCATION_MAPPING_JSON: &str = include_str!("../data/mapping-education.json");
pub const EDUCATION_DICT_CSV: &str = include_str!("../data/education-dict.csv");
pub const EDUCATION_DATA_CSV: &str = include_str!("../data/education-data.csv");
pub const STUDY_PHS002920_JSON: &str = include_str!("../data/study-phs002920.json");

pub const EDUCATION_FILE: &str = "education-data.csv";

pub fn study_template() -> Template {
    parse_template(STUDY_TEMPLATE_JSON.as_bytes()).expect("bundled study template is valid")
}

pub fn file_template() -> Template {
    parse_template(FILE_TEMPLATE_JSON.as_bytes()).expect("bundled file template is valid")
}

pub fn term_registry() -> TermRegistry {
    load_term_registry(TERMS_JSONL.as_bytes(), "terms.jsonl").expect("bundled terms are valid")
}

pub fn codebook() -> Codebook {
    parse_codebook(CODEBOOK_JSON.as_bytes()).expect("bundled codebook is valid")
}

pub fn education_mapping() -> MappingSet {
    parse_mapping_set(EDUCATION_MAPPING_JSON.as_bytes()).expect("bundled mapping is valid")
}

pub fn education_dictionary() -> DataDictionary {
    parse_dictionary(EDUCATION_DICT_CSV.as_bytes(), EDUCATION_FILE).expect("bundled dictionary is valid")
}

pub fn education_bundle() -> FileBundle {
    FileBundle {
        table: parse_table(EDUCATION_DATA_CSV.as_bytes(), EDUCATION_FILE).expect("bundled data is valid"),
        dictionary: education_dictionary(),
        file_metadata: FileMetadata::new("phs002920", EDUCATION_FILE, 1),
    }
}

pub fn study_phs002920() -> Instance {
    parse_metadata(STUDY_PHS002920_JSON.as_bytes(), "study-phs002920.json").expect("bundled study is valid JSON")
}
