//! Mapping study variables onto a codebook of common data elements.

mod codebook;
mod mapping;

pub use codebook::{check_codebook, parse_codebook, Cde, Codebook};
pub use mapping::{
    parse_mapping_csv, parse_mapping_set, validate_mappings, MappingAction, MappingSet, VariableMapping,
    CSV_HEADER as MAPPING_CSV_HEADER,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{DataDictionary, VariableSpec};
use crate::issue::{has_errors, sort_by_row_column_code, Issue, IssueCode, Location};
use crate::tabledata::{summarize, FileBundle, MissingPolicy, Table};

/// What to do with a non-missing source code the value map does not cover.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strictness {
    /// Fail the whole file.
    #[default]
    Strict,
    /// Write a missing value and record a warning.
    Lenient,
}

#[derive(Debug, Clone, Default)]
pub struct HarmonizeOptions {
    pub strictness: Strictness,
    pub missing: MissingPolicy,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarmonizationReport {
    pub variables_mapped: usize,
    pub variables_passed_through: usize,
    pub variables_dropped: usize,
    pub values_remapped: usize,
    pub uncovered_values: usize,
    #[serde(default)]
    pub warnings: Vec<Issue>,
}

/// `visits.csv` → `visits_harmonized.csv`.
pub fn harmonized_file_name(name: &str) -> String {
    match name.rsplit_once('.') {
        Some((stem, ext)) if !stem.is_empty() => format!("{stem}_harmonized.{ext}"),
        _ => format!("{name}_harmonized"),
    }
}

fn action_of<'a>(m: &'a MappingSet, var: &str) -> (MappingAction, Option<&'a VariableMapping>) {
    match m.for_source(var) {
        Some(vm) => (vm.action, Some(vm)),
        None => (MappingAction::Passthrough, None),
    }
}

/// The dictionary of the harmonized file. Assumes the mapping set passed
/// [`validate_mappings`]. Mapped variables take the CDE's name, label, type,
/// units and enumeration; range and pattern constraints belong to the source
/// coding and are dropped.
pub fn harmonized_dictionary(d: &DataDictionary, cb: &Codebook, m: &MappingSet) -> DataDictionary {
    let variables = d
        .variables
        .iter()
        .filter_map(|v| match action_of(m, &v.id) {
            (MappingAction::Drop, _) => None,
            (MappingAction::Passthrough, _) => Some(v.clone()),
            (MappingAction::Map, vm) => {
                let cde = cb.get(vm?.target_cde.as_deref()?)?;
                Some(VariableSpec {
                    id: cde.name.clone(),
                    label: cde.label.clone(),
                    datatype: cde.datatype,
                    units: cde.units.clone().or_else(|| v.units.clone()),
                    enumeration: cde.enumeration.clone(),
                    required: v.required,
                    pattern: None,
                    min: None,
                    max: None,
                })
            }
        })
        .collect();
    DataDictionary::new(harmonized_file_name(&d.source_name), variables)
}

struct ColumnResult {
    name: String,
    values: Vec<String>,
    remapped: usize,
    uncovered: Vec<Issue>,
}

/// Rewrites a table into codebook terms. Column order follows the source;
/// dropped columns are removed. Strict mode fails on any uncovered code,
/// lenient mode blanks it with a warning.
pub fn apply_mappings(
    t: &Table,
    d: &DataDictionary,
    cb: &Codebook,
    m: &MappingSet,
    opts: &HarmonizeOptions,
) -> Result<(Table, DataDictionary, HarmonizationReport), Vec<Issue>> {
    let static_issues = validate_mappings(d, cb, m);
    if has_errors(&static_issues) {
        return Err(static_issues);
    }
    let file = d.source_name.as_str();
    let strict = opts.strictness == Strictness::Strict;
    let columns: Vec<ColumnResult> = t
        .header()
        .par_iter()
        .enumerate()
        .filter_map(|(c, name)| {
            let (action, vm) = action_of(m, name);
            match action {
                MappingAction::Drop => None,
                MappingAction::Passthrough => Some(ColumnResult {
                    name: name.clone(),
                    values: t.column(c).map(str::to_string).collect(),
                    remapped: 0,
                    uncovered: Vec::new(),
                }),
                MappingAction::Map => {
                    let vm = vm.expect("map action comes from a mapping");
                    let target = vm.target_cde.clone().expect("validated mapping has a target");
                    let mut remapped = 0;
                    let mut uncovered = Vec::new();
                    let values = t
                        .column(c)
                        .enumerate()
                        .map(|(r, cell)| {
                            if vm.value_map.is_empty() || opts.missing.is_missing(cell) {
                                return cell.to_string();
                            }
                            match vm.value_map.get(cell) {
                                Some(code) => {
                                    remapped += 1;
                                    code.clone()
                                }
                                None => {
                                    let msg = format!("code {cell:?} of {name:?} has no target in {target:?}");
                                    let loc = Location::at(file, r + 2, name.as_str());
                                    uncovered.push(if strict {
                                        Issue::error(IssueCode::MapRuntimeUncovered, loc, msg)
                                    } else {
                                        Issue::warning(IssueCode::MapRuntimeUncovered, loc, msg)
                                    });
                                    String::new()
                                }
                            }
                        })
                        .collect();
                    Some(ColumnResult { name: target, values, remapped, uncovered })
                }
            }
        })
        .collect();

    let mut uncovered: Vec<Issue> = columns.iter().flat_map(|c| c.uncovered.iter().cloned()).collect();
    sort_by_row_column_code(&mut uncovered);
    if strict && !uncovered.is_empty() {
        return Err(uncovered);
    }

    let mut report = HarmonizationReport {
        values_remapped: columns.iter().map(|c| c.remapped).sum(),
        uncovered_values: uncovered.len(),
        ..Default::default()
    };
    for v in &d.variables {
        match action_of(m, &v.id).0 {
            MappingAction::Map => report.variables_mapped += 1,
            MappingAction::Passthrough => report.variables_passed_through += 1,
            MappingAction::Drop => report.variables_dropped += 1,
        }
    }
    report.warnings = static_issues.into_iter().chain(uncovered).collect();

    let (header, values): (Vec<String>, Vec<Vec<String>>) = columns.into_iter().map(|c| (c.name, c.values)).unzip();
    let table = Table::from_columns(header, values);
    Ok((table, harmonized_dictionary(d, cb, m), report))
}

/// The original and harmonized bundles side by side.
#[derive(Debug, Clone)]
pub struct HarmonizedPair {
    pub original: FileBundle,
    pub harmonized: FileBundle,
    pub report: HarmonizationReport,
}

pub fn both_versions(
    b: &FileBundle,
    cb: &Codebook,
    m: &MappingSet,
    opts: &HarmonizeOptions,
) -> Result<HarmonizedPair, Vec<Issue>> {
    let (table, dictionary, report) = apply_mappings(&b.table, &b.dictionary, cb, m, opts)?;
    let mut meta = b.file_metadata.clone();
    meta.file_name = harmonized_file_name(&b.file_metadata.file_name);
    meta.harmonized = true;
    meta.summary = Some(summarize(&table, &dictionary, &opts.missing));
    Ok(HarmonizedPair {
        original: b.clone(),
        harmonized: FileBundle { table, dictionary, file_metadata: meta },
        report,
    })
}
