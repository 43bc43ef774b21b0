use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::codebook::Codebook;
use crate::csvio;
use crate::dictionary::{DataDictionary, Datatype};
use crate::issue::{Issue, IssueCode, Location};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingAction {
    Map,
    Passthrough,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableMapping {
    pub source_variable: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_cde: Option<String>,
    pub action: MappingAction,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub value_map: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingSet {
    pub scope: String,
    pub mappings: Vec<VariableMapping>,
}

impl MappingSet {
    pub fn for_source(&self, variable: &str) -> Option<&VariableMapping> {
        self.mappings.iter().find(|m| m.source_variable == variable)
    }
}

pub fn parse_mapping_set(raw: &[u8]) -> Result<MappingSet, Vec<Issue>> {
    serde_json::from_slice(raw).map_err(|e| {
        vec![Issue::error(IssueCode::MapBadDocument, Location::file("mapping"), format!("bad mapping JSON: {e}"))]
    })
}

pub const CSV_HEADER: [&str; 5] = ["source_variable", "target_cde", "action", "source_code", "target_code"];

/// Imports a mapping spreadsheet exported as CSV. One row per value pair;
/// rows sharing a source variable are merged. Variables without value pairs
/// leave the code columns empty.
pub fn parse_mapping_csv(raw: &[u8], scope: &str) -> Result<MappingSet, Vec<Issue>> {
    let bad = |row: Option<usize>, msg: String| {
        let mut loc = Location::file("mapping");
        loc.row = row;
        vec![Issue::error(IssueCode::MapBadDocument, loc, msg)]
    };
    let text = csvio::decode(raw).map_err(|e| bad(None, format!("not UTF-8: {e}")))?;
    let mut records = csvio::records(text);
    match records.next() {
        Some(h) if h.iter().eq(CSV_HEADER.iter().copied()) => {}
        _ => return Err(bad(Some(1), format!("header must be `{}`", CSV_HEADER.join(",")))),
    }
    let mut set = MappingSet { scope: scope.to_string(), mappings: Vec::new() };
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        if rec.len() != CSV_HEADER.len() {
            return Err(bad(Some(row), "wrong number of cells".into()));
        }
        let action = match &rec[2] {
            "map" => MappingAction::Map,
            "passthrough" => MappingAction::Passthrough,
            "drop" => MappingAction::Drop,
            other => return Err(bad(Some(row), format!("unknown action {other:?}"))),
        };
        let source = rec[0].to_string();
        let target = (!rec[1].is_empty()).then(|| rec[1].to_string());
        let k = *index.entry(source.clone()).or_insert_with(|| {
            set.mappings.push(VariableMapping {
                source_variable: source.clone(),
                target_cde: target.clone(),
                action,
                value_map: BTreeMap::new(),
            });
            set.mappings.len() - 1
        });
        let m = &mut set.mappings[k];
        if m.action != action || m.target_cde != target {
            return Err(bad(Some(row), format!("rows for {source:?} disagree on action or target")));
        }
        match (&rec[3], &rec[4]) {
            ("", "") => {}
            (s, t) if !s.is_empty() && !t.is_empty() => {
                if m.value_map.insert(s.to_string(), t.to_string()).is_some() {
                    return Err(bad(Some(row), format!("source code {s:?} of {source:?} mapped twice")));
                }
            }
            _ => return Err(bad(Some(row), "source_code and target_code must both be set or both empty".into())),
        }
    }
    Ok(set)
}

/// Static checks of a mapping set against the source dictionary and the
/// codebook. Sorted by (source variable, code).
pub fn validate_mappings(d: &DataDictionary, cb: &Codebook, m: &MappingSet) -> Vec<Issue> {
    let file = format!("mapping:{}", m.scope);
    let mut out = Vec::new();
    let mut sources = HashSet::new();
    let mut targets = HashSet::new();
    for vm in &m.mappings {
        let src = vm.source_variable.as_str();
        let loc = || Location::file(&file).with_column(src);
        let err = |code, msg: String| Issue::error(code, loc(), msg);
        if !sources.insert(src) {
            out.push(err(IssueCode::MapDupSource, format!("more than one mapping for {src:?}")));
            continue;
        }
        let spec = d.get(src);
        if spec.is_none() {
            out.push(err(IssueCode::MapUnknownSource, format!("{src:?} is not in the source dictionary")));
        }
        if vm.action != MappingAction::Map {
            continue;
        }
        let Some(target) = vm.target_cde.as_deref() else {
            out.push(err(IssueCode::MapMissingTarget, format!("mapping for {src:?} has no target CDE")));
            continue;
        };
        if !targets.insert(target) {
            out.push(err(IssueCode::MapDupTarget, format!("CDE {target:?} is the target of more than one mapping")));
        }
        let Some(cde) = cb.get(target) else {
            out.push(err(IssueCode::MapUnknownCde, format!("CDE {target:?} is not in the codebook")));
            continue;
        };
        let Some(spec) = spec else { continue };
        let both_categorical = spec.datatype == Datatype::Enum && cde.is_categorical();
        if both_categorical != !vm.value_map.is_empty() {
            out.push(err(
                IssueCode::MapBadValueMap,
                if both_categorical {
                    format!("{src:?} and {target:?} are both categorical and need a value map")
                } else {
                    format!("value map given for {src:?} but {src:?} and {target:?} are not both categorical")
                },
            ));
            continue;
        }
        if !both_categorical {
            let compatible = spec.datatype == cde.datatype
                || (spec.datatype == Datatype::Integer && cde.datatype == Datatype::Decimal)
                || cde.datatype == Datatype::String;
            if !compatible {
                out.push(err(
                    IssueCode::MapTypeIncompatible,
                    format!("{src:?} is {} but {target:?} is {}", spec.datatype, cde.datatype),
                ));
            }
            continue;
        }
        for (s, t) in &vm.value_map {
            if spec.enum_label(s).is_none() {
                out.push(err(IssueCode::MapBadSourceCode, format!("{s:?} is not a code of {src:?}")));
            }
            if cde.label_of(t).is_none() {
                out.push(err(IssueCode::MapBadTargetCode, format!("{t:?} is not a code of {target:?}")));
            }
        }
        for e in &spec.enumeration {
            if !vm.value_map.contains_key(&e.code) {
                out.push(err(
                    IssueCode::MapUncoveredValue,
                    format!("code {:?} of {src:?} has no target in {target:?}", e.code),
                ));
            }
        }
    }

    let mapped_names: HashSet<&str> = m
        .mappings
        .iter()
        .filter(|vm| vm.action == MappingAction::Map)
        .filter_map(|vm| vm.target_cde.as_deref())
        .collect();
    for v in &d.variables {
        match m.for_source(&v.id) {
            None => {
                out.push(Issue::warning(
                    IssueCode::MapUnmappedVariable,
                    Location::file(&file).with_column(v.id.as_str()),
                    format!("{:?} has no mapping and passes through unchanged", v.id),
                ));
            }
            Some(vm) if vm.action != MappingAction::Passthrough => continue,
            Some(_) => {}
        }
        if mapped_names.contains(v.id.as_str()) {
            out.push(Issue::error(
                IssueCode::MapNameCollision,
                Location::file(&file).with_column(v.id.as_str()),
                format!("passthrough variable {:?} collides with a mapped CDE name", v.id),
            ));
        }
    }
    out.sort_by(|a, b| (&a.location.column, a.code, &a.message).cmp(&(&b.location.column, b.code, &b.message)));
    out
}
