#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use fairhub_core::catalog::{FacetField, Filter, Query, Sort, SortField, StudyRecord, COHORT_BUCKETS};
use fairhub_core::deid::DeidKey;
use fairhub_core::pipeline::{PipelineConfig, Resources};
use fairhub_core::synth::{synth_generate, SynthCorpus, SynthSpec};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn test_key() -> DeidKey {
    DeidKey::new((0u8..32).collect::<Vec<_>>()).unwrap()
}

pub struct Submission {
    pub out: PathBuf,
    pub corpus: SynthCorpus,
    pub cfg: PipelineConfig,
    pub res: Resources,
}

impl Submission {
    pub fn study_dir(&self, i: usize) -> PathBuf {
        self.out.join("studies").join(&self.corpus.studies[i].accession)
    }
}

/// Writes a synthetic corpus under `out` and loads its pipeline config.
pub fn submission(spec: &SynthSpec, out: &Path) -> Submission {
    let corpus = synth_generate(spec, out).unwrap();
    let cfg = PipelineConfig::load(&out.join("pipeline.json")).unwrap();
    let res = Resources::load(&cfg).unwrap();
    Submission { out: out.to_path_buf(), corpus, cfg, res }
}

// Brute-force catalog semantics, written without the index.

fn words(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in s.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn record_words(r: &StudyRecord) -> Vec<String> {
    let m = &r.metadata;
    let mut all = words(&m.title);
    all.extend(words(&m.principal_investigator));
    for s in m.keywords.iter().chain(&m.study_domains) {
        all.extend(words(s));
    }
    all
}

fn bucket(n: u64) -> &'static str {
    match n {
        0..=99 => "0-99",
        100..=999 => "100-999",
        1000..=9999 => "1000-9999",
        _ => "10000+",
    }
}

fn field_values(r: &StudyRecord, f: FacetField) -> Vec<String> {
    let m = &r.metadata;
    match f {
        FacetField::Program => vec![m.program.clone()],
        FacetField::NihInstitute => vec![m.nih_institute.clone()],
        FacetField::StudyDomains => m.study_domains.clone(),
        FacetField::PopulationFocus => m.population_focus.clone(),
        FacetField::DataCollectionMethods => m.data_collection_methods.clone(),
        FacetField::StudyDesign => vec![m.study_design.clone()],
        FacetField::CohortSize => vec![bucket(m.estimated_cohort_size).to_string()],
        FacetField::HasDataFiles => vec![if r.has_data_files { "true" } else { "false" }.to_string()],
        FacetField::Variables => r.variables.iter().cloned().collect(),
    }
}

fn filter_holds(r: &StudyRecord, f: &Filter) -> bool {
    match f {
        Filter::Equals(field, v) => field_values(r, *field).contains(v),
        Filter::CohortRange(range) => {
            let n = r.metadata.estimated_cohort_size;
            *range.start() <= n && n <= *range.end()
        }
    }
}

pub fn oracle_matches(r: &StudyRecord, q: &Query) -> bool {
    let ws = record_words(r);
    let text_ok = words(q.text.as_deref().unwrap_or("")).iter().all(|t| ws.iter().any(|w| w.starts_with(t.as_str())));
    let mut groups: BTreeMap<FacetField, Vec<&Filter>> = BTreeMap::new();
    for f in &q.filters {
        let field = match f {
            Filter::Equals(field, _) => *field,
            Filter::CohortRange(_) => FacetField::CohortSize,
        };
        groups.entry(field).or_default().push(f);
    }
    text_ok && groups.values().all(|fs| fs.iter().any(|f| filter_holds(r, f)))
}

/// Total and the accessions of the requested page.
pub fn oracle_search(records: &[StudyRecord], q: &Query) -> (usize, Vec<String>) {
    let mut hits: Vec<&StudyRecord> = records.iter().filter(|r| oracle_matches(r, q)).collect();
    hits.sort_by(|a, b| {
        let (x, y) = (&a.metadata, &b.metadata);
        let key = |m: &fairhub_core::StudyMetadata| match q.sort.field {
            SortField::Title => m.title.clone(),
            SortField::Accession => m.accession.clone(),
            SortField::Program => m.program.clone(),
            SortField::ReleaseDate => m.release_date.clone(),
            SortField::CohortSize => format!("{:020}", m.estimated_cohort_size),
        };
        let mut primary = key(x).cmp(&key(y));
        if q.sort.descending {
            primary = primary.reverse();
        }
        let mut tie = x.accession.cmp(&y.accession);
        if q.sort.descending && q.sort.field == SortField::Accession {
            tie = tie.reverse();
        }
        primary.then(tie)
    });
    let total = hits.len();
    let page = hits.into_iter().skip(q.offset).take(q.limit).map(|r| r.metadata.accession.clone()).collect();
    (total, page)
}

/// value → (total, stack value → count), over the studies matching `q`.
pub fn oracle_histogram(
    records: &[StudyRecord],
    field: FacetField,
    stack_by: Option<FacetField>,
    q: &Query,
) -> BTreeMap<String, (usize, BTreeMap<String, usize>)> {
    let mut out: BTreeMap<String, (usize, BTreeMap<String, usize>)> = BTreeMap::new();
    for r in records.iter().filter(|r| oracle_matches(r, q)) {
        let values: BTreeSet<String> = field_values(r, field).into_iter().collect();
        for v in values {
            let row = out.entry(v).or_default();
            row.0 += 1;
            if let Some(s) = stack_by {
                for sv in field_values(r, s) {
                    *row.1.entry(sv).or_default() += 1;
                }
            }
        }
    }
    out
}

pub fn oracle_autocomplete(records: &[StudyRecord], prefix: &str, k: usize) -> Vec<String> {
    let prefix = prefix.to_lowercase();
    let all: BTreeSet<String> = records.iter().flat_map(record_words).collect();
    all.into_iter().filter(|w| w.starts_with(&prefix)).take(k).collect()
}

const SORTS: [SortField; 5] =
    [SortField::Title, SortField::Accession, SortField::Program, SortField::ReleaseDate, SortField::CohortSize];

/// A random valid query drawn from the corpus' own vocabulary.
pub fn random_query(rng: &mut ChaCha8Rng, records: &[StudyRecord]) -> Query {
    let mut q = Query::default();
    if rng.random_bool(0.6) {
        let r = records.choose(rng).unwrap();
        let ws = record_words(r);
        let n_terms = rng.random_range(1..=2);
        let mut terms = Vec::new();
        for _ in 0..n_terms {
            let w = ws.choose(rng).unwrap();
            let cut = rng.random_range(1..=w.chars().count());
            terms.push(w.chars().take(cut).collect::<String>());
        }
        if rng.random_bool(0.1) {
            terms.push("zzqx".into());
        }
        q.text = Some(terms.join(if rng.random_bool(0.5) { " " } else { ", " }));
    }
    for _ in 0..rng.random_range(0..=3) {
        let field = *FacetField::ALL.choose(rng).unwrap();
        if field == FacetField::CohortSize && rng.random_bool(0.5) {
            let lo = rng.random_range(0..5000u64);
            q.filters.push(Filter::CohortRange(lo..=lo + rng.random_range(0..10_000)));
            continue;
        }
        if field == FacetField::CohortSize {
            let (label, _) = COHORT_BUCKETS.choose(rng).unwrap();
            q.filters.push(Filter::new(field, label).unwrap());
            continue;
        }
        let r = records.choose(rng).unwrap();
        let vals = field_values(r, field);
        let v = vals.choose(rng).cloned().unwrap_or_else(|| "absent".into());
        q.filters.push(Filter::new(field, &v).unwrap());
    }
    q.sort = Sort { field: *SORTS.choose(rng).unwrap(), descending: rng.random_bool(0.5) };
    q.offset = if rng.random_bool(0.7) { 0 } else { rng.random_range(0..records.len().max(1)) };
    q.limit = *[1, 5, 10, 50, 500].choose(rng).unwrap();
    q
}

/// (accession, file, row, column, code, detector) — the shape ledger entries
/// and reported issues are compared in.
pub type DefectKey = (String, String, Option<usize>, String, fairhub_core::IssueCode, Option<String>);

pub fn expected_defects(c: &SynthCorpus) -> BTreeSet<DefectKey> {
    c.ledger
        .iter()
        .map(|d| (d.accession.clone(), d.file.clone(), d.row, d.column.clone(), d.expected_code, d.detector.clone()))
        .collect()
}

/// Everything the scanner and validators report on the raw corpus.
pub fn observed_defects(c: &SynthCorpus) -> BTreeSet<DefectKey> {
    use fairhub_core::dictionary::validate_dictionary;
    use fairhub_core::metadata::validate_metadata;
    use fairhub_core::piiscan::{builtin_detectors, scan_table};
    use fairhub_core::synth::bundle_data_label;
    use fairhub_core::tabledata::{validate_against_dictionary, ValidationOptions};

    let detectors = builtin_detectors();
    let tpl = fairhub_core::samples::study_template();
    let terms = fairhub_core::samples::term_registry();
    let mut out = BTreeSet::new();
    for s in &c.studies {
        for i in validate_metadata(&s.study, &tpl, &terms) {
            let col = i.location.column.clone().unwrap_or_default();
            out.insert((s.accession.clone(), "study.json".to_string(), i.location.row, col, i.code, None));
        }
        for b in &s.bundles {
            let file = bundle_data_label(&b.stem);
            assert!(validate_dictionary(&b.bundle.dictionary).is_empty());
            for f in scan_table(&b.bundle.table, &detectors) {
                out.insert((s.accession.clone(), file.clone(), Some(f.row), f.column.clone(), fairhub_core::IssueCode::PiiFinding, Some(f.detector.clone())));
            }
            let opts = ValidationOptions::for_file(file.clone());
            for i in validate_against_dictionary(&b.bundle.table, &b.bundle.dictionary, &opts) {
                let col = i.location.column.clone().unwrap_or_default();
                out.insert((s.accession.clone(), file.clone(), i.location.row, col, i.code, None));
            }
        }
    }
    out
}

const SINGLE_VALUED: [FacetField; 5] = [
    FacetField::Program,
    FacetField::NihInstitute,
    FacetField::StudyDesign,
    FacetField::CohortSize,
    FacetField::HasDataFiles,
];

/// Checks one random query against the oracle: the search page, a stacked
/// histogram, stack sums and autocomplete.
pub fn check_query(idx: &fairhub_core::catalog::Index, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let records = idx.records();
    let q = random_query(rng, records);
    let got = idx.search(&q).map_err(|e| e.to_string())?;
    let got_page: Vec<String> = got.hits.iter().map(|h| h.accession().to_string()).collect();
    let (total, page) = oracle_search(records, &q);
    if (got.total, &got_page) != (total, &page) {
        return Err(format!("search {q:?}: index {} {got_page:?}, oracle {total} {page:?}", got.total));
    }

    let field = *FacetField::ALL.choose(rng).unwrap();
    let stack = if rng.random_bool(0.7) { Some(*SINGLE_VALUED.choose(rng).unwrap()) } else { None };
    let h = idx.facet_histogram_for(field, stack, &q).map_err(|e| e.to_string())?;
    let want = oracle_histogram(records, field, stack, &q);
    let have: BTreeMap<String, (usize, BTreeMap<String, usize>)> =
        h.rows.iter().map(|r| (r.value.clone(), (r.total, r.stacks.clone()))).collect();
    if have != want {
        return Err(format!("histogram {field}/{stack:?} for {q:?}: index {have:?}, oracle {want:?}"));
    }
    if stack.is_some() {
        if let Some(r) = h.rows.iter().find(|r| r.stacks.values().sum::<usize>() != r.total) {
            return Err(format!("stacks of {}={} do not sum to {}", field, r.value, r.total));
        }
    }

    let r = records.choose(rng).unwrap();
    let ws = record_words(r);
    let w = ws.choose(rng).unwrap();
    let prefix: String = w.chars().take(rng.random_range(0..=w.chars().count().min(4))).collect();
    let k = rng.random_range(1..=20);
    let got: Vec<&str> = idx.autocomplete(&prefix, k);
    let want = oracle_autocomplete(records, &prefix, k);
    if got != want {
        return Err(format!("autocomplete {prefix:?}/{k}: index {got:?}, oracle {want:?}"));
    }
    Ok(())
}
