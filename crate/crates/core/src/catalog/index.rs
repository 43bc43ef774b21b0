use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Bound;

use serde::{Deserialize, Serialize};

use super::{CatalogError, FacetField, Filter, Query, Sort, SortField, StudyRecord};

/// Immutable search index. Record ids are positions in accession order.
#[derive(Debug, Clone, Default)]
pub struct Index {
    records: Vec<StudyRecord>,
    by_accession: HashMap<String, u32>,
    /// token → sorted record ids. Ordered, so prefix lookups are range scans.
    postings: BTreeMap<String, Vec<u32>>,
    facets: HashMap<FacetField, BTreeMap<String, Vec<u32>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult<'a> {
    pub total: usize,
    pub hits: Vec<&'a StudyRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub value: String,
    pub total: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub stacks: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub field: FacetField,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stack_by: Option<FacetField>,
    pub rows: Vec<HistogramRow>,
}

impl Histogram {
    /// Wide CSV: `value,total` then one column per stack value.
    pub fn to_csv(&self) -> Vec<u8> {
        let stacks: BTreeSet<&str> = self.rows.iter().flat_map(|r| r.stacks.keys().map(String::as_str)).collect();
        let mut w = crate::csvio::writer();
        let mut header = vec![self.field.as_str(), "total"];
        header.extend(stacks.iter().copied());
        w.write_record(&header).expect("in-memory write");
        for row in &self.rows {
            let mut rec = vec![row.value.clone(), row.total.to_string()];
            rec.extend(stacks.iter().map(|s| row.stacks.get(*s).copied().unwrap_or(0).to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
        crate::csvio::finish(w)
    }
}

fn union(lists: impl IntoIterator<Item = impl AsRef<[u32]>>) -> Vec<u32> {
    let mut out: Vec<u32> = lists.into_iter().flat_map(|l| l.as_ref().to_vec()).collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn intersect(a: &[u32], b: &[u32]) -> Vec<u32> {
    let (mut i, mut j, mut out) = (0, 0, Vec::new());
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

fn compare(a: &StudyRecord, b: &StudyRecord, sort: Sort) -> Ordering {
    let (x, y) = (&a.metadata, &b.metadata);
    let primary = match sort.field {
        SortField::Title => x.title.cmp(&y.title),
        SortField::Accession => Ordering::Equal,
        SortField::Program => x.program.cmp(&y.program),
        SortField::ReleaseDate => x.release_date.cmp(&y.release_date),
        SortField::CohortSize => x.estimated_cohort_size.cmp(&y.estimated_cohort_size),
    };
    let primary = if sort.descending { primary.reverse() } else { primary };
    let tie = x.accession.cmp(&y.accession);
    let tie = if sort.descending && sort.field == SortField::Accession { tie.reverse() } else { tie };
    primary.then(tie)
}

impl Index {
    pub fn build(mut records: Vec<StudyRecord>) -> Result<Index, CatalogError> {
        records.sort_by(|a, b| a.accession().cmp(b.accession()));
        if let Some(w) = records.windows(2).find(|w| w[0].accession() == w[1].accession()) {
            return Err(CatalogError::DupAccession(w[0].accession().to_string()));
        }
        let mut idx = Index::default();
        for (i, r) in records.iter().enumerate() {
            let id = i as u32;
            idx.by_accession.insert(r.accession().to_string(), id);
            for t in r.tokens() {
                idx.postings.entry(t).or_default().push(id);
            }
            for f in FacetField::ALL {
                let table = idx.facets.entry(f).or_default();
                for v in f.values(r).into_iter().collect::<BTreeSet<_>>() {
                    table.entry(v).or_default().push(id);
                }
            }
        }
        idx.records = records;
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in accession order.
    pub fn records(&self) -> &[StudyRecord] {
        &self.records
    }

    pub fn get(&self, accession: &str) -> Option<&StudyRecord> {
        self.by_accession.get(accession).map(|&i| &self.records[i as usize])
    }

    /// Facet value → accessions, as stored.
    pub fn facet_table(&self, field: FacetField) -> BTreeMap<&str, Vec<&str>> {
        self.facets
            .get(&field)
            .into_iter()
            .flatten()
            .map(|(v, ids)| (v.as_str(), ids.iter().map(|&i| self.records[i as usize].accession()).collect()))
            .collect()
    }

    fn prefix_tokens<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a String, &'a Vec<u32>)> + 'a {
        self.postings
            .range::<str, _>((Bound::Included(prefix), Bound::Unbounded))
            .take_while(move |(t, _)| t.starts_with(prefix))
    }

    fn filter_ids(&self, f: &Filter) -> Vec<u32> {
        match f {
            Filter::Equals(field, v) => self.facets.get(field).and_then(|t| t.get(v)).cloned().unwrap_or_default(),
            Filter::CohortRange(_) => {
                (0..self.records.len() as u32).filter(|&i| f.matches(&self.records[i as usize])).collect()
            }
        }
    }

    /// Ids matching the query's text and filters, unsorted and unpaged.
    fn matching(&self, q: &Query) -> Vec<u32> {
        let mut acc: Option<Vec<u32>> = None;
        let mut narrow = |ids: Vec<u32>| {
            acc = Some(match acc.take() {
                None => ids,
                Some(prev) => intersect(&prev, &ids),
            });
        };
        for term in q.terms() {
            narrow(union(self.prefix_tokens(&term).map(|(_, ids)| ids)));
        }
        let mut by_field: BTreeMap<FacetField, Vec<&Filter>> = BTreeMap::new();
        for f in &q.filters {
            by_field.entry(f.field()).or_default().push(f);
        }
        for filters in by_field.values() {
            narrow(union(filters.iter().map(|f| self.filter_ids(f))));
        }
        acc.unwrap_or_else(|| (0..self.records.len() as u32).collect())
    }

    pub fn search(&self, q: &Query) -> Result<SearchResult<'_>, CatalogError> {
        q.validate()?;
        let mut hits: Vec<&StudyRecord> = self.matching(q).into_iter().map(|i| &self.records[i as usize]).collect();
        hits.sort_by(|a, b| compare(a, b, q.sort));
        let total = hits.len();
        let hits = hits.into_iter().skip(q.offset).take(q.limit).collect();
        Ok(SearchResult { total, hits })
    }

    /// Up to `k` indexed tokens starting with the case-folded prefix, in
    /// lexicographic order.
    pub fn autocomplete(&self, prefix: &str, k: usize) -> Vec<&str> {
        let prefix = prefix.to_lowercase();
        self.postings
            .range::<str, _>((Bound::Included(prefix.as_str()), Bound::Unbounded))
            .take_while(|(t, _)| t.starts_with(&prefix))
            .take(k)
            .map(|(t, _)| t.as_str())
            .collect()
    }

    pub fn facet_histogram(&self, field: FacetField, stack_by: Option<FacetField>) -> Result<Histogram, CatalogError> {
        self.histogram_over(field, stack_by, None)
    }

    /// Histogram restricted to the studies matching `q` (paging ignored).
    pub fn facet_histogram_for(
        &self,
        field: FacetField,
        stack_by: Option<FacetField>,
        q: &Query,
    ) -> Result<Histogram, CatalogError> {
        q.validate()?;
        self.histogram_over(field, stack_by, Some(self.matching(q)))
    }

    /// Each study counts once per value of `field`. Stacking is limited to
    /// single-valued fields, so stacks always sum to the row total.
    fn histogram_over(
        &self,
        field: FacetField,
        stack_by: Option<FacetField>,
        subset: Option<Vec<u32>>,
    ) -> Result<Histogram, CatalogError> {
        if let Some(s) = stack_by {
            if s.is_multi_valued() {
                return Err(CatalogError::BadField(format!("{s} is multi-valued and cannot stack")));
            }
        }
        let subset: Option<BTreeSet<u32>> = subset.map(|v| v.into_iter().collect());
        let rows = self
            .facets
            .get(&field)
            .into_iter()
            .flatten()
            .filter_map(|(value, ids)| {
                let ids: Vec<u32> = match &subset {
                    Some(s) => ids.iter().copied().filter(|i| s.contains(i)).collect(),
                    None => ids.clone(),
                };
                if ids.is_empty() {
                    return None;
                }
                let mut stacks = BTreeMap::new();
                if let Some(s) = stack_by {
                    for &i in &ids {
                        for v in s.values(&self.records[i as usize]) {
                            *stacks.entry(v).or_insert(0) += 1;
                        }
                    }
                }
                Some(HistogramRow { value: value.clone(), total: ids.len(), stacks })
            })
            .collect();
        Ok(Histogram { field, stack_by, rows })
    }
}
