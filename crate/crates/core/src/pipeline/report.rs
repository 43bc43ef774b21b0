use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::deid::DeidReport;
use crate::harmonize::HarmonizationReport;
use crate::issue::{Issue, Severity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Scan,
    Deid,
    BundleValidate,
    MetadataValidate,
    Harmonize,
    Store,
    Index,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Scan,
        Stage::Deid,
        Stage::BundleValidate,
        Stage::MetadataValidate,
        Stage::Harmonize,
        Stage::Store,
        Stage::Index,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Scan => "scan",
            Stage::Deid => "deid",
            Stage::BundleValidate => "bundle-validate",
            Stage::MetadataValidate => "metadata-validate",
            Stage::Harmonize => "harmonize",
            Stage::Store => "store",
            Stage::Index => "index",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Passed,
    Failed,
    Skipped,
    NotReached,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub status: StageStatus,
    pub issues: Vec<Issue>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Accepted,
    #[default]
    ReturnedToContributor,
}

/// De-identification counts. Shift offsets stay out of the report.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleDeidSummary {
    pub cells_redacted: usize,
    pub zips_generalized: usize,
    pub zips_zeroed: usize,
    pub dates_shifted: usize,
    pub ages_altered: usize,
    pub sites_pseudonymized: usize,
}

impl From<&DeidReport> for BundleDeidSummary {
    fn from(r: &DeidReport) -> Self {
        BundleDeidSummary {
            cells_redacted: r.cells_redacted,
            zips_generalized: r.zips_generalized,
            zips_zeroed: r.zips_zeroed,
            dates_shifted: r.dates_shifted,
            ages_altered: r.ages_altered,
            sites_pseudonymized: r.sites_pseudonymized,
        }
    }
}

/// What a contributor gets back. Contains no timestamps or absolute paths,
/// so identical runs give identical bytes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackReport {
    pub accession: Option<String>,
    pub verdict: Verdict,
    pub errors: usize,
    pub warnings: usize,
    pub stages: Vec<StageReport>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub deid: BTreeMap<String, BundleDeidSummary>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub harmonization: BTreeMap<String, HarmonizationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persistent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_sha256: Option<String>,
}

impl FeedbackReport {
    /// Marks stages that never ran and sets the totals and verdict.
    pub fn finalize(&mut self) {
        for s in Stage::ALL {
            if !self.stages.iter().any(|r| r.stage == s) {
                self.stages.push(StageReport { stage: s, status: StageStatus::NotReached, issues: Vec::new() });
            }
        }
        self.stages.sort_by_key(|r| r.stage);
        let all = || self.stages.iter().flat_map(|s| &s.issues);
        self.errors = all().filter(|i| i.severity == Severity::Error).count();
        self.warnings = all().filter(|i| i.severity == Severity::Warning).count();
        let complete = self
            .stages
            .iter()
            .all(|s| matches!(s.status, StageStatus::Passed | StageStatus::Skipped));
        self.verdict =
            if self.errors == 0 && complete { Verdict::Accepted } else { Verdict::ReturnedToContributor };
    }

    pub fn accepted(&self) -> bool {
        self.verdict == Verdict::Accepted
    }

    pub fn issues(&self) -> impl Iterator<Item = &Issue> {
        self.stages.iter().flat_map(|s| &s.issues)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }

    /// Short human-readable rendering. At most `per_stage` issues are listed
    /// for each stage.
    pub fn render_text(&self, per_stage: usize) -> String {
        let mut s = String::new();
        let verdict = match self.verdict {
            Verdict::Accepted => "accepted",
            Verdict::ReturnedToContributor => "returned to contributor",
        };
        let acc = self.accession.as_deref().unwrap_or("(no accession)");
        let _ = writeln!(s, "{acc}: {verdict} ({} errors, {} warnings)", self.errors, self.warnings);
        for st in &self.stages {
            let status = match st.status {
                StageStatus::Passed => "passed",
                StageStatus::Failed => "FAILED",
                StageStatus::Skipped => "skipped",
                StageStatus::NotReached => "not reached",
            };
            let _ = writeln!(s, "  {:<18} {status}", st.stage.as_str());
            for i in st.issues.iter().take(per_stage) {
                let _ = writeln!(s, "    {i}");
            }
            if st.issues.len() > per_stage {
                let _ = writeln!(s, "    ... {} more", st.issues.len() - per_stage);
            }
        }
        if let Some(pid) = &self.persistent_id {
            let _ = writeln!(s, "  stored as {pid}");
        }
        s
    }
}
