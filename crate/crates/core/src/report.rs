//! The valuation report shared by all engines: per-source and
//! per-contributor values plus method metadata and efficiency checks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ContributorId, SourceId};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub utility: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_count: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Set when a sample-count override voids the (ε, δ) guarantee.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guarantee_void: Option<bool>,
    /// Elapsed milliseconds; excluded from determinism comparisons and never
    /// serialized into report files.
    #[serde(skip)]
    pub wall_clock_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuationReport {
    pub method: String,
    pub per_source: BTreeMap<SourceId, f64>,
    pub per_contributor: BTreeMap<ContributorId, f64>,
    pub metadata: ReportMetadata,
    /// |Σ_{z∈D_t} φ(z) − (v(U_t) − v(U_{t-1}))| per group, when computed.
    pub group_residuals: Vec<f64>,
}

impl ValuationReport {
    pub fn new(method: &str, utility: &str) -> Self {
        ValuationReport {
            method: method.to_string(),
            per_source: BTreeMap::new(),
            per_contributor: BTreeMap::new(),
            metadata: ReportMetadata {
                utility: utility.to_string(),
                ..ReportMetadata::default()
            },
            group_residuals: Vec::new(),
        }
    }

    pub fn total_value(&self) -> f64 {
        self.per_source.values().sum()
    }

    /// Fill `per_contributor` by summing each contributor's owned sources.
    /// Contributors listed in the map but owning no valued source get 0.
    pub fn aggregate_contributors(
        &mut self,
        ownership: &BTreeMap<SourceId, ContributorId>,
    ) -> Result<()> {
        let mut totals: BTreeMap<ContributorId, f64> = ownership
            .values()
            .map(|c| (c.clone(), 0.0))
            .collect();
        for (source, value) in &self.per_source {
            let owner = ownership
                .get(source)
                .ok_or_else(|| Error::UnownedSource {
                    id: source.0.clone(),
                })?;
            *totals.get_mut(owner).unwrap() += value;
        }
        self.per_contributor = totals;
        Ok(())
    }
}

/// Contributor aggregation as a standalone step: returns a copy of the
/// report with `per_contributor` recomputed from the ownership map.
pub fn aggregate_contributors(
    report: &ValuationReport,
    ownership: &BTreeMap<SourceId, ContributorId>,
) -> Result<ValuationReport> {
    let mut out = report.clone();
    out.aggregate_contributors(ownership)?;
    Ok(out)
}
