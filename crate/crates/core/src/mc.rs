//! Monte Carlo ADS: permutation sampling with the Hoeffding-style sample
//! size m★ = ⌈r²/(2ε²)·ln(2n/δ)⌉, a running-mean estimator, and contributor
//! aggregation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    sample_ordered_permutation_indexed, ContributorId, OrderedGroups, SourceId, SourceSet,
};
use crate::report::ValuationReport;
use crate::utility::Utility;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub range_bound: f64,
    pub seed: u64,
    /// Budgeted runs may pin the permutation count; the report then flags
    /// that the (ε, δ) guarantee no longer holds.
    pub max_permutations_override: Option<u64>,
}

impl McConfig {
    pub fn new(epsilon: f64, delta: f64, range_bound: f64, seed: u64) -> Self {
        McConfig {
            epsilon,
            delta,
            range_bound,
            seed,
            max_permutations_override: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidTolerance {
                reason: format!("epsilon must be positive and finite, got {}", self.epsilon),
            });
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidTolerance {
                reason: format!("delta must lie in (0, 1), got {}", self.delta),
            });
        }
        if !(self.range_bound > 0.0 && self.range_bound.is_finite()) {
            return Err(Error::InvalidTolerance {
                reason: format!(
                    "range bound must be positive and finite, got {}",
                    self.range_bound
                ),
            });
        }
        if self.max_permutations_override == Some(0) {
            return Err(Error::InvalidTolerance {
                reason: "permutation override must be positive".into(),
            });
        }
        Ok(())
    }
}

/// m★ = ⌈r²/(2ε²) · ln(2n/δ)⌉ (natural logarithm): enough sampled
/// permutations for every estimate to sit within ε of the truth with
/// probability at least 1 − δ, by Hoeffding plus a union bound over n.
pub fn required_sample_size(cfg: &McConfig, n: usize) -> Result<u64> {
    cfg.validate()?;
    if n < 1 {
        return Err(Error::InvalidTolerance {
            reason: "need at least one source".into(),
        });
    }
    let r = cfg.range_bound;
    let raw = r * r / (2.0 * cfg.epsilon * cfg.epsilon) * (2.0 * n as f64 / cfg.delta).ln();
    Ok((raw.ceil() as u64).max(1))
}

/// Chunk size for the deterministic parallel reduce. Estimates within a
/// chunk use the running-mean update; chunk means are then combined in fixed
/// chunk order, so the result is independent of thread count.
const CHUNK: u64 = 256;

/// Monte Carlo ADS over sampled ordered permutations.
///
/// Each sampled permutation is walked once left to right, giving all n
/// one-step marginal contributions with n utility calls; per-source
/// estimates are running means over the permutations.
pub fn mc_ads<U: Utility + ?Sized>(
    groups: &OrderedGroups,
    v: &U,
    cfg: &McConfig,
    ownership: Option<&BTreeMap<SourceId, ContributorId>>,
) -> Result<ValuationReport> {
    cfg.validate()?;
    let sources: Vec<SourceId> = groups.all_sources().into_iter().collect();
    let index_of: BTreeMap<&SourceId, usize> =
        sources.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let n = sources.len();
    let m_star = required_sample_size(cfg, n)?;
    let m = cfg.max_permutations_override.unwrap_or(m_star);
    let empty = v.evaluate(&SourceSet::new());

    let num_chunks = m.div_ceil(CHUNK);
    let chunk_means: Vec<(Vec<f64>, u64)> = (0..num_chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(m);
            let mut phi = vec![0.0f64; n];
            for draw in start..end {
                let s = (draw - start + 1) as f64;
                let perm = sample_ordered_permutation_indexed(groups, cfg.seed, draw);
                let mut prefix = SourceSet::new();
                let mut prev = empty;
                for z in &perm.order {
                    prefix.insert(z.clone());
                    let cur = v.evaluate(&prefix);
                    let slot = &mut phi[index_of[z]];
                    *slot = (s - 1.0) / s * *slot + (cur - prev) / s;
                    prev = cur;
                }
            }
            (phi, end - start)
        })
        .collect();

    let mut phi = vec![0.0f64; n];
    let mut weight = 0u64;
    for (chunk_phi, w) in chunk_means {
        let total = (weight + w) as f64;
        let a = weight as f64 / total;
        let b = w as f64 / total;
        for (acc, x) in phi.iter_mut().zip(&chunk_phi) {
            *acc = a * *acc + b * x;
        }
        weight += w;
    }

    let mut report = ValuationReport::new("mc", "custom");
    report.per_source = sources.iter().cloned().zip(phi).collect();
    report.metadata.seed = Some(cfg.seed);
    report.metadata.sample_count = Some(m);
    report.metadata.epsilon = Some(cfg.epsilon);
    report.metadata.delta = Some(cfg.delta);
    report.metadata.range_bound = Some(cfg.range_bound);
    if cfg.max_permutations_override.is_some() {
        report.metadata.guarantee_void = Some(true);
    }
    report.group_residuals = crate::exact::verify_group_efficiency(&report, groups, v);
    match ownership {
        Some(map) => report.aggregate_contributors(map)?,
        None => {
            let identity: BTreeMap<SourceId, ContributorId> = sources
                .iter()
                .map(|s| (s.clone(), ContributorId(s.0.clone())))
                .collect();
            report.aggregate_contributors(&identity)?;
        }
    }
    Ok(report)
}
