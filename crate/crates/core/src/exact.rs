//! Ground-truth engines: ADS by ordered-permutation enumeration and by the
//! per-group subset closed form, classical Data Shapley as the single-group
//! special case, within-round state-conditioned values, and efficiency
//! verifiers.

use std::collections::{BTreeMap, HashMap};

use crate::error::Result;
use crate::model::{
    enumerate_ordered_permutations, ContributorId, Dataset, OrderedGroups, SourceId, SourceSet,
    DEFAULT_ENUMERATION_CAP,
};
use crate::numeric::{BinomialTable, KahanSum};
use crate::report::ValuationReport;
use crate::utility::{StatefulUtility, Utility};

/// Utility evaluations keyed by canonical sorted subset; enumeration
/// re-visits the same subsets many times over shared prefixes.
struct Memo<'a, U: Utility + ?Sized> {
    v: &'a U,
    cache: HashMap<SourceSet, f64>,
}

impl<'a, U: Utility + ?Sized> Memo<'a, U> {
    fn new(v: &'a U) -> Self {
        Memo {
            v,
            cache: HashMap::new(),
        }
    }

    fn eval(&mut self, subset: &SourceSet) -> f64 {
        if let Some(&cached) = self.cache.get(subset) {
            return cached;
        }
        let value = self.v.evaluate(subset);
        self.cache.insert(subset.clone(), value);
        value
    }
}

fn identity_ownership(groups: &OrderedGroups) -> BTreeMap<SourceId, ContributorId> {
    groups
        .all_sources()
        .into_iter()
        .map(|id| {
            let c = ContributorId(id.0.clone());
            (id, c)
        })
        .collect()
}

fn finish_report<U: Utility + ?Sized>(
    mut report: ValuationReport,
    groups: &OrderedGroups,
    memo: &mut Memo<'_, U>,
    ownership: Option<&BTreeMap<SourceId, ContributorId>>,
) -> Result<ValuationReport> {
    report.group_residuals = group_residuals_from(&report, groups, |s| memo.eval(s));
    match ownership {
        Some(map) => report.aggregate_contributors(map)?,
        None => report.aggregate_contributors(&identity_ownership(groups))?,
    }
    Ok(report)
}

fn group_residuals_from(
    report: &ValuationReport,
    groups: &OrderedGroups,
    mut eval: impl FnMut(&SourceSet) -> f64,
) -> Vec<f64> {
    let mut residuals = Vec::with_capacity(groups.num_groups());
    let mut prefix = SourceSet::new();
    let mut prev = eval(&prefix);
    for t in 0..groups.num_groups() {
        prefix.extend(groups.group(t).iter().cloned());
        let cur = eval(&prefix);
        let group_sum: f64 = groups
            .group(t)
            .iter()
            .map(|z| report.per_source.get(z).copied().unwrap_or(0.0))
            .sum();
        residuals.push((group_sum - (cur - prev)).abs());
        prev = cur;
    }
    residuals
}

/// φ^σ by full enumeration of R^σ(D): the mean one-step marginal
/// contribution along every ordered permutation, each weighted equally.
pub fn exact_ads_permutation<U: Utility + ?Sized>(
    groups: &OrderedGroups,
    v: &U,
    ownership: Option<&BTreeMap<SourceId, ContributorId>>,
    cap: u128,
) -> Result<ValuationReport> {
    let perms = enumerate_ordered_permutations(groups, cap)?;
    let mut memo = Memo::new(v);
    let mut sums: BTreeMap<SourceId, KahanSum> = groups
        .all_sources()
        .into_iter()
        .map(|id| (id, KahanSum::new()))
        .collect();
    for perm in &perms {
        let mut prefix = SourceSet::new();
        let mut prev = memo.eval(&prefix);
        for z in &perm.order {
            prefix.insert(z.clone());
            let cur = memo.eval(&prefix);
            sums.get_mut(z).unwrap().add(cur - prev);
            prev = cur;
        }
    }
    let count = perms.len() as f64;
    let mut report = ValuationReport::new("exact-perm", "custom");
    report.per_source = sums
        .into_iter()
        .map(|(id, s)| (id, s.value() / count))
        .collect();
    finish_report(report, groups, &mut memo, ownership)
}

/// φ^σ by the per-group subset closed form:
/// φ^σ(z ∈ D_t) = (1/|D_t|) Σ_{S ⊆ D_t∖{z}} C(|D_t|−1, |S|)^{-1}
///                 [v(U_{t-1} ∪ S ∪ {z}) − v(U_{t-1} ∪ S)].
pub fn exact_ads_subset<U: Utility + ?Sized>(
    groups: &OrderedGroups,
    v: &U,
    ownership: Option<&BTreeMap<SourceId, ContributorId>>,
    cap: u128,
) -> Result<ValuationReport> {
    for t in 0..groups.num_groups() {
        let d = groups.group(t).len();
        if d >= 1 {
            check_subset_cap(d, cap)?;
        }
    }
    let max_group = groups.groups().iter().map(|g| g.len()).max().unwrap_or(1);
    let table = BinomialTable::new(max_group.max(1));
    let mut memo = Memo::new(v);
    let mut report = ValuationReport::new("exact-subset", "custom");
    for t in 0..groups.num_groups() {
        let prefix = groups.group_prefix(t + 1)?;
        let members: Vec<SourceId> = groups.group(t).iter().cloned().collect();
        let d = members.len();
        for (zi, z) in members.iter().enumerate() {
            let others: Vec<&SourceId> =
                members.iter().enumerate().filter(|&(j, _)| j != zi).map(|(_, s)| s).collect();
            let mut acc = KahanSum::new();
            for mask in 0u32..(1u32 << (d - 1)) {
                let mut base = prefix.clone();
                let mut size = 0u64;
                for (bit, s) in others.iter().enumerate() {
                    if mask & (1 << bit) != 0 {
                        base.insert((*s).clone());
                        size += 1;
                    }
                }
                let without = memo.eval(&base);
                base.insert(z.clone());
                let with = memo.eval(&base);
                acc.add((with - without) / table.binom((d - 1) as u64, size));
            }
            report
                .per_source
                .insert(z.clone(), acc.value() / d as f64);
        }
    }
    finish_report(report, groups, &mut memo, ownership)
}

fn check_subset_cap(group_size: usize, cap: u128) -> Result<()> {
    let subsets = if group_size >= 1 && group_size <= 127 {
        1u128 << (group_size - 1)
    } else {
        u128::MAX
    };
    if subsets > cap {
        return Err(crate::error::Error::EnumerationTooLarge {
            count: subsets,
            cap,
        });
    }
    Ok(())
}

/// Classical Data Shapley: ADS with the single-group ordering σ = (D).
pub fn exact_ds<U: Utility + ?Sized>(
    dataset: &Dataset,
    v: &U,
    ownership: Option<&BTreeMap<SourceId, ContributorId>>,
    cap: u128,
) -> Result<ValuationReport> {
    let groups = OrderedGroups::single(dataset);
    let owned;
    let ownership = match ownership {
        Some(map) => Some(map),
        None => {
            owned = dataset.ownership();
            Some(&owned)
        }
    };
    let mut report = exact_ads_permutation(&groups, v, ownership, cap)?;
    report.method = "ds".to_string();
    Ok(report)
}

/// Classical Data Shapley over an explicit source set (no dataset needed).
pub fn exact_ds_sources<U: Utility + ?Sized>(
    sources: SourceSet,
    v: &U,
    cap: u128,
) -> Result<ValuationReport> {
    let groups = OrderedGroups::from_partition(vec![sources])?;
    let mut report = exact_ads_permutation(&groups, v, None, cap)?;
    report.method = "ds".to_string();
    Ok(report)
}

/// Within-round state-conditioned values along a realized trajectory.
///
/// Round t values use the subset closed form with marginals measured from
/// the state A_{t-1}; the state then advances with the whole round,
/// A_t = update(A_{t-1}, D_t). Residual t compares the round's value sum to
/// score(A_t) − score(A_{t-1}).
pub fn within_round_values<U: StatefulUtility>(
    groups: &OrderedGroups,
    v: &U,
    ownership: Option<&BTreeMap<SourceId, ContributorId>>,
    cap: u128,
) -> Result<ValuationReport> {
    for t in 0..groups.num_groups() {
        check_subset_cap(groups.group(t).len(), cap)?;
    }
    let max_group = groups.groups().iter().map(|g| g.len()).max().unwrap_or(1);
    let table = BinomialTable::new(max_group.max(1));
    let mut report = ValuationReport::new("within-round", "custom");
    let mut residuals = Vec::with_capacity(groups.num_groups());
    let mut state = v.initial_state();
    for t in 0..groups.num_groups() {
        let members: Vec<SourceId> = groups.group(t).iter().cloned().collect();
        let d = members.len();
        let mut round_sum = KahanSum::new();
        for (zi, z) in members.iter().enumerate() {
            let others: Vec<&SourceId> =
                members.iter().enumerate().filter(|&(j, _)| j != zi).map(|(_, s)| s).collect();
            let mut acc = KahanSum::new();
            for mask in 0u32..(1u32 << (d - 1)) {
                let mut subset = SourceSet::new();
                let mut size = 0u64;
                for (bit, s) in others.iter().enumerate() {
                    if mask & (1 << bit) != 0 {
                        subset.insert((*s).clone());
                        size += 1;
                    }
                }
                let without = v.evaluate_at(&state, &subset);
                subset.insert(z.clone());
                let with = v.evaluate_at(&state, &subset);
                acc.add((with - without) / table.binom((d - 1) as u64, size));
            }
            let value = acc.value() / d as f64;
            round_sum.add(value);
            report.per_source.insert(z.clone(), value);
        }
        let before = v.score(&state);
        state = v.update(&state, groups.group(t));
        let after = v.score(&state);
        residuals.push((round_sum.value() - (after - before)).abs());
    }
    report.group_residuals = residuals;
    match ownership {
        Some(map) => report.aggregate_contributors(map)?,
        None => report.aggregate_contributors(&identity_ownership(groups))?,
    }
    Ok(report)
}

/// Recompute per-group efficiency residuals for an existing report:
/// residual_t = |Σ_{z∈D_t} φ(z) − (v(U_t) − v(U_{t-1}))|.
pub fn verify_group_efficiency<U: Utility + ?Sized>(
    report: &ValuationReport,
    groups: &OrderedGroups,
    v: &U,
) -> Vec<f64> {
    let mut memo = Memo::new(v);
    group_residuals_from(report, groups, |s| memo.eval(s))
}

/// Global efficiency residual |Σ_z φ(z) − (v(D) − v(∅))| where D is the set
/// of sources named in the report.
pub fn verify_efficiency<U: Utility + ?Sized>(report: &ValuationReport, v: &U) -> f64 {
    let all: SourceSet = report.per_source.keys().cloned().collect();
    let total: f64 = report.per_source.values().sum();
    (total - (v.evaluate(&all) - v.evaluate(&SourceSet::new()))).abs()
}

/// Convenience wrapper used widely in tests: default enumeration cap.
pub fn default_cap() -> u128 {
    DEFAULT_ENUMERATION_CAP
}
