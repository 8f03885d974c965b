//! Domain types: instances, sources, contributors, and the ordered-group
//! structure, together with ordered-permutation sampling and enumeration.
//!
//! An ordered permutation of the sources is one whose group indices never
//! decrease along the sequence; there are exactly `∏_t |D_t|!` of them and
//! the sampler draws uniformly from that set.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque identifier of a data source.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceId(pub String);

/// Opaque identifier of a contributor; every source is owned by exactly one.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContributorId(pub String);

impl std::fmt::Display for SourceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::fmt::Display for ContributorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SourceId {
    fn from(s: &str) -> Self {
        SourceId(s.to_string())
    }
}

impl From<&str> for ContributorId {
    fn from(s: &str) -> Self {
        ContributorId(s.to_string())
    }
}

/// A subset of sources, kept sorted so it can key utility caches canonically.
pub type SourceSet = BTreeSet<SourceId>;

/// One labeled record: a fixed-length feature vector plus a categorical tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub features: Vec<f64>,
    pub label: String,
}

/// A contributor-owned multiset of instances; the unit of valuation.
///
/// Instances are referenced by index into the owning [`Dataset`], so two
/// sources may share (duplicate) the same instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    pub id: SourceId,
    pub contributor: ContributorId,
    pub instance_idxs: Vec<usize>,
}

/// A dataset: the instance pool plus the sources drawing from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    instances: Vec<Instance>,
    sources: BTreeMap<SourceId, DataSource>,
    dim: usize,
}

impl Dataset {
    /// Build a dataset, checking feature arity, id uniqueness, and that every
    /// source is non-empty and references valid instances.
    pub fn new(instances: Vec<Instance>, sources: Vec<DataSource>) -> Result<Self> {
        let dim = instances.first().map(|q| q.features.len()).unwrap_or(0);
        let mut seen = BTreeSet::new();
        for q in &instances {
            if q.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: q.features.len(),
                });
            }
            if !seen.insert(q.id.clone()) {
                return Err(Error::InvalidDataset {
                    reason: format!("duplicate instance id `{}`", q.id),
                });
            }
        }
        let mut map = BTreeMap::new();
        for src in sources {
            if src.instance_idxs.is_empty() {
                return Err(Error::InvalidDataset {
                    reason: format!("source `{}` owns no instances", src.id),
                });
            }
            if let Some(&bad) = src.instance_idxs.iter().find(|&&i| i >= instances.len()) {
                return Err(Error::InvalidDataset {
                    reason: format!("source `{}` references missing instance #{bad}", src.id),
                });
            }
            let id = src.id.clone();
            if map.insert(id.clone(), src).is_some() {
                return Err(Error::InvalidDataset {
                    reason: format!("duplicate source id `{id}`"),
                });
            }
        }
        Ok(Dataset {
            instances,
            sources: map,
            dim,
        })
    }

    /// Convenience constructor where every instance becomes its own source,
    /// all owned by one contributor per source id prefix (used by scenarios).
    pub fn per_instance_sources(
        instances: Vec<Instance>,
        contributor_of: impl Fn(&Instance) -> ContributorId,
    ) -> Result<Self> {
        let sources = instances
            .iter()
            .enumerate()
            .map(|(i, q)| DataSource {
                id: SourceId(q.id.clone()),
                contributor: contributor_of(q),
                instance_idxs: vec![i],
            })
            .collect();
        Dataset::new(instances, sources)
    }

    pub fn feature_dim(&self) -> usize {
        self.dim
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn instance(&self, idx: usize) -> &Instance {
        &self.instances[idx]
    }

    pub fn sources(&self) -> impl Iterator<Item = &DataSource> {
        self.sources.values()
    }

    pub fn source(&self, id: &SourceId) -> Option<&DataSource> {
        self.sources.get(id)
    }

    pub fn source_ids(&self) -> SourceSet {
        self.sources.keys().cloned().collect()
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    /// Instance count m(S) of a subset, counting duplicates by frequency.
    pub fn instance_count(&self, subset: &SourceSet) -> usize {
        subset
            .iter()
            .filter_map(|id| self.sources.get(id))
            .map(|s| s.instance_idxs.len())
            .sum()
    }

    /// All instance indices induced by a subset of sources, with multiplicity.
    pub fn instance_pool(&self, subset: &SourceSet) -> Vec<usize> {
        let mut pool = Vec::new();
        for id in subset {
            if let Some(s) = self.sources.get(id) {
                pool.extend_from_slice(&s.instance_idxs);
            }
        }
        pool
    }

    /// Ownership map source → contributor.
    pub fn ownership(&self) -> BTreeMap<SourceId, ContributorId> {
        self.sources
            .values()
            .map(|s| (s.id.clone(), s.contributor.clone()))
            .collect()
    }
}

/// Ordered partition σ = (D_1, …, D_T) of the sources into precedence groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderedGroups {
    groups: Vec<SourceSet>,
    kappa: BTreeMap<SourceId, usize>,
}

impl OrderedGroups {
    /// Validate an ordered grouping against a dataset: groups must be
    /// non-empty, disjoint, and jointly cover every source exactly once.
    pub fn validate(groups: Vec<Vec<SourceId>>, dataset: &Dataset) -> Result<Self> {
        let mut kappa = BTreeMap::new();
        let mut sets = Vec::with_capacity(groups.len());
        for (t, group) in groups.into_iter().enumerate() {
            if group.is_empty() {
                return Err(Error::EmptyGroup { index: t + 1 });
            }
            let mut set = SourceSet::new();
            for id in group {
                if dataset.source(&id).is_none() {
                    return Err(Error::UnknownSource {
                        index: t + 1,
                        id: id.0,
                    });
                }
                if kappa.insert(id.clone(), t).is_some() || !set.insert(id.clone()) {
                    return Err(Error::OverlappingGroups { id: id.0 });
                }
            }
            sets.push(set);
        }
        for id in dataset.sources.keys() {
            if !kappa.contains_key(id) {
                return Err(Error::UncoveredSource { id: id.0.clone() });
            }
        }
        Ok(OrderedGroups {
            groups: sets,
            kappa,
        })
    }

    /// Build directly from disjoint non-empty sets, without a dataset to
    /// check coverage against (used for synthetic games in tests).
    pub fn from_partition(groups: Vec<SourceSet>) -> Result<Self> {
        let mut kappa = BTreeMap::new();
        for (t, set) in groups.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::EmptyGroup { index: t + 1 });
            }
            for id in set {
                if kappa.insert(id.clone(), t).is_some() {
                    return Err(Error::OverlappingGroups { id: id.0.clone() });
                }
            }
        }
        Ok(OrderedGroups { groups, kappa })
    }

    /// Single-group σ = (D): classical Data Shapley ordering.
    pub fn single(dataset: &Dataset) -> Self {
        let all: SourceSet = dataset.source_ids();
        let kappa = all.iter().map(|id| (id.clone(), 0)).collect();
        OrderedGroups {
            groups: vec![all],
            kappa,
        }
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, t: usize) -> &SourceSet {
        &self.groups[t]
    }

    pub fn groups(&self) -> &[SourceSet] {
        &self.groups
    }

    /// Group index (0-based) of a source.
    pub fn group_index(&self, id: &SourceId) -> Option<usize> {
        self.kappa.get(id).copied()
    }

    pub fn all_sources(&self) -> SourceSet {
        self.kappa.keys().cloned().collect()
    }

    pub fn num_sources(&self) -> usize {
        self.kappa.len()
    }

    /// U_{t-1}: union of all groups strictly preceding group `t` (1-based).
    /// `group_prefix(1)` is the empty set.
    pub fn group_prefix(&self, t: usize) -> Result<SourceSet> {
        if t < 1 || t > self.groups.len() {
            return Err(Error::IndexOutOfRange {
                index: t,
                max: self.groups.len(),
            });
        }
        let mut u = SourceSet::new();
        for g in &self.groups[..t - 1] {
            u.extend(g.iter().cloned());
        }
        Ok(u)
    }

    /// Number of ordered permutations `∏_t |D_t|!`, saturating at u128 range.
    pub fn ordered_permutation_count(&self) -> Option<u128> {
        let mut count: u128 = 1;
        for g in &self.groups {
            for k in 1..=g.len() as u128 {
                count = count.checked_mul(k)?;
            }
        }
        Some(count)
    }
}

/// A permutation of all sources whose group indices never decrease.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderedPermutation {
    pub order: Vec<SourceId>,
}

/// Default cap on the number of enumerated ordered permutations.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// Draw one ordered permutation uniformly from R^σ(D).
///
/// Equivalent to `sample_ordered_permutation_indexed(groups, seed, 0)`.
pub fn sample_ordered_permutation(groups: &OrderedGroups, seed: u64) -> OrderedPermutation {
    sample_ordered_permutation_indexed(groups, seed, 0)
}

/// Draw the `draw_index`-th ordered permutation of a run.
///
/// Each draw is seeded from `(seed, draw_index)` via a counter-based stream,
/// so draw k is reproducible without generating draws 0..k and independent
/// draws can run in parallel. Within-group orders come from a Fisher-Yates
/// shuffle per group, concatenated in group order.
pub fn sample_ordered_permutation_indexed(
    groups: &OrderedGroups,
    seed: u64,
    draw_index: u64,
) -> OrderedPermutation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw_index.wrapping_add(1));
    let mut order = Vec::with_capacity(groups.num_sources());
    for g in groups.groups() {
        let mut members: Vec<SourceId> = g.iter().cloned().collect();
        members.shuffle(&mut rng);
        order.extend(members);
    }
    OrderedPermutation { order }
}

/// Enumerate every ordered permutation in R^σ(D).
///
/// Fails with [`Error::EnumerationTooLarge`] when `∏_t |D_t|!` exceeds `cap`
/// (use [`DEFAULT_ENUMERATION_CAP`] unless a caller configures otherwise).
pub fn enumerate_ordered_permutations(
    groups: &OrderedGroups,
    cap: u128,
) -> Result<Vec<OrderedPermutation>> {
    let count = groups
        .ordered_permutation_count()
        .ok_or(Error::EnumerationTooLarge {
            count: u128::MAX,
            cap,
        })?;
    if count > cap {
        return Err(Error::EnumerationTooLarge { count, cap });
    }
    let per_group: Vec<Vec<Vec<SourceId>>> = groups
        .groups()
        .iter()
        .map(|g| {
            let members: Vec<SourceId> = g.iter().cloned().collect();
            permutations_of(&members)
        })
        .collect();
    let mut out = Vec::with_capacity(count as usize);
    let mut stack: Vec<SourceId> = Vec::with_capacity(groups.num_sources());
    cartesian(&per_group, 0, &mut stack, &mut out);
    Ok(out)
}

fn cartesian(
    per_group: &[Vec<Vec<SourceId>>],
    depth: usize,
    stack: &mut Vec<SourceId>,
    out: &mut Vec<OrderedPermutation>,
) {
    if depth == per_group.len() {
        out.push(OrderedPermutation {
            order: stack.clone(),
        });
        return;
    }
    for perm in &per_group[depth] {
        let len = stack.len();
        stack.extend(perm.iter().cloned());
        cartesian(per_group, depth + 1, stack, out);
        stack.truncate(len);
    }
}

fn permutations_of(items: &[SourceId]) -> Vec<Vec<SourceId>> {
    if items.is_empty() {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for (i, head) in items.iter().enumerate() {
        let rest: Vec<SourceId> = items
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, s)| s.clone())
            .collect();
        for mut tail in permutations_of(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}
