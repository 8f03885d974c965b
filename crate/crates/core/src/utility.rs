//! Utility contracts and the concrete utilities used by the valuation
//! engines: the KNN accuracy surrogate, a replication-invariant 1-NN score,
//! a sign-vote toy model, and an incremental nearest-prototype classifier.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Instance, SourceId, SourceSet};

/// A bounded-range set function over source subsets.
///
/// `evaluate` must be pure: the same subset always yields the same value,
/// and evaluation must be safe to call from multiple threads at once.
pub trait Utility: Sync {
    fn evaluate(&self, subset: &SourceSet) -> f64;

    /// Bound `r` on the width of any one-step marginal contribution.
    /// Accuracy-type utilities use the default of 1.
    fn range_bound(&self) -> f64 {
        1.0
    }

    fn empty_value(&self) -> f64 {
        self.evaluate(&SourceSet::new())
    }
}

impl<U: Utility + ?Sized> Utility for &U {
    fn evaluate(&self, subset: &SourceSet) -> f64 {
        (**self).evaluate(subset)
    }
    fn range_bound(&self) -> f64 {
        (**self).range_bound()
    }
}

/// Closure-backed utility, mostly for tests and random games.
pub struct FnUtility<F: Fn(&SourceSet) -> f64 + Sync> {
    f: F,
    r: f64,
}

impl<F: Fn(&SourceSet) -> f64 + Sync> FnUtility<F> {
    pub fn new(f: F) -> Self {
        FnUtility { f, r: 1.0 }
    }

    pub fn with_range_bound(f: F, r: f64) -> Self {
        FnUtility { f, r }
    }
}

impl<F: Fn(&SourceSet) -> f64 + Sync> Utility for FnUtility<F> {
    fn evaluate(&self, subset: &SourceSet) -> f64 {
        (self.f)(subset)
    }
    fn range_bound(&self) -> f64 {
        self.r
    }
}

/// A utility whose evaluation threads an explicit model state, so value can
/// be measured from the middle of a realized training trajectory.
///
/// `update` never mutates its input; it returns a fresh state.
pub trait StatefulUtility: Sync {
    type State: Clone + PartialEq + Send + Sync;

    fn initial_state(&self) -> Self::State;
    fn update(&self, state: &Self::State, subset: &SourceSet) -> Self::State;
    fn score(&self, state: &Self::State) -> f64;

    /// v(S; A) = score(update(A, S)).
    fn evaluate_at(&self, state: &Self::State, subset: &SourceSet) -> f64 {
        self.score(&self.update(state, subset))
    }

    fn range_bound(&self) -> f64 {
        1.0
    }
}

/// Δ(z | S) = v(S ∪ {z}) − v(S).
pub fn marginal_contribution<U: Utility + ?Sized>(
    v: &U,
    z: &SourceId,
    subset: &SourceSet,
) -> Result<f64> {
    if subset.contains(z) {
        return Err(Error::SourceInSubset { id: z.0.clone() });
    }
    let mut with = subset.clone();
    with.insert(z.clone());
    Ok(v.evaluate(&with) - v.evaluate(subset))
}

/// Δ_A(z | S) = v(S ∪ {z}; A) − v(S; A).
pub fn state_marginal_contribution<U: StatefulUtility>(
    v: &U,
    state: &U::State,
    z: &SourceId,
    subset: &SourceSet,
) -> Result<f64> {
    if subset.contains(z) {
        return Err(Error::SourceInSubset { id: z.0.clone() });
    }
    let mut with = subset.clone();
    with.insert(z.clone());
    Ok(v.evaluate_at(state, &with) - v.evaluate_at(state, subset))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DistanceMetric {
    #[default]
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TieRule {
    /// Break distance ties by instance id, lexicographically.
    #[default]
    ByInstanceId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnUtilityConfig {
    pub k: usize,
    pub metric: DistanceMetric,
    pub tie_rule: TieRule,
}

impl KnnUtilityConfig {
    pub fn new(k: usize) -> Self {
        KnnUtilityConfig {
            k,
            metric: DistanceMetric::Euclidean,
            tie_rule: TieRule::ByInstanceId,
        }
    }
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Instance indices from `pool` sorted by (distance to `q`, instance id).
///
/// The same ordering is used everywhere distances are compared, so the
/// closed-form engine and the plain utilities agree on tie handling.
pub(crate) fn sorted_neighbors(dataset: &Dataset, pool: &[usize], q: &Instance) -> Vec<usize> {
    let mut idxs: Vec<usize> = pool.to_vec();
    idxs.sort_by(|&a, &b| {
        let da = euclidean_distance(&dataset.instance(a).features, &q.features);
        let db = euclidean_distance(&dataset.instance(b).features, &q.features);
        da.partial_cmp(&db)
            .unwrap()
            .then_with(|| dataset.instance(a).id.cmp(&dataset.instance(b).id))
    });
    idxs
}

fn check_dim(dataset: &Dataset, q: &Instance) -> Result<()> {
    if dataset.feature_dim() != q.features.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.feature_dim(),
            got: q.features.len(),
        });
    }
    Ok(())
}

/// KNN accuracy on one test instance: the fraction of the K′ nearest
/// training instances in Ins(S) sharing the test label, with
/// K′ = min(K, m(S)). The empty subset scores 0.
pub fn knn_utility(
    dataset: &Dataset,
    subset: &SourceSet,
    q_test: &Instance,
    cfg: &KnnUtilityConfig,
) -> Result<f64> {
    check_dim(dataset, q_test)?;
    let pool = dataset.instance_pool(subset);
    if pool.is_empty() {
        return Ok(0.0);
    }
    let neighbors = sorted_neighbors(dataset, &pool, q_test);
    let k_eff = cfg.k.min(neighbors.len());
    let hits = neighbors[..k_eff]
        .iter()
        .filter(|&&i| dataset.instance(i).label == q_test.label)
        .count();
    Ok(hits as f64 / k_eff as f64)
}

/// KNN accuracy normalized by the fixed K rather than by K′ = min(K, m(S)):
/// (1/K) Σ_{i=1..min(K, m(S))} 1[label matches]. The closed-form engine and
/// its brute-force oracle both use this normalization, under which every
/// instance's one-step effect on the score is at most 1/K.
pub fn knn_utility_fixed_k(
    dataset: &Dataset,
    subset: &SourceSet,
    q_test: &Instance,
    cfg: &KnnUtilityConfig,
) -> Result<f64> {
    check_dim(dataset, q_test)?;
    let pool = dataset.instance_pool(subset);
    let neighbors = sorted_neighbors(dataset, &pool, q_test);
    let k_eff = cfg.k.min(neighbors.len());
    let hits = neighbors[..k_eff]
        .iter()
        .filter(|&&i| dataset.instance(i).label == q_test.label)
        .count();
    Ok(hits as f64 / cfg.k as f64)
}

/// [`Utility`] wrapper: mean fixed-K KNN accuracy over a test set.
#[derive(Clone)]
pub struct FixedKKnnUtility {
    dataset: Arc<Dataset>,
    test_set: Arc<Vec<Instance>>,
    cfg: KnnUtilityConfig,
}

impl FixedKKnnUtility {
    pub fn new(dataset: Arc<Dataset>, test_set: Arc<Vec<Instance>>, cfg: KnnUtilityConfig) -> Self {
        FixedKKnnUtility {
            dataset,
            test_set,
            cfg,
        }
    }

    /// Same score restricted to a single test instance.
    pub fn single(dataset: Arc<Dataset>, q_test: Instance, cfg: KnnUtilityConfig) -> Self {
        FixedKKnnUtility {
            dataset,
            test_set: Arc::new(vec![q_test]),
            cfg,
        }
    }
}

impl Utility for FixedKKnnUtility {
    fn evaluate(&self, subset: &SourceSet) -> f64 {
        if self.test_set.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .test_set
            .iter()
            .map(|q| knn_utility_fixed_k(&self.dataset, subset, q, &self.cfg).unwrap_or(0.0))
            .sum();
        total / self.test_set.len() as f64
    }
}

/// Mean 1-NN accuracy over a test set; invariant under uniform replication
/// of every instance, which makes it the stand-in for ERM utilities whose
/// minimizers ignore multiplicity.
#[derive(Clone)]
pub struct OneNnUtility {
    dataset: Arc<Dataset>,
    test_set: Arc<Vec<Instance>>,
}

impl OneNnUtility {
    pub fn new(dataset: Arc<Dataset>, test_set: Arc<Vec<Instance>>) -> Self {
        OneNnUtility { dataset, test_set }
    }
}

impl Utility for OneNnUtility {
    fn evaluate(&self, subset: &SourceSet) -> f64 {
        one_nn_utility(&self.dataset, subset, &self.test_set).unwrap_or(0.0)
    }
}

/// Mean over the test set of 1[nearest training instance shares the label].
pub fn one_nn_utility(dataset: &Dataset, subset: &SourceSet, test_set: &[Instance]) -> Result<f64> {
    let pool = dataset.instance_pool(subset);
    if pool.is_empty() || test_set.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for q in test_set {
        check_dim(dataset, q)?;
        let nearest = *sorted_neighbors(dataset, &pool, q).first().unwrap();
        if dataset.instance(nearest).label == q.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / test_set.len() as f64)
}

fn parse_vote_label(label: &str) -> Result<i64> {
    match label {
        "+1" | "1" => Ok(1),
        "-1" => Ok(-1),
        other => Err(Error::InvalidLabel {
            label: other.to_string(),
        }),
    }
}

/// Majority sign vote over absorbed labels: predicts +1 iff the running
/// tally is strictly positive, and scores 1 exactly when it does.
#[derive(Clone)]
pub struct SignVoteUtility {
    dataset: Arc<Dataset>,
}

impl SignVoteUtility {
    /// Fails fast when any instance carries a label outside {−1, +1}.
    pub fn new(dataset: Arc<Dataset>) -> Result<Self> {
        for q in dataset.instances() {
            parse_vote_label(&q.label)?;
        }
        Ok(SignVoteUtility { dataset })
    }

    fn vote_total(&self, subset: &SourceSet) -> i64 {
        self.dataset
            .instance_pool(subset)
            .iter()
            .map(|&i| parse_vote_label(&self.dataset.instance(i).label).unwrap())
            .sum()
    }
}

impl StatefulUtility for SignVoteUtility {
    type State = i64;

    fn initial_state(&self) -> i64 {
        0
    }

    fn update(&self, state: &i64, subset: &SourceSet) -> i64 {
        state + self.vote_total(subset)
    }

    fn score(&self, state: &i64) -> f64 {
        if *state > 0 {
            1.0
        } else {
            0.0
        }
    }
}

/// Per-class running means with counts; updates fold new instances into the
/// means so that two sequential updates equal one combined update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeState {
    pub prototypes: BTreeMap<String, (Vec<f64>, usize)>,
}

/// Incremental nearest-prototype classifier scored on a held-out test set.
#[derive(Clone)]
pub struct PrototypeUtility {
    dataset: Arc<Dataset>,
    test_set: Arc<Vec<Instance>>,
}

impl PrototypeUtility {
    pub fn new(dataset: Arc<Dataset>, test_set: Arc<Vec<Instance>>) -> Self {
        PrototypeUtility { dataset, test_set }
    }
}

impl StatefulUtility for PrototypeUtility {
    type State = PrototypeState;

    fn initial_state(&self) -> PrototypeState {
        PrototypeState {
            prototypes: BTreeMap::new(),
        }
    }

    fn update(&self, state: &PrototypeState, subset: &SourceSet) -> PrototypeState {
        let mut next = state.clone();
        for &idx in &self.dataset.instance_pool(subset) {
            let q = self.dataset.instance(idx);
            let entry = next
                .prototypes
                .entry(q.label.clone())
                .or_insert_with(|| (vec![0.0; q.features.len()], 0));
            entry.1 += 1;
            let w = 1.0 / entry.1 as f64;
            for (m, x) in entry.0.iter_mut().zip(&q.features) {
                *m += w * (x - *m);
            }
        }
        next
    }

    fn score(&self, state: &PrototypeState) -> f64 {
        if state.prototypes.is_empty() || self.test_set.is_empty() {
            return 0.0;
        }
        let mut hits = 0usize;
        for q in self.test_set.iter() {
            let predicted = state
                .prototypes
                .iter()
                .min_by(|(la, (ma, _)), (lb, (mb, _))| {
                    let da = euclidean_distance(ma, &q.features);
                    let db = euclidean_distance(mb, &q.features);
                    da.partial_cmp(&db).unwrap().then_with(|| la.cmp(lb))
                })
                .map(|(label, _)| label.clone())
                .unwrap();
            if predicted == q.label {
                hits += 1;
            }
        }
        hits as f64 / self.test_set.len() as f64
    }
}
