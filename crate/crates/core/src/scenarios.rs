//! Desk-scale experiment scenarios on synthetic Gaussian blobs: market
//! splits under replication and augmentation, sequential rounds with noisy
//! contributors, and value-guided intervention curves.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{exact_ads_permutation, exact_ds, within_round_values};
use crate::knn::knn_ads;
use crate::model::{
    ContributorId, DataSource, Dataset, Instance, OrderedGroups, SourceId, SourceSet,
    DEFAULT_ENUMERATION_CAP,
};
use crate::utility::{
    knn_utility_fixed_k, KnnUtilityConfig, OneNnUtility, PrototypeUtility, StatefulUtility,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Replication,
    Augmentation,
    SequentialNoisy,
    Intervention,
}

/// Fully deterministic scenario description; every run is a pure function
/// of this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub seed: u64,
    /// Independent seeds averaged into curves and confidence intervals.
    pub num_seeds: usize,
    /// Copies of each instance in the replication market (1 = no copies).
    pub replication_factor: usize,
    /// Standard deviation of the additive jitter applied to augmented
    /// copies; 0 recovers exact replication.
    pub jitter_scale: f64,
    pub rounds: usize,
    pub contributors_per_round: usize,
    /// Probability that a noisy contributor's label is flipped.
    pub flip_prob: f64,
    pub instances_per_source: usize,
    pub n_test: usize,
    /// Upper end of the intervention fraction grid (step 0.05).
    pub fraction_max: f64,
    pub knn_k: usize,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        ScenarioSpec {
            kind,
            seed,
            num_seeds: 10,
            replication_factor: 2,
            jitter_scale: 0.3,
            rounds: 3,
            contributors_per_round: 4,
            flip_prob: 0.7,
            instances_per_source: 3,
            n_test: 8,
            fraction_max: 0.3,
            knn_k: 3,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.replication_factor) {
            return Err(Error::InvalidDataset {
                reason: format!(
                    "replication factor {} outside 1..=3",
                    self.replication_factor
                ),
            });
        }
        if !(0.0..=1.0).contains(&self.fraction_max) {
            return Err(Error::FractionOutOfRange {
                fraction: self.fraction_max,
            });
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::InvalidDataset {
                reason: format!("flip probability {} outside [0, 1]", self.flip_prob),
            });
        }
        if self.rounds == 0
            || self.contributors_per_round == 0
            || self.instances_per_source == 0
            || self.n_test == 0
            || self.num_seeds == 0
            || self.knn_k == 0
        {
            return Err(Error::InvalidDataset {
                reason: "scenario counts must all be positive".into(),
            });
        }
        Ok(())
    }
}

/// One plotted series: grid position, mean metric, and 95% half-width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub method: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub ci: Vec<f64>,
}

/// Contributor-versus-broker totals for a data market scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSplit {
    pub factor: usize,
    pub ds_original_total: f64,
    pub ds_derived_total: f64,
    pub ads_original_total: f64,
    pub ads_derived_total: f64,
    pub grand_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationOutcome {
    pub original_total_before: f64,
    pub derived_total_before: f64,
    pub original_total_after: f64,
    pub derived_total_after: f64,
    pub retained: usize,
    pub augmented: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialNoisyOutcome {
    /// Cumulative noisy-contributor detection curves, one per method, over
    /// the ascending-value inspection order.
    pub detection: Vec<CurveSeries>,
    /// Per-round clean-contributor selection accuracy (x is the 1-based
    /// round index), one series per method.
    pub selection: Vec<CurveSeries>,
    /// Detection AUC per method per seed.
    pub auc_by_method: BTreeMap<String, Vec<f64>>,
}

/// Draw blob instances: class `c` is centred along axis `c mod dim` and
/// labelled `"c{c}"`.
pub fn gaussian_blobs(
    rng: &mut ChaCha8Rng,
    count: usize,
    classes: usize,
    dim: usize,
    spread: f64,
    id_prefix: &str,
) -> Vec<Instance> {
    let noise = Normal::new(0.0, spread).unwrap();
    (0..count)
        .map(|i| {
            let class = i % classes;
            let mut features = vec![0.0; dim];
            features[class % dim] = 3.0 * (1 + class / dim) as f64;
            for f in features.iter_mut() {
                *f += noise.sample(rng);
            }
            Instance {
                id: format!("{id_prefix}{i:03}"),
                features,
                label: format!("c{class}"),
            }
        })
        .collect()
}

/// Mean and normal-approximation 95% half-width.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Area under the detection ROC for scores where higher means "more likely
/// positive", with mid-rank handling of tied scores (Mann-Whitney form).
pub fn detection_auc(scored: &[(f64, bool)]) -> f64 {
    let positives = scored.iter().filter(|(_, y)| *y).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return 0.5;
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.partial_cmp(&scored[b].0).unwrap());
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scored[order[j + 1]].0 == scored[order[i]].0 {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if scored[idx].1 {
                rank_sum += mid_rank;
            }
        }
        i = j + 1;
    }
    let p = positives as f64;
    let n = negatives as f64;
    (rank_sum - p * (p + 1.0) / 2.0) / (p * n)
}

fn seeded(spec_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec_seed);
    rng.set_stream(stream);
    rng
}

const NUM_ORIGINAL_SOURCES: usize = 3;

/// Market split when a broker re-sells verbatim copies: classical DS pays
/// copies as much as originals, while ADS under σ = (originals, copies)
/// keeps the full original total and pays the broker nothing.
pub fn run_replication_scenario(spec: &ScenarioSpec) -> Result<MarketSplit> {
    spec.validate()?;
    let mut rng = seeded(spec.seed, 0);
    let per_source = spec.instances_per_source;
    let instances = gaussian_blobs(
        &mut rng,
        NUM_ORIGINAL_SOURCES * per_source,
        2,
        2,
        0.6,
        "orig",
    );
    let test_set = Arc::new(gaussian_blobs(&mut rng, spec.n_test, 2, 2, 0.6, "test"));

    let mut sources = Vec::new();
    let mut orig_ids = Vec::new();
    let mut copy_ids = Vec::new();
    for s in 0..NUM_ORIGINAL_SOURCES {
        let idxs: Vec<usize> = (s * per_source..(s + 1) * per_source).collect();
        let id = SourceId(format!("orig{s}"));
        orig_ids.push(id.clone());
        sources.push(DataSource {
            id,
            contributor: ContributorId(format!("contributor{s}")),
            instance_idxs: idxs.clone(),
        });
        for copy in 1..spec.replication_factor {
            let id = SourceId(format!("copy{s}x{copy}"));
            copy_ids.push(id.clone());
            sources.push(DataSource {
                id,
                contributor: ContributorId::from("broker"),
                instance_idxs: idxs.clone(),
            });
        }
    }
    let dataset = Arc::new(Dataset::new(instances, sources)?);
    let utility = OneNnUtility::new(dataset.clone(), test_set);

    let ds_report = exact_ds(&dataset, &utility, None, DEFAULT_ENUMERATION_CAP)?;
    let groups = if copy_ids.is_empty() {
        OrderedGroups::validate(vec![orig_ids.clone()], &dataset)?
    } else {
        OrderedGroups::validate(vec![orig_ids.clone(), copy_ids.clone()], &dataset)?
    };
    let ownership = dataset.ownership();
    let ads_report =
        exact_ads_permutation(&groups, &utility, Some(&ownership), DEFAULT_ENUMERATION_CAP)?;

    let total = |report: &crate::report::ValuationReport, ids: &[SourceId]| {
        ids.iter().map(|id| report.per_source[id]).sum::<f64>()
    };
    Ok(MarketSplit {
        factor: spec.replication_factor,
        ds_original_total: total(&ds_report, &orig_ids),
        ds_derived_total: total(&ds_report, &copy_ids),
        ads_original_total: total(&ads_report, &orig_ids),
        ads_derived_total: total(&ads_report, &copy_ids),
        grand_total: ds_report.total_value(),
    })
}

/// Broker adds jittered copies; positive-valued ones are retained. The
/// originals' ADS total is untouched by either step because they form the
/// leading group.
pub fn run_augmentation_scenario(spec: &ScenarioSpec) -> Result<AugmentationOutcome> {
    spec.validate()?;
    let mut rng = seeded(spec.seed, 1);
    let n_orig = 4;
    let mut instances = gaussian_blobs(&mut rng, n_orig, 2, 2, 0.6, "orig");
    let test_set = Arc::new(gaussian_blobs(&mut rng, spec.n_test, 2, 2, 0.6, "test"));
    let noise = Normal::new(0.0, spec.jitter_scale.max(0.0)).unwrap();
    let augmented: Vec<Instance> = (0..n_orig)
        .map(|i| {
            let mut inst = instances[i].clone();
            inst.id = format!("aug{i:03}");
            if spec.jitter_scale > 0.0 {
                for f in inst.features.iter_mut() {
                    *f += noise.sample(&mut rng);
                }
            }
            inst
        })
        .collect();
    instances.extend(augmented);

    let dataset = Arc::new(Dataset::per_instance_sources(instances, |q| {
        if q.id.starts_with("orig") {
            ContributorId::from("contributor")
        } else {
            ContributorId::from("broker")
        }
    })?);
    let utility = OneNnUtility::new(dataset.clone(), test_set);
    let orig_ids: Vec<SourceId> = (0..n_orig).map(|i| SourceId(format!("orig{i:03}"))).collect();
    let aug_ids: Vec<SourceId> = (0..n_orig).map(|i| SourceId(format!("aug{i:03}"))).collect();

    let value_under = |aug_subset: &[SourceId]| -> Result<BTreeMap<SourceId, f64>> {
        let groups = if aug_subset.is_empty() {
            OrderedGroups::from_partition(vec![orig_ids.iter().cloned().collect()])?
        } else {
            OrderedGroups::from_partition(vec![
                orig_ids.iter().cloned().collect(),
                aug_subset.iter().cloned().collect(),
            ])?
        };
        let restricted = RestrictedOneNn {
            inner: &utility,
            active: groups.all_sources(),
        };
        Ok(
            exact_ads_permutation(&groups, &restricted, None, DEFAULT_ENUMERATION_CAP)?
                .per_source,
        )
    };

    let before = value_under(&aug_ids)?;
    let retained: Vec<SourceId> = aug_ids
        .iter()
        .filter(|id| before[*id] > 0.0)
        .cloned()
        .collect();
    let after = value_under(&retained)?;

    let sum = |values: &BTreeMap<SourceId, f64>, ids: &[SourceId]| {
        ids.iter().filter_map(|id| values.get(id)).sum::<f64>()
    };
    Ok(AugmentationOutcome {
        original_total_before: sum(&before, &orig_ids),
        derived_total_before: sum(&before, &aug_ids),
        original_total_after: sum(&after, &orig_ids),
        derived_total_after: sum(&after, &retained),
        retained: retained.len(),
        augmented: aug_ids.len(),
    })
}

/// A view of the 1-NN utility that ignores sources outside `active`, so the
/// same dataset can be revalued with part of the augmentation dropped.
struct RestrictedOneNn<'a> {
    inner: &'a OneNnUtility,
    active: SourceSet,
}

impl crate::utility::Utility for RestrictedOneNn<'_> {
    fn evaluate(&self, subset: &SourceSet) -> f64 {
        let filtered: SourceSet = subset.intersection(&self.active).cloned().collect();
        self.inner.evaluate(&filtered)
    }
}

/// Per-seed data for one sequential run.
struct SequentialRun {
    dataset: Arc<Dataset>,
    groups: OrderedGroups,
    noisy: BTreeMap<ContributorId, bool>,
    utility: PrototypeUtility,
}

fn build_sequential_run(spec: &ScenarioSpec, stream: u64) -> Result<SequentialRun> {
    let mut rng = seeded(spec.seed, 2 + stream);
    let per_source = spec.instances_per_source;
    let k = spec.contributors_per_round;
    let total = spec.rounds * k * per_source;
    let mut instances = gaussian_blobs(&mut rng, total, 2, 2, 0.6, "inst");
    let test_set = Arc::new(gaussian_blobs(&mut rng, spec.n_test, 2, 2, 0.6, "test"));

    let mut sources = Vec::new();
    let mut round_ids: Vec<Vec<SourceId>> = Vec::new();
    let mut noisy = BTreeMap::new();
    let mut cursor = 0usize;
    for t in 0..spec.rounds {
        let mut ids = Vec::new();
        for j in 0..k {
            let contributor = ContributorId(format!("r{t}c{j}"));
            let is_noisy = j >= k - k / 2;
            noisy.insert(contributor.clone(), is_noisy);
            let idxs: Vec<usize> = (cursor..cursor + per_source).collect();
            cursor += per_source;
            if is_noisy {
                for &idx in &idxs {
                    if rng.random_bool(spec.flip_prob) {
                        let flipped = if instances[idx].label == "c0" { "c1" } else { "c0" };
                        instances[idx].label = flipped.to_string();
                    }
                }
            }
            let id = SourceId(format!("s_r{t}c{j}"));
            ids.push(id.clone());
            sources.push(DataSource {
                id,
                contributor,
                instance_idxs: idxs,
            });
        }
        round_ids.push(ids);
    }
    let dataset = Arc::new(Dataset::new(instances, sources)?);
    let groups = OrderedGroups::validate(round_ids, &dataset)?;
    let utility = PrototypeUtility::new(dataset.clone(), test_set);
    Ok(SequentialRun {
        dataset,
        groups,
        noisy,
        utility,
    })
}

/// Within-round leave-one-out from the realized prior state: the utility
/// loss of dropping one source while keeping earlier rounds fixed.
fn within_round_loo(run: &SequentialRun) -> BTreeMap<SourceId, f64> {
    let mut values = BTreeMap::new();
    let mut state = run.utility.initial_state();
    for t in 0..run.groups.num_groups() {
        let round = run.groups.group(t);
        let full = run.utility.evaluate_at(&state, round);
        for z in round {
            let mut rest = round.clone();
            rest.remove(z);
            values.insert(z.clone(), full - run.utility.evaluate_at(&state, &rest));
        }
        state = run.utility.update(&state, round);
    }
    values
}

/// Per-seed contributor scores for each method (ADS, within-round LOO, and
/// a random baseline), plus noisy flags.
pub struct SequentialSeedScores {
    pub by_method: BTreeMap<String, Vec<(f64, bool)>>,
    /// Round index of each scored contributor, aligned with every method's
    /// score vector.
    pub rounds: Vec<usize>,
}

/// Run one seed of the sequential-noisy scenario and return per-contributor
/// valuation scores per method (one source per contributor here, so source
/// values are contributor values).
pub fn sequential_noisy_seed_scores(
    spec: &ScenarioSpec,
    stream: u64,
) -> Result<SequentialSeedScores> {
    let run = build_sequential_run(spec, stream)?;
    let ads = within_round_values(
        &run.groups,
        &run.utility,
        Some(&run.dataset.ownership()),
        DEFAULT_ENUMERATION_CAP,
    )?;
    let loo = within_round_loo(&run);
    let mut rng = seeded(spec.seed, 1_000_000 + stream);
    let ownership = run.dataset.ownership();

    let mut by_method: BTreeMap<String, Vec<(f64, bool)>> = BTreeMap::new();
    let mut rounds = Vec::new();
    for (source, contributor) in &ownership {
        let flag = run.noisy[contributor];
        rounds.push(run.groups.group_index(source).unwrap());
        by_method
            .entry("ads".into())
            .or_default()
            .push((ads.per_source[source], flag));
        by_method
            .entry("loo".into())
            .or_default()
            .push((loo[source], flag));
        by_method
            .entry("random".into())
            .or_default()
            .push((rng.random_range(0.0..1.0), flag));
    }
    Ok(SequentialSeedScores { by_method, rounds })
}

/// Fraction of truly clean contributors recovered when keeping the
/// top-valued `clean_count` entries of one round.
fn round_selection_accuracy(scored: &[(f64, bool)]) -> f64 {
    let clean_count = scored.iter().filter(|(_, noisy)| !noisy).count();
    if clean_count == 0 || clean_count == scored.len() {
        return 1.0;
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.partial_cmp(&scored[a].0).unwrap());
    let kept_clean = order
        .iter()
        .take(clean_count)
        .filter(|&&idx| !scored[idx].1)
        .count();
    kept_clean as f64 / clean_count as f64
}

/// Sequential rounds with half the contributors mislabelling their data:
/// detection curves (cumulative share of noisy contributors found when
/// inspecting in ascending value order) and per-seed detection AUCs.
pub fn run_sequential_noisy_scenario(spec: &ScenarioSpec) -> Result<SequentialNoisyOutcome> {
    spec.validate()?;
    let n_contributors = spec.rounds * spec.contributors_per_round;
    let mut curves_by_method: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    let mut selection_by_method: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    let mut auc_by_method: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for stream in 0..spec.num_seeds as u64 {
        let scores = sequential_noisy_seed_scores(spec, stream)?;
        for (method, scored) in &scores.by_method {
            let per_round: Vec<f64> = (0..spec.rounds)
                .map(|t| {
                    let round_scores: Vec<(f64, bool)> = scored
                        .iter()
                        .zip(&scores.rounds)
                        .filter(|(_, &r)| r == t)
                        .map(|(entry, _)| *entry)
                        .collect();
                    round_selection_accuracy(&round_scores)
                })
                .collect();
            selection_by_method
                .entry(method.clone())
                .or_default()
                .push(per_round);
            // suspicion score is the negated value: low value, high suspicion
            let suspicion: Vec<(f64, bool)> = scored.iter().map(|(v, y)| (-v, *y)).collect();
            auc_by_method
                .entry(method.clone())
                .or_default()
                .push(detection_auc(&suspicion));

            let mut order: Vec<usize> = (0..scored.len()).collect();
            order.sort_by(|&a, &b| scored[a].0.partial_cmp(&scored[b].0).unwrap());
            let total_noisy = scored.iter().filter(|(_, y)| *y).count().max(1);
            let mut found = 0usize;
            let curve: Vec<f64> = order
                .iter()
                .map(|&idx| {
                    if scored[idx].1 {
                        found += 1;
                    }
                    found as f64 / total_noisy as f64
                })
                .collect();
            curves_by_method.entry(method.clone()).or_default().push(curve);
        }
    }

    let detection = curves_by_method
        .into_iter()
        .map(|(method, rows)| {
            let mut x = Vec::new();
            let mut y = Vec::new();
            let mut ci = Vec::new();
            for pos in 0..n_contributors {
                let column: Vec<f64> = rows.iter().map(|row| row[pos]).collect();
                let (mean, half) = mean_ci95(&column);
                x.push((pos + 1) as f64 / n_contributors as f64);
                y.push(mean);
                ci.push(half);
            }
            CurveSeries { method, x, y, ci }
        })
        .collect();
    let selection = selection_by_method
        .into_iter()
        .map(|(method, rows)| {
            let mut x = Vec::new();
            let mut y = Vec::new();
            let mut ci = Vec::new();
            for t in 0..spec.rounds {
                let column: Vec<f64> = rows.iter().map(|row| row[t]).collect();
                let (mean, half) = mean_ci95(&column);
                x.push((t + 1) as f64);
                y.push(mean);
                ci.push(half);
            }
            CurveSeries { method, x, y, ci }
        })
        .collect();
    Ok(SequentialNoisyOutcome {
        detection,
        selection,
        auc_by_method,
    })
}

/// One seed of the intervention setup: blob originals, jittered and
/// label-flip-prone augmentations, KNN-ADS values for the augmented
/// instances, and the instance pools needed to re-evaluate utilities.
pub struct InterventionRun {
    pub dataset: Arc<Dataset>,
    pub test_set: Vec<Instance>,
    pub original_ids: Vec<SourceId>,
    /// Augmented source ids sorted by ascending ADS value.
    pub augmented_by_value: Vec<(SourceId, f64)>,
}

pub fn build_intervention_run(spec: &ScenarioSpec, stream: u64) -> Result<InterventionRun> {
    let mut rng = seeded(spec.seed, 3 + stream);
    let n_orig = 20;
    let n_aug = 20;
    let mut instances = gaussian_blobs(&mut rng, n_orig, 2, 2, 0.6, "orig");
    let test_set = gaussian_blobs(&mut rng, spec.n_test.max(10), 2, 2, 0.6, "test");
    let noise = Normal::new(0.0, spec.jitter_scale.max(1e-9)).unwrap();
    for i in 0..n_aug {
        let mut inst = instances[i % n_orig].clone();
        inst.id = format!("aug{i:03}");
        for f in inst.features.iter_mut() {
            *f += noise.sample(&mut rng);
        }
        // a third of the augmentations get corrupted labels so value-guided
        // filtering has something to find
        if i % 3 == 0 {
            inst.label = if inst.label == "c0" { "c1" } else { "c0" }.to_string();
        }
        instances.push(inst);
    }
    let dataset = Arc::new(Dataset::per_instance_sources(instances, |q| {
        if q.id.starts_with("orig") {
            ContributorId::from("contributor")
        } else {
            ContributorId::from("broker")
        }
    })?);
    let original_ids: Vec<SourceId> =
        (0..n_orig).map(|i| SourceId(format!("orig{i:03}"))).collect();
    let augmented_ids: Vec<SourceId> =
        (0..n_aug).map(|i| SourceId(format!("aug{i:03}"))).collect();
    let groups = OrderedGroups::validate(
        vec![original_ids.clone(), augmented_ids.clone()],
        &dataset,
    )?;
    let cfg = KnnUtilityConfig::new(spec.knn_k);
    let valuation = knn_ads(&dataset, &groups, &test_set, &cfg, None)?;
    let mut augmented_by_value: Vec<(SourceId, f64)> = augmented_ids
        .iter()
        .map(|id| (id.clone(), valuation.report.per_source[id]))
        .collect();
    augmented_by_value
        .sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    Ok(InterventionRun {
        dataset,
        test_set,
        original_ids,
        augmented_by_value,
    })
}

fn mean_knn_accuracy(
    dataset: &Dataset,
    subset: &SourceSet,
    test_set: &[Instance],
    cfg: &KnnUtilityConfig,
) -> f64 {
    let total: f64 = test_set
        .iter()
        .map(|q| knn_utility_fixed_k(dataset, subset, q, cfg).unwrap_or(0.0))
        .sum();
    total / test_set.len() as f64
}

/// Relative-accuracy curves for removal and addition interventions guided
/// by the augmented instances' values, plus random baselines. Each curve is
/// normalized by its own fraction-0 utility, so it starts at exactly 1.
pub fn run_intervention_curves(
    spec: &ScenarioSpec,
    run: &InterventionRun,
    stream: u64,
) -> Result<Vec<CurveSeries>> {
    spec.validate()?;
    let cfg = KnnUtilityConfig::new(spec.knn_k);
    let n_aug = run.augmented_by_value.len();
    let mut fractions = Vec::new();
    let mut f = 0.0;
    while f <= spec.fraction_max + 1e-9 {
        fractions.push(f);
        f += 0.05;
    }

    let mut rng = seeded(spec.seed, 2_000_000 + stream);
    let mut shuffled: Vec<SourceId> = run
        .augmented_by_value
        .iter()
        .map(|(id, _)| id.clone())
        .collect();
    use rand::seq::SliceRandom;
    shuffled.shuffle(&mut rng);

    let ascending: Vec<SourceId> = run
        .augmented_by_value
        .iter()
        .map(|(id, _)| id.clone())
        .collect();
    let descending: Vec<SourceId> = ascending.iter().rev().cloned().collect();

    let full: SourceSet = run
        .original_ids
        .iter()
        .chain(ascending.iter())
        .cloned()
        .collect();
    let originals: SourceSet = run.original_ids.iter().cloned().collect();
    let base_full = mean_knn_accuracy(&run.dataset, &full, &run.test_set, &cfg);
    let base_orig = mean_knn_accuracy(&run.dataset, &originals, &run.test_set, &cfg);

    let mut curves = Vec::new();
    for (tag, order, removal) in [
        ("remove-lowest", &ascending, true),
        ("remove-highest", &descending, true),
        ("remove-random", &shuffled, true),
        ("add-lowest", &ascending, false),
        ("add-highest", &descending, false),
        ("add-random", &shuffled, false),
    ] {
        let base = if removal { base_full } else { base_orig };
        let mut y = Vec::new();
        for &frac in &fractions {
            let count = (frac * n_aug as f64).round() as usize;
            let subset: SourceSet = if removal {
                let dropped: SourceSet = order.iter().take(count).cloned().collect();
                full.difference(&dropped).cloned().collect()
            } else {
                originals
                    .iter()
                    .chain(order.iter().take(count))
                    .cloned()
                    .collect()
            };
            let value = mean_knn_accuracy(&run.dataset, &subset, &run.test_set, &cfg);
            y.push(if base > 0.0 { value / base } else { 0.0 });
        }
        curves.push(CurveSeries {
            method: tag.to_string(),
            x: fractions.clone(),
            y,
            ci: vec![0.0; fractions.len()],
        });
    }
    Ok(curves)
}

/// Whole intervention scenario: independent seeds averaged per curve.
pub fn run_intervention_scenario(spec: &ScenarioSpec) -> Result<Vec<CurveSeries>> {
    spec.validate()?;
    let mut per_method: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    let mut xs: Vec<f64> = Vec::new();
    for stream in 0..spec.num_seeds as u64 {
        let run = build_intervention_run(spec, stream)?;
        for curve in run_intervention_curves(spec, &run, stream)? {
            xs = curve.x.clone();
            per_method.entry(curve.method).or_default().push(curve.y);
        }
    }
    Ok(per_method
        .into_iter()
        .map(|(method, rows)| {
            let mut y = Vec::new();
            let mut ci = Vec::new();
            for pos in 0..xs.len() {
                let column: Vec<f64> = rows.iter().map(|row| row[pos]).collect();
                let (mean, half) = mean_ci95(&column);
                y.push(mean);
                ci.push(half);
            }
            CurveSeries {
                method,
                x: xs.clone(),
                y,
                ci,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_basic_properties() {
        let perfect = vec![(0.9, true), (0.8, true), (0.2, false), (0.1, false)];
        assert_eq!(detection_auc(&perfect), 1.0);
        let inverted = vec![(0.1, true), (0.2, true), (0.8, false), (0.9, false)];
        assert_eq!(detection_auc(&inverted), 0.0);
        let all_tied = vec![(0.5, true), (0.5, false), (0.5, true), (0.5, false)];
        assert!((detection_auc(&all_tied) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mean_ci_on_constant_series() {
        let (mean, half) = mean_ci95(&[0.4, 0.4, 0.4]);
        assert!((mean - 0.4).abs() < 1e-12);
        assert!(half.abs() < 1e-9);
    }

    #[test]
    fn replication_market_split() {
        let mut spec = ScenarioSpec::new(ScenarioKind::Replication, 9);
        for factor in 1..=3 {
            spec.replication_factor = factor;
            let split = run_replication_scenario(&spec).unwrap();
            // ADS pays the broker nothing at any factor
            assert!(split.ads_derived_total.abs() < 1e-12, "factor {factor}");
            assert!(
                (split.ads_original_total - split.grand_total).abs() < 1e-12,
                "factor {factor}"
            );
            // DS splits the grand total at 1/factor to the originals
            let expected = split.grand_total / factor as f64;
            assert!(
                (split.ds_original_total - expected).abs() < 1e-10,
                "factor {factor}: {} vs {expected}",
                split.ds_original_total
            );
        }
    }

    #[test]
    fn augmentation_preserves_original_total() {
        let spec = ScenarioSpec::new(ScenarioKind::Augmentation, 21);
        let out = run_augmentation_scenario(&spec).unwrap();
        assert!(
            (out.original_total_before - out.original_total_after).abs() < 1e-12,
            "{} vs {}",
            out.original_total_before,
            out.original_total_after
        );
        assert!(out.retained <= out.augmented);
    }

    #[test]
    fn zero_jitter_augmentation_is_replication() {
        let mut spec = ScenarioSpec::new(ScenarioKind::Augmentation, 33);
        spec.jitter_scale = 0.0;
        let out = run_augmentation_scenario(&spec).unwrap();
        // verbatim copies of already-present instances add nothing
        assert!(out.derived_total_before.abs() < 1e-12);
    }

    #[test]
    fn sequential_scenario_deterministic_and_sane() {
        let mut spec = ScenarioSpec::new(ScenarioKind::SequentialNoisy, 77);
        spec.num_seeds = 3;
        let a = run_sequential_noisy_scenario(&spec).unwrap();
        let b = run_sequential_noisy_scenario(&spec).unwrap();
        assert_eq!(a.detection, b.detection);
        for curve in &a.detection {
            assert!(curve.x.windows(2).all(|w| w[0] < w[1]));
            assert!((curve.y.last().unwrap() - 1.0).abs() < 1e-12);
        }
        assert_eq!(a.auc_by_method["ads"].len(), 3);
        for curve in &a.selection {
            assert_eq!(curve.x.len(), spec.rounds);
            assert!(curve.y.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn noiseless_round_clones_get_equal_values() {
        let mut spec = ScenarioSpec::new(ScenarioKind::SequentialNoisy, 5);
        spec.flip_prob = 0.0;
        let scores = sequential_noisy_seed_scores(&spec, 0).unwrap();
        // with no flips the "noisy" flag carries no signal, so AUC ~ 0.5
        let suspicion: Vec<(f64, bool)> = scores.by_method["ads"]
            .iter()
            .map(|(v, y)| (-v, *y))
            .collect();
        let auc = detection_auc(&suspicion);
        assert!((auc - 0.5).abs() < 0.45, "degenerate auc {auc}");
    }

    #[test]
    fn intervention_curves_normalized_and_monotone_grid() {
        let mut spec = ScenarioSpec::new(ScenarioKind::Intervention, 13);
        spec.num_seeds = 2;
        let curves = run_intervention_scenario(&spec).unwrap();
        assert_eq!(curves.len(), 6);
        for curve in &curves {
            assert!(curve.x.windows(2).all(|w| w[0] < w[1]));
            assert!((curve.y[0] - 1.0).abs() < 1e-12, "{} starts at {}", curve.method, curve.y[0]);
            assert!(curve.ci.iter().all(|&c| c >= 0.0));
        }
    }

    #[test]
    fn intervention_single_point_grid() {
        let mut spec = ScenarioSpec::new(ScenarioKind::Intervention, 13);
        spec.fraction_max = 0.0;
        spec.num_seeds = 1;
        let curves = run_intervention_scenario(&spec).unwrap();
        for curve in &curves {
            assert_eq!(curve.x.len(), 1);
            assert!((curve.y[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = ScenarioSpec::new(ScenarioKind::Replication, 1);
        spec.replication_factor = 5;
        assert!(run_replication_scenario(&spec).is_err());
        let mut spec = ScenarioSpec::new(ScenarioKind::Intervention, 1);
        spec.fraction_max = 1.5;
        assert!(run_intervention_scenario(&spec).is_err());
    }
}
