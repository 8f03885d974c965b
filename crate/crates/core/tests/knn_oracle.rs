//! Cross-checks the closed-form KNN engine against brute-force subset
//! enumeration of the same fixed-K utility on random small configurations.

use std::collections::BTreeMap;
use std::sync::Arc;

use ads_core::exact::exact_ads_subset;
use ads_core::knn::{knn_ads_per_test_point, KnnCaseStats};
use ads_core::model::{ContributorId, Dataset, Instance, OrderedGroups, SourceId};
use ads_core::utility::{FixedKKnnUtility, KnnUtilityConfig};
use ads_core::DEFAULT_ENUMERATION_CAP;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_config(
    rng: &mut ChaCha8Rng,
) -> (Dataset, OrderedGroups, Instance, KnnUtilityConfig) {
    let t = rng.random_range(1..=3);
    let sizes: Vec<usize> = (0..t).map(|_| rng.random_range(1..=6)).collect();
    let mut instances = Vec::new();
    let mut group_ids: Vec<Vec<SourceId>> = Vec::new();
    let mut counter = 0usize;
    for &size in &sizes {
        let mut ids = Vec::new();
        for _ in 0..size {
            let id = format!("q{counter:02}");
            counter += 1;
            instances.push(Instance {
                id: id.clone(),
                features: vec![rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)],
                label: if rng.random_bool(0.5) { "pos" } else { "neg" }.into(),
            });
            ids.push(SourceId(id));
        }
        group_ids.push(ids);
    }
    let dataset =
        Dataset::per_instance_sources(instances, |q| ContributorId(q.id.clone())).unwrap();
    let groups = OrderedGroups::validate(group_ids, &dataset).unwrap();
    let q_test = Instance {
        id: "test".into(),
        features: vec![rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)],
        label: if rng.random_bool(0.5) { "pos" } else { "neg" }.into(),
    };
    let cfg = KnnUtilityConfig::new(rng.random_range(1..=3));
    (dataset, groups, q_test, cfg)
}

#[test]
fn recurrence_matches_subset_oracle_on_random_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut stats = KnnCaseStats::default();
    for trial in 0..200 {
        let (dataset, groups, q_test, cfg) = random_config(&mut rng);
        let fast = knn_ads_per_test_point(&dataset, &groups, &q_test, &cfg).unwrap();
        stats.merge(&fast.stats);

        let utility = FixedKKnnUtility::single(
            Arc::new(dataset.clone()),
            q_test.clone(),
            cfg.clone(),
        );
        let oracle =
            exact_ads_subset(&groups, &utility, None, DEFAULT_ENUMERATION_CAP).unwrap();

        let mut fast_by_source: BTreeMap<SourceId, f64> = BTreeMap::new();
        for (t, values) in fast.per_group.iter().enumerate() {
            let pool = dataset.instance_pool(groups.group(t));
            for (entry, &value) in pool.iter().zip(values) {
                fast_by_source.insert(SourceId(dataset.instance(*entry).id.clone()), value);
            }
        }
        for (source, truth) in &oracle.per_source {
            let got = fast_by_source[source];
            assert!(
                (got - truth).abs() < 1e-12,
                "trial {trial}: source {source} recurrence {got} vs oracle {truth} (k={})",
                cfg.k
            );
        }
    }
    eprintln!(
        "case hits: {:?}, base branch hits: {:?}",
        stats.case_hits, stats.base_hits
    );
    for (idx, hits) in stats.case_hits.iter().enumerate() {
        assert!(*hits >= 10, "recurrence case {} hit only {hits} times", idx + 1);
    }
    for (idx, hits) in stats.base_hits.iter().enumerate() {
        assert!(*hits >= 10, "base branch {} hit only {hits} times", idx + 1);
    }
}
