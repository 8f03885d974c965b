//! Closed-form ADS under the fixed-K KNN utility: per-test-point precedence
//! counts, the farthest-instance base value, a backward recurrence over each
//! group's distance ranking, and aggregation from instances to sources and
//! contributors.
//!
//! All values here are computed at the instance level on the ordered
//! instance groups (Ins(D_1), …, Ins(D_T)), then summed back to sources.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ContributorId, Dataset, Instance, OrderedGroups, SourceId};
use crate::numeric::BinomialTable;
use crate::report::ValuationReport;
use crate::utility::{euclidean_distance, KnnUtilityConfig};

/// Distance ranking of one (test point, group) pair.
///
/// `p_order` and `c_order` are positions into the respective pools, nearest
/// first. `counts[i]` is c_{t,i+1}: how many prefix instances rank ahead of
/// the (i+1)-th nearest in-group instance. Prefix instances win exact
/// distance ties not resolved by instance id, so counts are consistent with
/// the utility's neighbor ordering.
#[derive(Debug, Clone)]
pub struct NeighborRanking {
    pub p_order: Vec<usize>,
    pub c_order: Vec<usize>,
    pub counts: Vec<usize>,
}

/// Which recurrence cases and base-value branches a run exercised; used by
/// test harnesses to check coverage of all code paths.
#[derive(Debug, Clone, Copy, Default)]
pub struct KnnCaseStats {
    pub case_hits: [u64; 4],
    pub base_hits: [u64; 3],
}

impl KnnCaseStats {
    pub fn merge(&mut self, other: &KnnCaseStats) {
        for (a, b) in self.case_hits.iter_mut().zip(other.case_hits) {
            *a += b;
        }
        for (a, b) in self.base_hits.iter_mut().zip(other.base_hits) {
            *a += b;
        }
    }
}

fn rank_pool(dataset: &Dataset, pool: &[usize], q: &Instance) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| {
        let da = euclidean_distance(&dataset.instance(pool[a]).features, &q.features);
        let db = euclidean_distance(&dataset.instance(pool[b]).features, &q.features);
        da.partial_cmp(&db)
            .unwrap()
            .then_with(|| dataset.instance(pool[a]).id.cmp(&dataset.instance(pool[b]).id))
    });
    order
}

/// Rank both pools by distance to the test point and extract the precedence
/// counts c_{t,i} with a two-pointer sweep over the merged order.
pub fn precedence_counts(
    dataset: &Dataset,
    p_pool: &[usize],
    c_pool: &[usize],
    q_test: &Instance,
    _cfg: &KnnUtilityConfig,
) -> Result<NeighborRanking> {
    if dataset.feature_dim() != q_test.features.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.feature_dim(),
            got: q_test.features.len(),
        });
    }
    let p_order = rank_pool(dataset, p_pool, q_test);
    let c_order = rank_pool(dataset, c_pool, q_test);
    let key = |idx: usize| {
        let inst = dataset.instance(idx);
        (
            euclidean_distance(&inst.features, &q_test.features),
            inst.id.as_str(),
        )
    };
    let mut counts = Vec::with_capacity(c_order.len());
    let mut ahead = 0usize;
    for &c in &c_order {
        let ck = key(c_pool[c]);
        while ahead < p_order.len() {
            let pk = key(p_pool[p_order[ahead]]);
            if pk <= ck {
                ahead += 1;
            } else {
                break;
            }
        }
        counts.push(ahead);
    }
    Ok(NeighborRanking {
        p_order,
        c_order,
        counts,
    })
}

/// Borrowed view of one (test point, group) pair: pools, ranking, K, and
/// the test label, shared by the base value and the recurrence step.
pub struct GroupScan<'a> {
    pub dataset: &'a Dataset,
    pub p_pool: &'a [usize],
    pub c_pool: &'a [usize],
    pub ranking: &'a NeighborRanking,
    pub k: usize,
    pub y_test: &'a str,
}

impl GroupScan<'_> {
    fn c_match(&self, i: usize) -> f64 {
        let idx = self.c_pool[self.ranking.c_order[i - 1]];
        if self.dataset.instance(idx).label == self.y_test {
            1.0
        } else {
            0.0
        }
    }

    /// 1[label of the r-th nearest prefix instance matches], 0 when the
    /// prefix has fewer than r instances (no neighbor is displaced then).
    fn p_match(&self, r: usize) -> f64 {
        if r == 0 || r > self.ranking.p_order.len() {
            return 0.0;
        }
        let idx = self.p_pool[self.ranking.p_order[r - 1]];
        if self.dataset.instance(idx).label == self.y_test {
            1.0
        } else {
            0.0
        }
    }
}

/// Value of the farthest in-group instance q_max, which seeds the backward
/// recurrence. Writing m = m(C_t) and c_max = c_{t,m}:
/// zero when K ≤ c_max; otherwise, with L = min(K − c_max, m) admissible
/// subset sizes,
///   (1/(K·m)) · ( L·1[y_qmax = y_test] − Σ_{s=0}^{L−1} 1[(K−s)-th prefix
///   neighbor matches] ),
/// where the prefix term vanishes for ranks beyond m(P_t). With an empty or
/// fully-closer prefix the sum contributes nothing and the first two
/// closed-form branches fall out.
pub fn knn_ads_base_value(scan: &GroupScan<'_>, stats: &mut KnnCaseStats) -> f64 {
    let m = scan.ranking.counts.len();
    let k = scan.k;
    let c_max = scan.ranking.counts[m - 1];
    if k <= c_max {
        stats.base_hits[0] += 1;
        return 0.0;
    }
    if scan.ranking.p_order.len() == c_max {
        stats.base_hits[1] += 1;
    } else {
        stats.base_hits[2] += 1;
    }
    let l = (k - c_max).min(m);
    let mut acc = l as f64 * scan.c_match(m);
    for s in 0..l {
        acc -= scan.p_match(k - s);
    }
    acc / (k * m) as f64
}

/// One backward step of the recurrence: derive the value of the i-th
/// nearest in-group instance from the (i+1)-th. Guards are evaluated in
/// order; exactly one applies since c_{t,i} ≤ c_{t,i+1}.
pub fn knn_ads_step(
    scan: &GroupScan<'_>,
    i: usize,
    value_next: f64,
    table: &BinomialTable,
    stats: &mut KnnCaseStats,
) -> f64 {
    let k = scan.k;
    let c_i = scan.ranking.counts[i - 1];
    let c_n = scan.ranking.counts[i];
    let ind_i = scan.c_match(i);
    let ind_n = scan.c_match(i + 1);

    let diff = if k <= c_i {
        stats.case_hits[0] += 1;
        0.0
    } else if k > c_n && c_n == c_i {
        stats.case_hits[1] += 1;
        (ind_i - ind_n) / k as f64 * (k - c_i).min(i) as f64 / i as f64
    } else if k > c_n {
        stats.case_hits[2] += 1;
        let first = (ind_i - ind_n) / k as f64 * (k - c_n).min(i) as f64 / i as f64;
        first + hypergeometric_tail(scan, table, i, k - c_n, k - c_i - 1)
    } else {
        stats.case_hits[3] += 1;
        hypergeometric_tail(scan, table, i, 0, k - c_i - 1)
    };
    value_next + diff
}

/// The double sum shared by the last two recurrence cases:
/// (1/(m−1)) Σ_{s=lo}^{m−2} Σ_{u=lo}^{min(hi, s)}
///   [C(s,u)·C(m−2−s, i−1−u)/C(m−2, i−1)] · (1[y_i] − 1[(K−u)-th prefix
///   neighbor matches]) / K,
/// with u ≤ i−1 enforced by the vanishing binomial.
fn hypergeometric_tail(
    scan: &GroupScan<'_>,
    table: &BinomialTable,
    i: usize,
    lo: usize,
    hi: usize,
) -> f64 {
    let m = scan.ranking.counts.len();
    let k = scan.k;
    let ind_i = scan.c_match(i);
    if m < 2 {
        return 0.0;
    }
    let mut acc = 0.0;
    for s in lo..=m.saturating_sub(2) {
        let u_hi = hi.min(s).min(i - 1);
        if u_hi < lo {
            continue;
        }
        for u in lo..=u_hi {
            let kernel =
                table.hypergeometric_ratio(s as u64, u as u64, (m - 2) as u64, (i - 1) as u64);
            if kernel == 0.0 {
                continue;
            }
            acc += kernel * (ind_i - scan.p_match(k - u)) / k as f64;
        }
    }
    acc / (m - 1) as f64
}

/// Per-test-point values for every multiset entry of every group, aligned
/// with `Dataset::instance_pool` order per group.
#[derive(Debug, Clone)]
pub struct PerTestPointValues {
    pub per_group: Vec<Vec<f64>>,
    pub stats: KnnCaseStats,
}

/// Exact per-test-point ADS of every training instance: rank each group
/// against the test point, seed with the base value, then walk the
/// recurrence from the farthest instance inward.
pub fn knn_ads_per_test_point(
    dataset: &Dataset,
    groups: &OrderedGroups,
    q_test: &Instance,
    cfg: &KnnUtilityConfig,
) -> Result<PerTestPointValues> {
    let mut per_group = Vec::with_capacity(groups.num_groups());
    let mut stats = KnnCaseStats::default();
    let total_instances = dataset.instance_count(&groups.all_sources());
    let table = BinomialTable::new(total_instances.max(2));
    let mut p_pool: Vec<usize> = Vec::new();
    for t in 0..groups.num_groups() {
        let c_pool = dataset.instance_pool(groups.group(t));
        let ranking = precedence_counts(dataset, &p_pool, &c_pool, q_test, cfg)?;
        let m = c_pool.len();
        let scan = GroupScan {
            dataset,
            p_pool: &p_pool,
            c_pool: &c_pool,
            ranking: &ranking,
            k: cfg.k,
            y_test: &q_test.label,
        };
        let mut by_rank = vec![0.0f64; m];
        by_rank[m - 1] = knn_ads_base_value(&scan, &mut stats);
        for i in (1..m).rev() {
            by_rank[i - 1] = knn_ads_step(&scan, i, by_rank[i], &table, &mut stats);
        }
        let mut values = vec![0.0f64; m];
        for (rank, &pos) in ranking.c_order.iter().enumerate() {
            values[pos] = by_rank[rank];
        }
        per_group.push(values);
        p_pool.extend_from_slice(&c_pool);
    }
    Ok(PerTestPointValues { per_group, stats })
}

/// Result of a full KNN-ADS run: instance-level values (averaged over the
/// test set, summed over duplicate pool entries per instance id) plus the
/// usual source and contributor report.
#[derive(Debug, Clone)]
pub struct KnnValuation {
    pub instance_values: BTreeMap<String, f64>,
    pub report: ValuationReport,
    pub stats: KnnCaseStats,
}

/// KNN-ADS over a whole test set. Test points are valued independently (in
/// parallel) and averaged in fixed order; instance values are then summed
/// to sources and contributors.
pub fn knn_ads(
    dataset: &Dataset,
    groups: &OrderedGroups,
    test_set: &[Instance],
    cfg: &KnnUtilityConfig,
    ownership: Option<&BTreeMap<SourceId, ContributorId>>,
) -> Result<KnnValuation> {
    if test_set.is_empty() {
        return Err(Error::InvalidDataset {
            reason: "test set is empty".into(),
        });
    }
    let per_point: Vec<PerTestPointValues> = test_set
        .par_iter()
        .map(|q| knn_ads_per_test_point(dataset, groups, q, cfg))
        .collect::<Result<_>>()?;

    let weight = 1.0 / test_set.len() as f64;
    let mut stats = KnnCaseStats::default();
    let mut group_totals: Vec<Vec<f64>> = groups
        .groups()
        .iter()
        .map(|g| vec![0.0; dataset.instance_count(&g.iter().cloned().collect())])
        .collect();
    for point in &per_point {
        stats.merge(&point.stats);
        for (total, values) in group_totals.iter_mut().zip(&point.per_group) {
            for (acc, v) in total.iter_mut().zip(values) {
                *acc += weight * v;
            }
        }
    }

    let mut instance_values: BTreeMap<String, f64> = BTreeMap::new();
    let mut report = ValuationReport::new("knn", "knn");
    report.metadata.k = Some(cfg.k);
    for (t, totals) in group_totals.iter().enumerate() {
        let mut entry = 0usize;
        for source in groups.group(t) {
            let src = dataset.source(source).ok_or_else(|| Error::UnknownSource {
                index: t + 1,
                id: source.0.clone(),
            })?;
            let mut source_total = 0.0;
            for &idx in &src.instance_idxs {
                let value = totals[entry];
                entry += 1;
                source_total += value;
                *instance_values
                    .entry(dataset.instance(idx).id.clone())
                    .or_insert(0.0) += value;
            }
            report.per_source.insert(source.clone(), source_total);
        }
    }

    let utility = crate::utility::FixedKKnnUtility::new(
        std::sync::Arc::new(dataset.clone()),
        std::sync::Arc::new(test_set.to_vec()),
        cfg.clone(),
    );
    report.group_residuals = crate::exact::verify_group_efficiency(&report, groups, &utility);
    match ownership {
        Some(map) => report.aggregate_contributors(map)?,
        None => {
            let own = dataset.ownership();
            report.aggregate_contributors(&own)?;
        }
    }
    Ok(KnnValuation {
        instance_values,
        report,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DataSource;

    fn instance(id: &str, x: f64, label: &str) -> Instance {
        Instance {
            id: id.into(),
            features: vec![x],
            label: label.into(),
        }
    }

    fn per_instance(points: &[(&str, f64, &str)]) -> Dataset {
        let instances: Vec<Instance> = points
            .iter()
            .map(|(id, x, label)| instance(id, *x, label))
            .collect();
        Dataset::per_instance_sources(instances, |q| ContributorId(q.id.clone())).unwrap()
    }

    fn grouping(dataset: &Dataset, spec: &[&[&str]]) -> OrderedGroups {
        let raw = spec
            .iter()
            .map(|g| g.iter().map(|s| SourceId::from(*s)).collect())
            .collect();
        OrderedGroups::validate(raw, dataset).unwrap()
    }

    fn pools<'a>(dataset: &Dataset, groups: &OrderedGroups, t: usize) -> (Vec<usize>, Vec<usize>) {
        let p = dataset.instance_pool(&groups.group_prefix(t + 1).unwrap());
        let c = dataset.instance_pool(groups.group(t));
        (p, c)
    }

    #[test]
    fn counts_zero_for_first_group() {
        let ds = per_instance(&[("a", 1.0, "p"), ("b", 2.0, "p"), ("c", 3.0, "n")]);
        let g = grouping(&ds, &[&["a", "b", "c"]]);
        let (p, c) = pools(&ds, &g, 0);
        let q = instance("t", 0.0, "p");
        let r = precedence_counts(&ds, &p, &c, &q, &KnnUtilityConfig::new(1)).unwrap();
        assert_eq!(r.counts, vec![0, 0, 0]);
    }

    #[test]
    fn counts_by_hand_interleaved() {
        // prefix at d=1 and d=3, in-group nearest at d=2
        let ds = per_instance(&[("p1", 1.0, "p"), ("p2", 3.0, "p"), ("c1", 2.0, "p")]);
        let g = grouping(&ds, &[&["p1", "p2"], &["c1"]]);
        let (p, c) = pools(&ds, &g, 1);
        let q = instance("t", 0.0, "p");
        let r = precedence_counts(&ds, &p, &c, &q, &KnnUtilityConfig::new(1)).unwrap();
        assert_eq!(r.counts, vec![1]);
    }

    #[test]
    fn counts_zero_when_prefix_all_farther() {
        let ds = per_instance(&[("p1", 9.0, "p"), ("c1", 1.0, "p"), ("c2", 2.0, "n")]);
        let g = grouping(&ds, &[&["p1"], &["c1", "c2"]]);
        let (p, c) = pools(&ds, &g, 1);
        let q = instance("t", 0.0, "p");
        let r = precedence_counts(&ds, &p, &c, &q, &KnnUtilityConfig::new(2)).unwrap();
        assert_eq!(r.counts, vec![0, 0]);
    }

    #[test]
    fn counts_monotone_on_random_data() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let np = rng.random_range(0..6);
            let nc = rng.random_range(1..7);
            let mut pts = Vec::new();
            for i in 0..np {
                pts.push((format!("p{i}"), rng.random_range(0.0..10.0)));
            }
            for i in 0..nc {
                pts.push((format!("c{i}"), rng.random_range(0.0..10.0)));
            }
            let named: Vec<(&str, f64, &str)> =
                pts.iter().map(|(id, x)| (id.as_str(), *x, "p")).collect();
            let ds = per_instance(&named);
            let p_ids: Vec<&str> = pts[..np].iter().map(|(id, _)| id.as_str()).collect();
            let c_ids: Vec<&str> = pts[np..].iter().map(|(id, _)| id.as_str()).collect();
            let g = if np == 0 {
                grouping(&ds, &[&c_ids])
            } else {
                grouping(&ds, &[&p_ids, &c_ids])
            };
            let t = g.num_groups() - 1;
            let (p, c) = pools(&ds, &g, t);
            let q = instance("t", 4.2, "p");
            let r = precedence_counts(&ds, &p, &c, &q, &KnnUtilityConfig::new(2)).unwrap();
            assert!(r.counts.windows(2).all(|w| w[0] <= w[1]));
            assert!(r.counts.iter().all(|&cc| cc <= np));
        }
    }

    #[test]
    fn base_value_single_matching_instance() {
        let ds = per_instance(&[("c1", 1.0, "p")]);
        let g = grouping(&ds, &[&["c1"]]);
        let q = instance("t", 0.0, "p");
        let cfg = KnnUtilityConfig::new(1);
        let out = knn_ads_per_test_point(&ds, &g, &q, &cfg).unwrap();
        assert_eq!(out.per_group[0], vec![1.0]);
        assert_eq!(out.stats.base_hits, [0, 1, 0]);
    }

    #[test]
    fn base_value_zero_when_k_below_cmax() {
        let ds = per_instance(&[("p1", 1.0, "p"), ("c1", 2.0, "p")]);
        let g = grouping(&ds, &[&["p1"], &["c1"]]);
        let q = instance("t", 0.0, "p");
        let out = knn_ads_per_test_point(&ds, &g, &q, &KnnUtilityConfig::new(1)).unwrap();
        assert_eq!(out.per_group[1], vec![0.0]);
        assert_eq!(out.stats.base_hits[0], 1);
    }

    #[test]
    fn later_group_duplicate_worthless_at_k1() {
        // c1 sits at the same distance as the nearest prefix instance
        let ds = per_instance(&[("p1", 1.0, "p"), ("c1", -1.0, "p")]);
        let g = grouping(&ds, &[&["p1"], &["c1"]]);
        let q = instance("t", 0.0, "p");
        let out = knn_ads_per_test_point(&ds, &g, &q, &KnnUtilityConfig::new(1)).unwrap();
        assert_eq!(out.per_group[1], vec![0.0]);
    }

    #[test]
    fn source_and_contributor_aggregation() {
        let instances = vec![
            instance("q1", 1.0, "p"),
            instance("q2", 2.0, "p"),
            instance("q3", 3.0, "n"),
        ];
        let sources = vec![
            DataSource {
                id: SourceId::from("s1"),
                contributor: ContributorId::from("alice"),
                instance_idxs: vec![0, 1],
            },
            DataSource {
                id: SourceId::from("s2"),
                contributor: ContributorId::from("bob"),
                instance_idxs: vec![2],
            },
        ];
        let ds = Dataset::new(instances, sources).unwrap();
        let g = grouping(&ds, &[&["s1", "s2"]]);
        let tests = vec![instance("t", 0.0, "p")];
        let out = knn_ads(&ds, &g, &tests, &KnnUtilityConfig::new(2), None).unwrap();
        let s1 = out.report.per_source[&SourceId::from("s1")];
        let split = out.instance_values["q1"] + out.instance_values["q2"];
        assert!((s1 - split).abs() < 1e-12);
        assert!(
            (out.report.per_contributor[&ContributorId::from("alice")] - s1).abs() < 1e-15
        );
        // total = v(D) − v(∅) = 1.0 under fixed-K with both matches in top-2
        assert!((out.report.total_value() - 1.0).abs() < 1e-12);
        for r in &out.report.group_residuals {
            assert!(*r < 1e-10);
        }
    }

    #[test]
    fn all_wrong_labels_give_nonpositive_values() {
        let ds = per_instance(&[("a", 1.0, "n"), ("b", 2.0, "n"), ("c", 3.0, "n")]);
        let g = grouping(&ds, &[&["a", "b"], &["c"]]);
        let tests = vec![instance("t", 0.0, "p")];
        let out = knn_ads(&ds, &g, &tests, &KnnUtilityConfig::new(2), None).unwrap();
        for v in out.report.per_source.values() {
            assert!(*v <= 1e-15);
        }
    }
}
