//! Python bindings for the Asymmetric Data Shapley engines: dataset and
//! group construction, the exact and Monte Carlo engines, the closed-form
//! KNN engine, and within-round valuation.

use std::collections::BTreeMap;
use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ads_core::error::Error;
use ads_core::exact;
use ads_core::knn;
use ads_core::mc::{self, McConfig};
use ads_core::model::{
    ContributorId, DataSource, Instance, OrderedGroups, SourceId, SourceSet,
    DEFAULT_ENUMERATION_CAP,
};
use ads_core::report::ValuationReport;
use ads_core::utility::{
    knn_utility, KnnUtilityConfig, OneNnUtility, PrototypeUtility, SignVoteUtility,
    StatefulUtility, Utility,
};

fn to_py_err(err: Error) -> PyErr {
    PyValueError::new_err(format!("{}: {err}", err.code()))
}

/// One labeled instance row: (instance_id, features, label).
type InstanceRow = (String, Vec<f64>, String);

fn to_instances(rows: Vec<InstanceRow>) -> Vec<Instance> {
    rows.into_iter()
        .map(|(id, features, label)| Instance {
            id,
            features,
            label,
        })
        .collect()
}

/// A validated dataset: instances grouped into contributor-owned sources.
#[pyclass(name = "Dataset", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Arc<ads_core::model::Dataset>,
}

#[pymethods]
impl PyDataset {
    /// Build from rows of (instance_id, features, label, source_id), with
    /// an optional {source_id: contributor_id} ownership map (defaults to
    /// one contributor per source).
    #[new]
    #[pyo3(signature = (rows, ownership=None))]
    fn new(
        rows: Vec<(String, Vec<f64>, String, String)>,
        ownership: Option<BTreeMap<String, String>>,
    ) -> PyResult<Self> {
        let mut instances = Vec::new();
        let mut idxs_by_source: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (idx, (id, features, label, source)) in rows.into_iter().enumerate() {
            instances.push(Instance {
                id,
                features,
                label,
            });
            idxs_by_source.entry(source).or_default().push(idx);
        }
        let sources = idxs_by_source
            .into_iter()
            .map(|(source, instance_idxs)| {
                let contributor = ownership
                    .as_ref()
                    .and_then(|map| map.get(&source).cloned())
                    .unwrap_or_else(|| source.clone());
                DataSource {
                    id: SourceId(source),
                    contributor: ContributorId(contributor),
                    instance_idxs,
                }
            })
            .collect();
        Ok(PyDataset {
            inner: Arc::new(
                ads_core::model::Dataset::new(instances, sources).map_err(to_py_err)?,
            ),
        })
    }

    fn num_sources(&self) -> usize {
        self.inner.num_sources()
    }

    fn num_instances(&self) -> usize {
        self.inner.instances().len()
    }

    fn source_ids(&self) -> Vec<String> {
        self.inner.source_ids().into_iter().map(|s| s.0).collect()
    }

    fn ownership(&self) -> BTreeMap<String, String> {
        self.inner
            .ownership()
            .into_iter()
            .map(|(s, c)| (s.0, c.0))
            .collect()
    }
}

/// A valuation result with per-source and per-contributor totals.
#[pyclass(name = "Report", skip_from_py_object)]
#[derive(Clone)]
struct PyReport {
    #[pyo3(get)]
    method: String,
    #[pyo3(get)]
    utility: String,
    #[pyo3(get)]
    per_source: BTreeMap<String, f64>,
    #[pyo3(get)]
    per_contributor: BTreeMap<String, f64>,
    #[pyo3(get)]
    group_residuals: Vec<f64>,
    #[pyo3(get)]
    sample_count: Option<u64>,
    #[pyo3(get)]
    seed: Option<u64>,
}

#[pymethods]
impl PyReport {
    fn total(&self) -> f64 {
        self.per_source.values().sum()
    }

    fn __repr__(&self) -> String {
        format!(
            "Report(method='{}', sources={}, total={})",
            self.method,
            self.per_source.len(),
            self.total()
        )
    }
}

impl From<ValuationReport> for PyReport {
    fn from(report: ValuationReport) -> Self {
        PyReport {
            method: report.method,
            utility: report.metadata.utility,
            per_source: report
                .per_source
                .into_iter()
                .map(|(s, v)| (s.0, v))
                .collect(),
            per_contributor: report
                .per_contributor
                .into_iter()
                .map(|(c, v)| (c.0, v))
                .collect(),
            group_residuals: report.group_residuals,
            sample_count: report.metadata.sample_count,
            seed: report.metadata.seed,
        }
    }
}

fn build_groups(dataset: &PyDataset, groups: Vec<Vec<String>>) -> PyResult<OrderedGroups> {
    let ids = groups
        .into_iter()
        .map(|g| g.into_iter().map(SourceId).collect())
        .collect();
    OrderedGroups::validate(ids, &dataset.inner).map_err(to_py_err)
}

enum BoundUtility {
    Knn {
        dataset: Arc<ads_core::model::Dataset>,
        test_set: Vec<Instance>,
        cfg: KnnUtilityConfig,
    },
    OneNn(OneNnUtility),
    Prototype(PrototypeUtility),
    SignVote(SignVoteUtility),
}

impl BoundUtility {
    fn name(&self) -> &'static str {
        match self {
            BoundUtility::Knn { .. } => "knn",
            BoundUtility::OneNn(_) => "one-nn",
            BoundUtility::Prototype(_) => "prototype",
            BoundUtility::SignVote(_) => "sign-vote",
        }
    }
}

impl Utility for BoundUtility {
    fn evaluate(&self, subset: &SourceSet) -> f64 {
        match self {
            BoundUtility::Knn {
                dataset,
                test_set,
                cfg,
            } => {
                let total: f64 = test_set
                    .iter()
                    .map(|q| knn_utility(dataset, subset, q, cfg).unwrap_or(0.0))
                    .sum();
                total / test_set.len() as f64
            }
            BoundUtility::OneNn(v) => v.evaluate(subset),
            BoundUtility::Prototype(v) => v.evaluate_at(&v.initial_state(), subset),
            BoundUtility::SignVote(v) => v.evaluate_at(&v.initial_state(), subset),
        }
    }
}

fn build_utility(
    dataset: &PyDataset,
    utility: &str,
    test: Option<Vec<InstanceRow>>,
    k: usize,
) -> PyResult<BoundUtility> {
    let need_test = || {
        test.clone()
            .filter(|t| !t.is_empty())
            .map(to_instances)
            .ok_or_else(|| PyValueError::new_err(format!("utility `{utility}` needs a test set")))
    };
    match utility {
        "knn" => Ok(BoundUtility::Knn {
            dataset: dataset.inner.clone(),
            test_set: need_test()?,
            cfg: KnnUtilityConfig::new(k),
        }),
        "one-nn" => Ok(BoundUtility::OneNn(OneNnUtility::new(
            dataset.inner.clone(),
            Arc::new(need_test()?),
        ))),
        "prototype" => Ok(BoundUtility::Prototype(PrototypeUtility::new(
            dataset.inner.clone(),
            Arc::new(need_test()?),
        ))),
        "sign-vote" => Ok(BoundUtility::SignVote(
            SignVoteUtility::new(dataset.inner.clone()).map_err(to_py_err)?,
        )),
        other => Err(PyValueError::new_err(format!(
            "unknown utility `{other}` (want knn, one-nn, prototype, or sign-vote)"
        ))),
    }
}

fn finish(mut report: ValuationReport, utility_name: &str) -> PyReport {
    report.metadata.utility = utility_name.to_string();
    report.into()
}

/// Exact values by ordered-permutation enumeration.
#[pyfunction]
#[pyo3(signature = (dataset, groups, utility, test=None, k=3))]
fn exact_ads_permutation(
    py: Python<'_>,
    dataset: &PyDataset,
    groups: Vec<Vec<String>>,
    utility: &str,
    test: Option<Vec<InstanceRow>>,
    k: usize,
) -> PyResult<PyReport> {
    let groups = build_groups(dataset, groups)?;
    let v = build_utility(dataset, utility, test, k)?;
    let ownership = dataset.inner.ownership();
    let report = py
        .detach(|| {
            exact::exact_ads_permutation(&groups, &v, Some(&ownership), DEFAULT_ENUMERATION_CAP)
        })
        .map_err(to_py_err)?;
    Ok(finish(report, v.name()))
}

/// Exact values by per-group subset enumeration.
#[pyfunction]
#[pyo3(signature = (dataset, groups, utility, test=None, k=3))]
fn exact_ads_subset(
    py: Python<'_>,
    dataset: &PyDataset,
    groups: Vec<Vec<String>>,
    utility: &str,
    test: Option<Vec<InstanceRow>>,
    k: usize,
) -> PyResult<PyReport> {
    let groups = build_groups(dataset, groups)?;
    let v = build_utility(dataset, utility, test, k)?;
    let ownership = dataset.inner.ownership();
    let report = py
        .detach(|| exact::exact_ads_subset(&groups, &v, Some(&ownership), DEFAULT_ENUMERATION_CAP))
        .map_err(to_py_err)?;
    Ok(finish(report, v.name()))
}

/// Classical (single-group) values.
#[pyfunction]
#[pyo3(signature = (dataset, utility, test=None, k=3))]
fn exact_ds(
    py: Python<'_>,
    dataset: &PyDataset,
    utility: &str,
    test: Option<Vec<InstanceRow>>,
    k: usize,
) -> PyResult<PyReport> {
    let v = build_utility(dataset, utility, test, k)?;
    let ownership = dataset.inner.ownership();
    let report = py
        .detach(|| exact::exact_ds(&dataset.inner, &v, Some(&ownership), DEFAULT_ENUMERATION_CAP))
        .map_err(to_py_err)?;
    Ok(finish(report, v.name()))
}

/// Monte Carlo estimate with the (epsilon, delta) sample-size guarantee.
#[pyfunction]
#[pyo3(signature = (dataset, groups, utility, epsilon, delta, seed, r=1.0, test=None, k=3))]
#[allow(clippy::too_many_arguments)]
fn mc_ads(
    py: Python<'_>,
    dataset: &PyDataset,
    groups: Vec<Vec<String>>,
    utility: &str,
    epsilon: f64,
    delta: f64,
    seed: u64,
    r: f64,
    test: Option<Vec<InstanceRow>>,
    k: usize,
) -> PyResult<PyReport> {
    let groups = build_groups(dataset, groups)?;
    let v = build_utility(dataset, utility, test, k)?;
    let cfg = McConfig::new(epsilon, delta, r, seed);
    let ownership = dataset.inner.ownership();
    let report = py
        .detach(|| mc::mc_ads(&groups, &v, &cfg, Some(&ownership)))
        .map_err(to_py_err)?;
    Ok(finish(report, v.name()))
}

/// Permutations needed for the (epsilon, delta) guarantee on n sources.
#[pyfunction]
#[pyo3(signature = (n, epsilon, delta, r=1.0))]
fn required_sample_size(n: usize, epsilon: f64, delta: f64, r: f64) -> PyResult<u64> {
    mc::required_sample_size(&McConfig::new(epsilon, delta, r, 0), n).map_err(to_py_err)
}

/// Closed-form KNN values over a test set.
#[pyfunction]
#[pyo3(signature = (dataset, groups, test, k=3))]
fn knn_ads(
    py: Python<'_>,
    dataset: &PyDataset,
    groups: Vec<Vec<String>>,
    test: Vec<InstanceRow>,
    k: usize,
) -> PyResult<PyReport> {
    let groups = build_groups(dataset, groups)?;
    let test_set = to_instances(test);
    let cfg = KnnUtilityConfig::new(k);
    let ownership = dataset.inner.ownership();
    let valuation = py
        .detach(|| knn::knn_ads(&dataset.inner, &groups, &test_set, &cfg, Some(&ownership)))
        .map_err(to_py_err)?;
    Ok(valuation.report.into())
}

/// Within-round values along the realized training trajectory, for the
/// stateful utilities (prototype, sign-vote).
#[pyfunction]
#[pyo3(signature = (dataset, groups, utility, test=None))]
fn within_round_values(
    py: Python<'_>,
    dataset: &PyDataset,
    groups: Vec<Vec<String>>,
    utility: &str,
    test: Option<Vec<InstanceRow>>,
) -> PyResult<PyReport> {
    let groups = build_groups(dataset, groups)?;
    let ownership = dataset.inner.ownership();
    match utility {
        "prototype" => {
            let v = PrototypeUtility::new(
                dataset.inner.clone(),
                Arc::new(
                    test.filter(|t| !t.is_empty())
                        .map(to_instances)
                        .ok_or_else(|| {
                            PyValueError::new_err("prototype utility needs a test set")
                        })?,
                ),
            );
            let report = py
                .detach(|| {
                    exact::within_round_values(
                        &groups,
                        &v,
                        Some(&ownership),
                        DEFAULT_ENUMERATION_CAP,
                    )
                })
                .map_err(to_py_err)?;
            Ok(finish(report, "prototype"))
        }
        "sign-vote" => {
            let v = SignVoteUtility::new(dataset.inner.clone()).map_err(to_py_err)?;
            let report = py
                .detach(|| {
                    exact::within_round_values(
                        &groups,
                        &v,
                        Some(&ownership),
                        DEFAULT_ENUMERATION_CAP,
                    )
                })
                .map_err(to_py_err)?;
            Ok(finish(report, "sign-vote"))
        }
        other => Err(PyValueError::new_err(format!(
            "within-round values need a stateful utility, got `{other}`"
        ))),
    }
}

/// Evaluate a utility on one subset of sources, mainly for cross-checks.
#[pyfunction]
#[pyo3(signature = (dataset, subset, utility, test=None, k=3))]
fn evaluate_utility(
    dataset: &PyDataset,
    subset: Vec<String>,
    utility: &str,
    test: Option<Vec<InstanceRow>>,
    k: usize,
) -> PyResult<f64> {
    let v = build_utility(dataset, utility, test, k)?;
    let set: SourceSet = subset.into_iter().map(SourceId).collect();
    Ok(v.evaluate(&set))
}

#[pymodule]
fn ads_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(exact_ads_permutation, m)?)?;
    m.add_function(wrap_pyfunction!(exact_ads_subset, m)?)?;
    m.add_function(wrap_pyfunction!(exact_ds, m)?)?;
    m.add_function(wrap_pyfunction!(mc_ads, m)?)?;
    m.add_function(wrap_pyfunction!(required_sample_size, m)?)?;
    m.add_function(wrap_pyfunction!(knn_ads, m)?)?;
    m.add_function(wrap_pyfunction!(within_round_values, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_utility, m)?)?;
    Ok(())
}
