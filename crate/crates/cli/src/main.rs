//! `ads`: value datasets, verify engine invariants on bundled fixtures, and
//! run synthetic experiment scenarios.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ads_core::error::{Error, Result};
use ads_core::exact::{
    exact_ads_permutation, exact_ads_subset, exact_ds, verify_efficiency, within_round_values,
};
use ads_core::io::{
    read_dataset_csv, read_groups_json, write_curve_table, write_curves_json, write_report_json,
};
use ads_core::knn::knn_ads;
use ads_core::mc::{mc_ads, McConfig};
use ads_core::model::{
    ContributorId, Dataset, Instance, OrderedGroups, SourceId, SourceSet, DEFAULT_ENUMERATION_CAP,
};
use ads_core::report::ValuationReport;
use ads_core::scenarios::{
    run_augmentation_scenario, run_intervention_scenario, run_replication_scenario,
    run_sequential_noisy_scenario, ScenarioKind, ScenarioSpec,
};
use ads_core::utility::{
    knn_utility, FnUtility, KnnUtilityConfig, OneNnUtility, PrototypeUtility, SignVoteUtility,
    StatefulUtility, Utility,
};

#[derive(Parser)]
#[command(name = "ads", about = "Asymmetric Data Shapley valuation", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Value the sources of a dataset and write a report file.
    Value(ValueArgs),
    /// Run the bundled invariant fixtures and report residuals.
    Verify(VerifyArgs),
    /// Run a synthetic experiment scenario and write curve/split files.
    Scenario(ScenarioArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    ExactPerm,
    ExactSubset,
    Ds,
    Mc,
    Knn,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum UtilityKind {
    Knn,
    OneNn,
    Prototype,
    SignVote,
}

#[derive(Args)]
struct ValueArgs {
    #[arg(long, value_enum)]
    method: Method,
    /// Training dataset CSV (`instance_id,source_id,label,f1..fd`).
    #[arg(long)]
    data: PathBuf,
    /// Ordered groups + ownership JSON; defaults to a single group.
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Test set CSV (same layout; source column ignored).
    #[arg(long)]
    test: Option<PathBuf>,
    /// Utility evaluated on subsets (not used by `--method knn`).
    #[arg(long, value_enum)]
    utility: Option<UtilityKind>,
    /// Neighbor count for the KNN utility and engine.
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Utility range bound r for the Monte Carlo sample size.
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Report output path (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Run a single fixture instead of the full default set.
    #[arg(long)]
    fixture: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScenarioName {
    Replication,
    Augmentation,
    SequentialNoisy,
    Intervention,
}

impl From<ScenarioName> for ScenarioKind {
    fn from(name: ScenarioName) -> Self {
        match name {
            ScenarioName::Replication => ScenarioKind::Replication,
            ScenarioName::Augmentation => ScenarioKind::Augmentation,
            ScenarioName::SequentialNoisy => ScenarioKind::SequentialNoisy,
            ScenarioName::Intervention => ScenarioKind::Intervention,
        }
    }
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, value_enum)]
    scenario: ScenarioName,
    #[arg(long)]
    seed: u64,
    /// Independent seeds averaged into curves.
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    #[arg(long, default_value_t = 2)]
    factor: usize,
    #[arg(long, default_value_t = 0.3)]
    jitter: f64,
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    #[arg(long, default_value_t = 4)]
    contributors: usize,
    #[arg(long, default_value_t = 0.7)]
    flip_prob: f64,
    #[arg(long, default_value_t = 3)]
    instances_per_source: usize,
    #[arg(long, default_value_t = 8)]
    test_size: usize,
    #[arg(long, default_value_t = 0.3)]
    fraction_max: f64,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Output path; curve scenarios also write a flat `<out>.csv` table.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("ADS_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Value(args) => run_value(args).map(|_| ExitCode::SUCCESS),
        Command::Verify(args) => run_verify(args),
        Command::Scenario(args) => run_scenario(args).map(|_| ExitCode::SUCCESS),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("ERROR {} {err}", err.code());
            match err {
                Error::EnumerationTooLarge { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn invalid(reason: impl Into<String>) -> Error {
    Error::InvalidTolerance {
        reason: reason.into(),
    }
}

fn load_inputs(args: &ValueArgs) -> Result<(Arc<Dataset>, OrderedGroups)> {
    let raw = read_dataset_csv(&args.data)?;
    let groups_file = args.groups.as_deref().map(read_groups_json).transpose()?;
    let dataset = match &groups_file {
        Some(file) => raw.into_dataset(Some(&file.ownership_map()))?,
        None => raw.into_dataset(None)?,
    };
    let groups = match &groups_file {
        Some(file) => file.to_ordered_groups(&dataset)?,
        None => OrderedGroups::single(&dataset),
    };
    Ok((Arc::new(dataset), groups))
}

fn load_test_set(args: &ValueArgs, dataset: &Dataset) -> Result<Arc<Vec<Instance>>> {
    let path = args
        .test
        .as_ref()
        .ok_or_else(|| invalid("this method/utility needs a --test file"))?;
    let raw = read_dataset_csv(path)?;
    for q in &raw.instances {
        if q.features.len() != dataset.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: dataset.feature_dim(),
                got: q.features.len(),
            });
        }
    }
    Ok(Arc::new(raw.instances))
}

enum BuiltUtility {
    Knn(FnUtility<Box<dyn Fn(&SourceSet) -> f64 + Sync>>),
    OneNn(OneNnUtility),
    Prototype(PrototypeUtility),
    SignVote(SignVoteUtility),
}

impl BuiltUtility {
    fn name(&self) -> &'static str {
        match self {
            BuiltUtility::Knn(_) => "knn",
            BuiltUtility::OneNn(_) => "one-nn",
            BuiltUtility::Prototype(_) => "prototype",
            BuiltUtility::SignVote(_) => "sign-vote",
        }
    }
}

impl Utility for BuiltUtility {
    fn evaluate(&self, subset: &SourceSet) -> f64 {
        match self {
            BuiltUtility::Knn(v) => v.evaluate(subset),
            BuiltUtility::OneNn(v) => v.evaluate(subset),
            BuiltUtility::Prototype(v) => v.evaluate_at(&v.initial_state(), subset),
            BuiltUtility::SignVote(v) => v.evaluate_at(&v.initial_state(), subset),
        }
    }
}

fn build_utility(args: &ValueArgs, dataset: &Arc<Dataset>) -> Result<BuiltUtility> {
    let kind = args
        .utility
        .ok_or_else(|| invalid("--utility is required for this method"))?;
    Ok(match kind {
        UtilityKind::Knn => {
            let test_set = load_test_set(args, dataset)?;
            let cfg = KnnUtilityConfig::new(args.k);
            let ds = dataset.clone();
            BuiltUtility::Knn(FnUtility::new(Box::new(move |s: &SourceSet| {
                let total: f64 = test_set
                    .iter()
                    .map(|q| knn_utility(&ds, s, q, &cfg).unwrap_or(0.0))
                    .sum();
                total / test_set.len() as f64
            }) as Box<dyn Fn(&SourceSet) -> f64 + Sync>))
        }
        UtilityKind::OneNn => {
            let test_set = load_test_set(args, dataset)?;
            BuiltUtility::OneNn(OneNnUtility::new(dataset.clone(), test_set))
        }
        UtilityKind::Prototype => {
            let test_set = load_test_set(args, dataset)?;
            BuiltUtility::Prototype(PrototypeUtility::new(dataset.clone(), test_set))
        }
        UtilityKind::SignVote => BuiltUtility::SignVote(SignVoteUtility::new(dataset.clone())?),
    })
}

fn run_value(args: ValueArgs) -> Result<()> {
    let start = Instant::now();
    let (dataset, groups) = load_inputs(&args)?;
    let ownership = dataset.ownership();
    let cap = DEFAULT_ENUMERATION_CAP;

    let mut report = match args.method {
        Method::ExactPerm | Method::ExactSubset | Method::Ds => {
            let v = build_utility(&args, &dataset)?;
            let mut report = match args.method {
                Method::ExactPerm => exact_ads_permutation(&groups, &v, Some(&ownership), cap)?,
                Method::ExactSubset => exact_ads_subset(&groups, &v, Some(&ownership), cap)?,
                _ => exact_ds(&dataset, &v, Some(&ownership), cap)?,
            };
            report.metadata.utility = v.name().to_string();
            report
        }
        Method::Mc => {
            let epsilon = args.epsilon.ok_or_else(|| invalid("mc needs --epsilon"))?;
            let delta = args.delta.ok_or_else(|| invalid("mc needs --delta"))?;
            let seed = args.seed.ok_or_else(|| invalid("mc needs --seed"))?;
            let v = build_utility(&args, &dataset)?;
            let cfg = McConfig::new(epsilon, delta, args.r, seed);
            let mut report = mc_ads(&groups, &v, &cfg, Some(&ownership))?;
            report.metadata.utility = v.name().to_string();
            report
        }
        Method::Knn => {
            let test_set = load_test_set(&args, &dataset)?;
            let cfg = KnnUtilityConfig::new(args.k);
            knn_ads(&dataset, &groups, &test_set, &cfg, Some(&ownership))?.report
        }
    };
    if matches!(
        args.method,
        Method::Knn | Method::ExactPerm | Method::ExactSubset | Method::Ds
    ) && args.utility == Some(UtilityKind::Knn)
        || args.method == Method::Knn
    {
        report.metadata.k = Some(args.k);
    }
    report.metadata.wall_clock_ms = Some(start.elapsed().as_secs_f64() * 1e3);

    write_report_json(&args.out, &report)?;
    println!("method {}", report.method);
    println!("utility {}", report.metadata.utility);
    println!("sources {}", report.per_source.len());
    println!("contributors {}", report.per_contributor.len());
    println!("total {:?}", report.total_value());
    if let Some(m) = report.metadata.sample_count {
        println!("sample-count {m}");
    }
    eprintln!(
        "wall-clock {:.1} ms",
        report.metadata.wall_clock_ms.unwrap()
    );
    Ok(())
}

struct CheckOutcome {
    name: &'static str,
    residual: f64,
    ok: bool,
    note: String,
}

fn hashed_game(salt: u64) -> FnUtility<impl Fn(&SourceSet) -> f64 + Sync> {
    FnUtility::new(move |s: &SourceSet| {
        if s.is_empty() {
            return 0.0;
        }
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        salt.hash(&mut h);
        for id in s {
            id.hash(&mut h);
        }
        (h.finish() % 10_000) as f64 / 10_000.0
    })
}

fn fixture_partitions() -> Vec<OrderedGroups> {
    let ids = |names: &[&str]| -> SourceSet { names.iter().map(|n| SourceId::from(*n)).collect() };
    vec![
        OrderedGroups::from_partition(vec![ids(&["a", "b", "c", "d"])]).unwrap(),
        OrderedGroups::from_partition(vec![ids(&["a", "b"]), ids(&["c", "d", "e"])]).unwrap(),
        OrderedGroups::from_partition(vec![ids(&["a"]), ids(&["b", "c"]), ids(&["d"])]).unwrap(),
    ]
}

fn check_oracle_equivalence() -> Result<CheckOutcome> {
    let mut residual: f64 = 0.0;
    for (i, groups) in fixture_partitions().into_iter().enumerate() {
        let v = hashed_game(40 + i as u64);
        let perm = exact_ads_permutation(&groups, &v, None, DEFAULT_ENUMERATION_CAP)?;
        let sub = exact_ads_subset(&groups, &v, None, DEFAULT_ENUMERATION_CAP)?;
        for (z, val) in &perm.per_source {
            residual = residual.max((val - sub.per_source[z]).abs());
        }
    }
    Ok(CheckOutcome {
        name: "oracle-equivalence",
        residual,
        ok: residual <= 1e-10,
        note: "permutation vs subset form".into(),
    })
}

fn check_ds_special_case() -> Result<CheckOutcome> {
    let instances: Vec<Instance> = (0..5)
        .map(|i| Instance {
            id: format!("s{i}"),
            features: vec![i as f64],
            label: "c".into(),
        })
        .collect();
    let dataset = Dataset::per_instance_sources(instances, |q| ContributorId(q.id.clone()))?;
    let v = hashed_game(77);
    let ds = exact_ds(&dataset, &v, None, DEFAULT_ENUMERATION_CAP)?;
    let single = OrderedGroups::single(&dataset);
    let ads = exact_ads_permutation(&single, &v, None, DEFAULT_ENUMERATION_CAP)?;
    let residual = ds
        .per_source
        .iter()
        .map(|(z, val)| (val - ads.per_source[z]).abs())
        .fold(0.0f64, f64::max);
    Ok(CheckOutcome {
        name: "ds-special-case",
        residual,
        ok: residual <= 1e-10,
        note: "single group reduces to classical values".into(),
    })
}

fn check_group_efficiency() -> Result<CheckOutcome> {
    let mut residual: f64 = 0.0;
    for (i, groups) in fixture_partitions().into_iter().enumerate() {
        let v = hashed_game(90 + i as u64);
        let report = exact_ads_permutation(&groups, &v, None, DEFAULT_ENUMERATION_CAP)?;
        for r in &report.group_residuals {
            residual = residual.max(*r);
        }
        residual = residual.max(verify_efficiency(&report, &v));
    }
    Ok(CheckOutcome {
        name: "group-efficiency",
        residual,
        ok: residual <= 1e-10,
        note: "per-group and telescoped totals".into(),
    })
}

fn check_lemma_duplication() -> Result<CheckOutcome> {
    let spec = ScenarioSpec::new(ScenarioKind::Replication, 7);
    let split = run_replication_scenario(&spec)?;
    let residual = split
        .ads_derived_total
        .abs()
        .max((split.ds_original_total - 0.5 * split.grand_total).abs());
    Ok(CheckOutcome {
        name: "duplication",
        residual,
        ok: residual <= 1e-10,
        note: "copies worth zero under precedence, half classically".into(),
    })
}

fn check_sign_vote_rounds() -> Result<CheckOutcome> {
    let instances: Vec<Instance> = (0..3)
        .map(|i| Instance {
            id: format!("z{i}"),
            features: vec![],
            label: "+1".into(),
        })
        .collect();
    let dataset =
        Arc::new(Dataset::per_instance_sources(instances, |q| ContributorId(q.id.clone()))?);
    let v = SignVoteUtility::new(dataset.clone())?;
    let groups = OrderedGroups::validate(
        (0..3).map(|i| vec![SourceId(format!("z{i}"))]).collect(),
        &dataset,
    )?;
    let report = within_round_values(&groups, &v, None, DEFAULT_ENUMERATION_CAP)?;
    let round1 = report.per_source[&SourceId::from("z0")];
    let round3 = report.per_source[&SourceId::from("z2")];
    println!("  round values: {round1} {round3}");
    let residual = (round1 - 1.0).abs().max(round3.abs());
    Ok(CheckOutcome {
        name: "lemma2",
        residual,
        ok: residual == 0.0,
        note: "three unanimous voting rounds".into(),
    })
}

/// Negative control: corrupt one value and confirm the efficiency check
/// catches it. Not part of the default set; its "pass" is a detected fail.
fn check_tampered() -> Result<CheckOutcome> {
    let groups = &fixture_partitions()[1];
    let v = hashed_game(123);
    let mut report: ValuationReport =
        exact_ads_permutation(groups, &v, None, DEFAULT_ENUMERATION_CAP)?;
    if let Some(value) = report.per_source.values_mut().next() {
        *value += 1e-3;
    }
    let residual = verify_efficiency(&report, &v);
    Ok(CheckOutcome {
        name: "tampered",
        residual,
        ok: residual <= 1e-10,
        note: "corrupted report must be rejected".into(),
    })
}

fn run_verify(args: VerifyArgs) -> Result<ExitCode> {
    let all: Vec<(&str, fn() -> Result<CheckOutcome>)> = vec![
        ("oracle-equivalence", check_oracle_equivalence),
        ("ds-special-case", check_ds_special_case),
        ("group-efficiency", check_group_efficiency),
        ("duplication", check_lemma_duplication),
        ("lemma2", check_sign_vote_rounds),
        ("tampered", check_tampered),
    ];
    let selected: Vec<_> = match &args.fixture {
        Some(name) => {
            let found: Vec<_> = all.iter().filter(|(n, _)| n == name).collect();
            if found.is_empty() {
                return Err(invalid(format!("unknown fixture `{name}`")));
            }
            found.into_iter().cloned().collect()
        }
        // the tampered negative control only runs when asked for
        None => all
            .iter()
            .filter(|(n, _)| *n != "tampered")
            .cloned()
            .collect(),
    };
    let mut failures = 0;
    for (_, check) in selected {
        let outcome = check()?;
        let verdict = if outcome.ok { "pass" } else { "FAIL" };
        println!(
            "check {}: {verdict} residual={:.2e} ({})",
            outcome.name, outcome.residual, outcome.note
        );
        if !outcome.ok {
            failures += 1;
        }
    }
    if failures > 0 {
        println!("{failures} check(s) failed");
        Ok(ExitCode::from(1))
    } else {
        println!("all checks passed");
        Ok(ExitCode::SUCCESS)
    }
}

fn run_scenario(args: ScenarioArgs) -> Result<()> {
    let mut spec = ScenarioSpec::new(args.scenario.into(), args.seed);
    spec.num_seeds = args.seeds;
    spec.replication_factor = args.factor;
    spec.jitter_scale = args.jitter;
    spec.rounds = args.rounds;
    spec.contributors_per_round = args.contributors;
    spec.flip_prob = args.flip_prob;
    spec.instances_per_source = args.instances_per_source;
    spec.n_test = args.test_size;
    spec.fraction_max = args.fraction_max;
    spec.knn_k = args.k;

    match args.scenario {
        ScenarioName::Replication => {
            let split = run_replication_scenario(&spec)?;
            write_json(&args.out, &split)?;
            println!("scenario replication factor {}", split.factor);
            println!("grand-total {:?}", split.grand_total);
            println!(
                "ds originals {:?} copies {:?}",
                split.ds_original_total, split.ds_derived_total
            );
            println!(
                "ads originals {:?} copies {:?}",
                split.ads_original_total, split.ads_derived_total
            );
            println!(
                "ds originals' share {:?}",
                split.ds_original_total / split.grand_total
            );
        }
        ScenarioName::Augmentation => {
            let out = run_augmentation_scenario(&spec)?;
            write_json(&args.out, &out)?;
            println!("scenario augmentation (retained {}/{})", out.retained, out.augmented);
            println!(
                "before: originals {:?} derived {:?}",
                out.original_total_before, out.derived_total_before
            );
            println!(
                "after:  originals {:?} derived {:?}",
                out.original_total_after, out.derived_total_after
            );
        }
        ScenarioName::SequentialNoisy => {
            let out = run_sequential_noisy_scenario(&spec)?;
            let mut curves = out.detection.clone();
            curves.extend(out.selection.clone());
            write_curves_json(&args.out, &curves)?;
            write_curve_table(&args.out.with_extension("csv"), &curves)?;
            println!("scenario sequential-noisy over {} seeds", spec.num_seeds);
            for (method, aucs) in &out.auc_by_method {
                let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
                println!("detection auc {method} {mean:.4}");
            }
        }
        ScenarioName::Intervention => {
            let curves = run_intervention_scenario(&spec)?;
            write_curves_json(&args.out, &curves)?;
            write_curve_table(&args.out.with_extension("csv"), &curves)?;
            println!("scenario intervention over {} seeds", spec.num_seeds);
            for curve in &curves {
                println!(
                    "{} final relative accuracy {:.4}",
                    curve.method,
                    curve.y.last().unwrap()
                );
            }
        }
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &PathBuf, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        reason: e.to_string(),
    })?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
