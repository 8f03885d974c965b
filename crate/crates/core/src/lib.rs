//! Asymmetric Data Shapley valuation: domain model, utility contracts, and
//! three engines (exact enumeration, Monte Carlo, and a closed-form KNN
//! surrogate), plus desk-scale experiment scenarios and file I/O.

pub mod error;
pub mod exact;
pub mod io;
pub mod knn;
pub mod mc;
pub mod model;
pub mod numeric;
pub mod report;
pub mod scenarios;
pub mod utility;

pub use error::{Error, Result};
pub use model::{
    ContributorId, DataSource, Dataset, Instance, OrderedGroups, OrderedPermutation, SourceId,
    SourceSet, DEFAULT_ENUMERATION_CAP,
};
pub use report::{aggregate_contributors, ReportMetadata, ValuationReport};
pub use utility::{
    marginal_contribution, state_marginal_contribution, KnnUtilityConfig, StatefulUtility, Utility,
};
