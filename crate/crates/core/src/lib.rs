//! Municipality-level academic vulnerability analytics.
//!
//! The pipeline aggregates student, connectivity and census records into
//! one row per municipality and test year, labels municipalities whose mean
//! exam score falls below a per-year risk threshold, trains three
//! classifiers (logistic regression, a regression forest and a
//! classification forest), fuses their votes into a four-level
//! vulnerability score and answers minimal-intervention queries.
//!
//! Modules:
//! - [`dataset`]: source schemas, aggregation, year splits, synthetic data
//! - [`stats`]: correlations, group means, Bonferroni pairwise Welch tests, trends
//! - [`models`]: logistic regression with Wald inference, random forests, ROC/AUC
//! - [`risk`]: thresholds, labels, bundle training, ensemble voting
//! - [`intervention`]: what-if evaluation and minimal-intervention search

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod covariable;
pub mod dataset;
pub mod intervention;
pub mod models;
pub mod risk;
pub mod stats;

pub use covariable::Covariable;
pub use dataset::MunicipalityYear;
pub use risk::{Level, RiskConfig, RiskModelBundle, VulnerabilityAssessment};
