//! Local differential privacy on multi-dimensional sensitive attributes and
//! its effect on group fairness.
//!
//! The crate is organised along the experiment pipeline:
//!
//! - [`schema`]: attribute catalog, roles and the columnar [`Dataset`].
//! - [`mechanism`]: k-ary randomized response and its independent /
//!   combined multi-dimensional compositions, plus analytic transition
//!   matrices.
//! - [`synth`]: the synthetic causal generator (`C -> A -> M -> Y`).
//! - [`ingest`]: CSV loading with binning, filters and outcome thresholds.
//! - [`forest`]: a bagged Gini decision-forest classifier.
//! - [`fairness`]: per-group confusion rates and signed disparities.
//! - [`harness`]: fold splitting, obfuscation sweeps, aggregation, reports.

pub mod error;
pub mod fairness;
pub mod forest;
pub mod harness;
pub mod ingest;
pub mod mechanism;
pub mod schema;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
pub use schema::{AttributeSpec, Dataset, Role, Schema};
