//! Clinker phase prediction toolkit.
//!
//! The crate covers the full path from plant-shaped raw data to interpreted
//! models:
//!
//! * [`datamodel`] — domain types, canonical feature ordering, CSV schemas.
//! * [`synthgen`] — synthetic plant histories with a known ground-truth
//!   phase law and reproducible defect injection.
//! * [`align`] — residence-time offsets and windowed temporal joins.
//! * [`preprocess`] — the staged cleaning protocol with loss accounting.
//! * [`models`] — the regression zoo (linear family, SVR, GPR, trees,
//!   forests, boosting, MLP) behind one predict contract.
//! * [`eval`] — metrics, splits, k-fold cross-validation and grid search.
//! * [`equations`] — Bogue-style and data-driven linear clinker equations.
//! * [`explain`] — Shapley attribution, exact and sampled.
//! * [`run`] — configuration, manifests, pipeline orchestration, reports.

pub mod align;
pub mod datamodel;
pub mod equations;
pub mod eval;
pub mod explain;
pub mod models;
pub mod preprocess;
pub mod run;
pub mod rng;
pub mod synthgen;
