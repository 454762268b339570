//! Forecasting weekly regional hospital discharges from climate-extreme
//! indices, aerosol optical depth, and recent discharge history.
//!
//! The crate is organised as a pipeline:
//!
//! * [`ingest`] — CSV loading, validation, weekly grouping, and
//!   inverse-distance aggregation of aerosol site readings to region
//!   centroids.
//! * [`features`] — percentile baselines, the 22 weekly climate-extreme
//!   indices, log transforms, cross-correlation scans, and design-matrix
//!   assembly (indices + aerosol + lagged aerosol + discharge lags).
//! * [`trees`] — regression trees from scratch: a bagged random forest
//!   and a gradient-boosted ensemble sharing one split search.
//! * [`additive`] — a trend + seasonality + regressors curve model fit by
//!   penalized least squares with coordinate descent.
//! * [`pipeline`] — sliding-window evaluation, grid search, split-conformal
//!   intervals, the equal-weight ensemble, and the end-to-end protocol.
//! * [`metrics`] — point and interval accuracy scores, train/test ratio
//!   conventions, and the model-selection rule.
//! * [`shapley`] — per-forecast feature attribution by permutation
//!   sampling, an exact enumerator for small models, and global
//!   importance summaries.
//! * [`synth`] — a synthetic-data generator with known ground truth.
//! * [`config`] / [`runner`] / [`report`] — run configuration, command
//!   orchestration, and artifact writers for the CLI.

pub mod additive;
pub mod config;
pub mod error;
pub mod features;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod runner;
pub mod shapley;
pub mod synth;
pub mod trees;
pub mod util;
pub mod week;

pub use error::{Error, Result};
