//! Error types for every stage of the pipeline.
//!
//! Each module has its own error enum so failures carry the context a
//! caller needs (file, line, region, week, column). The crate-level
//! [`Error`] wraps them all and classifies each failure as either an
//! input/configuration problem (CLI exit code 2) or a computational
//! failure (exit code 1).

use std::path::PathBuf;
use thiserror::Error;

use crate::week::{WeekId, WeekRange};

#[derive(Debug, Error)]
pub enum WeekError {
    #[error("week {week} does not exist in ISO year {year}")]
    InvalidWeek { year: i32, week: u32 },
    #[error("cannot parse `{0}` as an ISO week (expected e.g. 2004-W53)")]
    UnparseableWeek(String),
    #[error("week range is empty: start {start} is after end {end}")]
    EmptyRange { start: WeekId, end: WeekId },
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed row: {message}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}:{line}: tmax {tmax} is below tmin {tmin} for cell {cell} on {date}")]
    TmaxBelowTmin {
        path: PathBuf,
        line: u64,
        cell: String,
        date: chrono::NaiveDate,
        tmax: f64,
        tmin: f64,
    },
    #[error("{path}:{line}: cell {cell} is not present in the cell map")]
    UnknownCell {
        path: PathBuf,
        line: u64,
        cell: String,
    },
    #[error("{path}:{line}: duplicate record for cell {cell} on {date}")]
    DuplicateRecord {
        path: PathBuf,
        line: u64,
        cell: String,
        date: chrono::NaiveDate,
    },
    #[error("{path}:{line}: negative discharge count {count} for region {region}")]
    NegativeCount {
        path: PathBuf,
        line: u64,
        region: String,
        count: i64,
    },
    #[error("region {region}: weekly series has a gap after {week}: expected {expected}, found {found}")]
    WeekGap {
        region: String,
        week: WeekId,
        expected: WeekId,
        found: WeekId,
    },
    #[error("region {region}: duplicate week {week} in series")]
    DuplicateWeek { region: String, week: WeekId },
    #[error("region {region}: no aerosol observations in week {week} at any site")]
    MissingAodWeek { region: String, week: WeekId },
    #[error("{path}:{line}: region {region} is not among the known regions")]
    UnknownRegion {
        path: PathBuf,
        line: u64,
        region: String,
    },
    #[error("{path}:{line}: aerosol record references unknown site {site}")]
    UnknownSiteRef {
        path: PathBuf,
        line: u64,
        site: String,
    },
    #[error("{context}: input contains no usable records")]
    Empty { context: String },
    #[error("region {region} has climate data but no {what}")]
    MissingSeries { region: String, what: &'static str },
    #[error("aerosol aggregation needs at least one site")]
    NoSites,
    #[error("inverse-distance power must be finite and non-negative, got {0}")]
    BadIdwPower(f64),
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cell {cell}: baseline period holds {got} daily records, need at least {need}")]
    InsufficientBaseline { cell: String, got: usize, need: usize },
    #[error("region {region}, week {week}: cell {cell} has {got} daily records, expected 7")]
    WrongDayCount {
        region: String,
        week: WeekId,
        cell: String,
        got: usize,
    },
    #[error("week {week}: no cell belongs to the requested group")]
    EmptyWeek { week: WeekId },
    #[error("cell {cell} has no baseline thresholds")]
    MissingBaseline { cell: String },
    #[error("cross-correlation input is constant over the compared window (lag {lag})")]
    ConstantSeries { lag: usize },
    #[error("series of length {len} is too short for max lag {max_lag} (need len > max_lag + 2)")]
    SeriesTooShort { len: usize, max_lag: usize },
    #[error("cross-correlation function is empty")]
    EmptyCcf,
    #[error("column {column} has a negative value {value}; log1p transform refuses negatives")]
    NegativePrecip { column: String, value: f64 },
    #[error("no column named {0} in the feature matrix")]
    UnknownColumn(String),
    #[error("aligned inputs required: indices cover {indices}, aerosol covers {aod}, discharges cover {discharges}")]
    MisalignedRanges {
        indices: WeekRange,
        aod: WeekRange,
        discharges: WeekRange,
    },
    #[error("only {rows} aligned weeks; lag trimming of {trim} weeks leaves no rows")]
    TooShortAfterTrim { rows: usize, trim: usize },
    #[error("quantile probability must lie in [0, 1], got {0}")]
    BadProbability(f64),
    #[error("quantile of an empty sample is undefined")]
    EmptySample,
    #[error("series length mismatch: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("non-finite value in column {column} at week {week}")]
    NonFiniteValue { column: String, week: WeekId },
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid hyperparameter: {0}")]
    InvalidParams(String),
    #[error("{need} training rows required, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("prediction input lacks column {0} that the model was trained on")]
    MissingColumn(String),
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("basis column {0} is degenerate (zero variance)")]
    DegenerateColumn(String),
    #[error("coordinate descent did not converge: max coefficient change {delta:.3e} after {sweeps} sweeps")]
    NoConvergence { delta: f64, sweeps: usize },
    #[error("model document has format version {got}, this build reads version {supported}")]
    UnsupportedVersion { got: u32, supported: u32 },
    #[error("failed to read model from {path}: {message}")]
    Load { path: PathBuf, message: String },
    #[error("failed to write model to {path}: {message}")]
    Save { path: PathBuf, message: String },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(
        "training range {range} spans {len} weeks; one window needs {need} (analysis + assessment)"
    )]
    TrainTooShort {
        range: WeekRange,
        len: usize,
        need: usize,
    },
    #[error("window geometry must be positive (analysis {analysis}, assessment {assessment}, step {step})")]
    BadWindowGeometry {
        analysis: usize,
        assessment: usize,
        step: usize,
    },
    #[error("train range {train} and test range {test} must be disjoint with train first")]
    BadSplit { train: WeekRange, test: WeekRange },
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("no sliding windows supplied")]
    NoWindows,
    #[error("expected one grid each for RF, XGBOOST, PROPHET in that order; got {0}")]
    WrongGrids(String),
    #[error("every hyperparameter bundle failed to fit; first failure: {first_error}")]
    AllBundlesDisqualified { first_error: String },
    #[error("conformal calibration requires at least one residual")]
    EmptyCalibration,
    #[error("miscoverage alpha must lie strictly inside (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("length mismatch in {context}: {left} vs {right}")]
    LengthMismatch {
        context: String,
        left: usize,
        right: usize,
    },
    #[error("ensemble needs exactly three member forecasts, got {0}")]
    NotThreeMembers(usize),
    #[error("feature matrix has no rows inside {range}")]
    NoRowsInRange { range: WeekRange },
    #[error("model fit failed for {method}: {source}")]
    Fit {
        method: &'static str,
        source: ModelError,
    },
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("length mismatch: {observed} observed vs {predicted} predicted")]
    LengthMismatch { observed: usize, predicted: usize },
    #[error("metric of an empty series is undefined")]
    Empty,
    #[error("relative ratio denominator is zero ({context})")]
    ZeroDenominator { context: String },
    #[error("interval score needs alpha strictly inside (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("interval bound crossing at index {index}: lower {lower} > upper {upper}")]
    CrossedBounds { index: usize, lower: f64, upper: f64 },
    #[error("no methods to select from")]
    NoCandidates,
}

#[derive(Debug, Error)]
pub enum ShapError {
    #[error("background set is empty")]
    EmptyBackground,
    #[error("exact Shapley enumerates 2^d subsets; d = {0} exceeds the supported 12")]
    TooManyFeatures(usize),
    #[error("instance has {instance} features, background rows have {background}")]
    LengthMismatch { instance: usize, background: usize },
    #[error("sampling needs at least one permutation draw")]
    NoSamples,
    #[error("global importance needs at least one attribution")]
    NoAttributions,
    #[error("all attributions are zero; importance percentages are undefined")]
    AllZero,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: cannot parse `{text}`: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        text: String,
        message: String,
    },
    #[error("missing required config key `{0}`")]
    MissingKey(String),
    #[error("config key `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
}

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to encode {path}: {message}")]
    Encode { path: PathBuf, message: String },
    #[error("failed to read {path}: {message}")]
    Read { path: PathBuf, message: String },
}

/// Crate-wide error: any stage's failure, classified for CLI exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Week(#[from] WeekError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Shapley(#[from] ShapError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

impl Error {
    /// True for problems a user can fix by correcting inputs or
    /// configuration; false for failures of the computation itself.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Week(_) | Error::Ingest(_) | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
