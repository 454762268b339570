//! The experimental protocol: train/test split, sliding-window grid
//! search, final refits, equal-weight ensemble, and split-conformal
//! prediction intervals.
//!
//! Anything fitted or calibrated here sees only training-range rows;
//! test rows contribute covariates at forecast time and nothing else.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, PipelineError};
use crate::features::FeatureMatrix;
use crate::model::{AdditiveForecaster, FittedModel, LearnerKind};
use crate::trees::{fit_gbt, fit_random_forest, BoostParams, ForestParams};
use crate::additive::{build_basis, fit_additive, AdditiveParams};
use crate::util::derive_seed;
use crate::week::{WeekId, WeekRange};

type Result<T> = std::result::Result<T, PipelineError>;

/// Column that carries the week counter in every design matrix.
pub const TIME_COLUMN: &str = "date";

/// One tuning window: models fit on `analysis` and score on the
/// `assessment` year that follows it immediately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlidingWindow {
    pub analysis: WeekRange,
    pub assessment: WeekRange,
}

/// Geometry of the sliding windows: two years of analysis, one year of
/// assessment, advanced one year at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub analysis_len: usize,
    pub assessment_len: usize,
    pub step: usize,
}

impl Default for WindowPlan {
    fn default() -> Self {
        WindowPlan {
            analysis_len: 104,
            assessment_len: 52,
            step: 52,
        }
    }
}

/// The train/test partition of the study period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: WeekRange,
    pub test: WeekRange,
}

impl Split {
    /// Builds a split, requiring test to start the week after train ends.
    pub fn new(train: WeekRange, test: WeekRange) -> Result<Self> {
        if test.start != train.end.next() {
            return Err(PipelineError::BadSplit { train, test });
        }
        Ok(Split { train, test })
    }
}

/// Candidate hyperparameters for one learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HyperBundle {
    Forest(ForestParams),
    Boosted(BoostParams),
    Additive(AdditiveParams),
}

impl HyperBundle {
    pub fn kind(&self) -> LearnerKind {
        match self {
            HyperBundle::Forest(_) => LearnerKind::RandomForest,
            HyperBundle::Boosted(_) => LearnerKind::GradientBoosting,
            HyperBundle::Additive(_) => LearnerKind::Additive,
        }
    }
}

/// An ordered list of candidate bundles for one learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub kind: LearnerKind,
    pub bundles: Vec<HyperBundle>,
}

impl HyperGrid {
    pub fn validate(&self) -> Result<()> {
        if self.bundles.is_empty() {
            return Err(PipelineError::EmptyGrid);
        }
        for bundle in &self.bundles {
            if bundle.kind() != self.kind {
                return Err(PipelineError::WrongGrids(format!(
                    "a {} grid contains a {} bundle",
                    self.kind.label(),
                    bundle.kind().label()
                )));
            }
        }
        Ok(())
    }
}

/// The stock random-forest grid: every combination of the tuned axes.
pub fn default_forest_grid(n_trees: usize) -> HyperGrid {
    let mut bundles = Vec::new();
    for &mtry in &[12, 15, 17, 20, 22, 25] {
        for &min_n in &[22, 30, 37, 40] {
            bundles.push(HyperBundle::Forest(ForestParams {
                n_trees,
                mtry,
                min_n,
                seed: 0,
            }));
        }
    }
    HyperGrid {
        kind: LearnerKind::RandomForest,
        bundles,
    }
}

/// The stock boosting grid: three profiles ranging from slow-and-deep
/// to faster shallow learning.
pub fn default_boost_grid(n_trees: usize) -> HyperGrid {
    let rows: [(usize, usize, usize, f64, f64, f64); 3] = [
        (12, 40, 13, 0.007, 0.001, 0.898),
        (14, 8, 11, 0.078, 0.018, 0.828),
        (10, 35, 12, 0.003, 0.000, 0.589),
    ];
    let bundles = rows
        .iter()
        .map(
            |&(mtry, min_n, tree_depth, learn_rate, loss_reduction, sample_size)| {
                HyperBundle::Boosted(BoostParams {
                    n_trees,
                    mtry,
                    min_n,
                    tree_depth,
                    learn_rate,
                    loss_reduction,
                    sample_size,
                    l2_reg: 1.0,
                    seed: 0,
                })
            },
        )
        .collect();
    HyperGrid {
        kind: LearnerKind::GradientBoosting,
        bundles,
    }
}

/// The stock additive-model grid over the two prior scales
/// (half-decade logarithmic ladders).
pub fn default_additive_grid() -> HyperGrid {
    let mut bundles = Vec::new();
    for &cp in &[1.0, 1.778, 3.162] {
        for &seas in &[1.0, 1.778, 3.162, 5.623, 10.0] {
            bundles.push(HyperBundle::Additive(AdditiveParams {
                prior_scale_changepoints: cp,
                prior_scale_seasonality: seas,
                ..AdditiveParams::default()
            }));
        }
    }
    HyperGrid {
        kind: LearnerKind::Additive,
        bundles,
    }
}

/// The three default grids in protocol order (RF, XGBOOST, PROPHET).
pub fn default_grids(n_trees: usize) -> Vec<HyperGrid> {
    vec![
        default_forest_grid(n_trees),
        default_boost_grid(n_trees),
        default_additive_grid(),
    ]
}

/// Enumerates the tuning windows: the first analysis set starts at the
/// start of `train`, and each window advances by `plan.step` until an
/// assessment year no longer fits inside `train`.
pub fn make_windows(train: &WeekRange, plan: &WindowPlan) -> Result<Vec<SlidingWindow>> {
    if plan.analysis_len == 0 || plan.assessment_len == 0 || plan.step == 0 {
        return Err(PipelineError::BadWindowGeometry {
            analysis: plan.analysis_len,
            assessment: plan.assessment_len,
            step: plan.step,
        });
    }
    let need = plan.analysis_len + plan.assessment_len;
    let len = train.len();
    if len < need {
        return Err(PipelineError::TrainTooShort {
            range: *train,
            len,
            need,
        });
    }
    let mut windows = Vec::new();
    let mut offset = 0usize;
    while offset + need <= len {
        let a_start = train.start.add_weeks(offset as i64);
        let a_end = a_start.add_weeks(plan.analysis_len as i64 - 1);
        let s_start = a_end.next();
        let s_end = s_start.add_weeks(plan.assessment_len as i64 - 1);
        windows.push(SlidingWindow {
            analysis: WeekRange {
                start: a_start,
                end: a_end,
            },
            assessment: WeekRange {
                start: s_start,
                end: s_end,
            },
        });
        offset += plan.step;
    }
    Ok(windows)
}

/// Fits one bundle on the given row span of `matrix`. Tree learners get
/// `seed`; the additive fit is deterministic and ignores it.
pub fn fit_bundle(
    matrix: &FeatureMatrix,
    rows: std::ops::Range<usize>,
    bundle: &HyperBundle,
    seed: u64,
) -> std::result::Result<FittedModel, ModelError> {
    let sub = matrix.subset(rows);
    match bundle {
        HyperBundle::Forest(p) => {
            let params = ForestParams { seed, ..*p };
            Ok(FittedModel::Forest(fit_random_forest(&sub, &params)?))
        }
        HyperBundle::Boosted(p) => {
            let params = BoostParams { seed, ..p.clone() };
            Ok(FittedModel::Boosted(fit_gbt(&sub, &params)?))
        }
        HyperBundle::Additive(p) => {
            let t_col = sub
                .col_index(TIME_COLUMN)
                .map_err(|_| ModelError::MissingColumn(TIME_COLUMN.to_string()))?;
            let t = sub.column(t_col);
            let regressors: Vec<(String, Vec<f64>)> = sub
                .names
                .iter()
                .enumerate()
                .filter(|(_, name)| name.as_str() != TIME_COLUMN)
                .map(|(j, name)| (name.clone(), sub.column(j)))
                .collect();
            let basis = build_basis(&t, p, &regressors)?;
            let model = fit_additive(&sub.target, &basis, p)?;
            Ok(FittedModel::Additive(AdditiveForecaster {
                model,
                time_column: TIME_COLUMN.to_string(),
            }))
        }
    }
}

/// Tuning outcome of a single bundle: its mean assessment RMSE across
/// windows, or the failure that disqualified it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleScore {
    pub bundle: HyperBundle,
    pub mean_rmse: Option<f64>,
    pub error: Option<String>,
}

/// Result of tuning one learner over the sliding windows.
#[derive(Debug, Clone)]
pub struct GridSearchResult {
    /// Index into the grid (and into `scores`) of the winning bundle.
    pub best_index: usize,
    pub scores: Vec<BundleScore>,
    /// The winner's out-of-sample assessment predictions, pooled over
    /// windows in window order. Used downstream as conformal
    /// calibration material.
    pub assessment_pred: Vec<f64>,
    /// Observed targets aligned with `assessment_pred`.
    pub assessment_actual: Vec<f64>,
}

fn rmse(actual: &[f64], pred: &[f64]) -> f64 {
    let n = actual.len() as f64;
    let sse: f64 = actual
        .iter()
        .zip(pred)
        .map(|(a, p)| (a - p) * (a - p))
        .sum();
    (sse / n).sqrt()
}

/// Scores every bundle on every window (fit on analysis rows, RMSE on
/// assessment rows, averaged over windows) and picks the argmin. Ties
/// keep the earliest bundle in grid order. A bundle whose fit fails on
/// any window is disqualified and its first failure recorded; if the
/// whole grid is disqualified an error is returned.
///
/// Every bundle sees the same derived seed on a given window (common
/// random numbers): comparisons across bundles are then not confounded
/// by bootstrap luck, identical bundles score identically, and
/// rearranging the grid never changes what a bundle sees.
pub fn grid_search(
    matrix: &FeatureMatrix,
    grid: &HyperGrid,
    windows: &[SlidingWindow],
    master_seed: u64,
) -> Result<GridSearchResult> {
    grid.validate()?;
    if windows.is_empty() {
        return Err(PipelineError::NoWindows);
    }
    for (w, window) in windows.iter().enumerate() {
        let a = matrix.rows_in(&window.analysis);
        let s = matrix.rows_in(&window.assessment);
        if a.len() != window.analysis.len() || s.len() != window.assessment.len() {
            return Err(PipelineError::NoRowsInRange {
                range: if a.len() != window.analysis.len() {
                    window.analysis
                } else {
                    window.assessment
                },
            });
        }
        debug_assert!(s.end <= matrix.n_rows(), "window {w} escapes the matrix");
    }

    let n_w = windows.len();
    let tasks: Vec<(usize, usize)> = (0..grid.bundles.len())
        .flat_map(|b| (0..n_w).map(move |w| (b, w)))
        .collect();
    // Each (bundle, window) fit is independent; evaluate them all in
    // parallel and reduce sequentially in grid order afterwards.
    let outcomes: Vec<std::result::Result<Vec<f64>, String>> = tasks
        .par_iter()
        .map(|&(b, w)| {
            let window = &windows[w];
            let seed = derive_seed(master_seed, 1 + w as u64);
            let analysis = matrix.rows_in(&window.analysis);
            let model =
                fit_bundle(matrix, analysis, &grid.bundles[b], seed).map_err(|e| e.to_string())?;
            let assess = matrix.subset(matrix.rows_in(&window.assessment));
            model
                .predict_matrix(&assess)
                .map_err(|e| e.to_string())
        })
        .collect();

    let mut scores = Vec::with_capacity(grid.bundles.len());
    let mut per_bundle_preds: Vec<Option<Vec<f64>>> = Vec::with_capacity(grid.bundles.len());
    for b in 0..grid.bundles.len() {
        let mut pooled = Vec::new();
        let mut sum_rmse = 0.0;
        let mut failure: Option<String> = None;
        for w in 0..n_w {
            match &outcomes[b * n_w + w] {
                Ok(preds) => {
                    let assess = matrix.rows_in(&windows[w].assessment);
                    let actual = &matrix.target[assess];
                    sum_rmse += rmse(actual, preds);
                    pooled.extend_from_slice(preds);
                }
                Err(e) => {
                    failure = Some(e.clone());
                    break;
                }
            }
        }
        match failure {
            None => {
                scores.push(BundleScore {
                    bundle: grid.bundles[b].clone(),
                    mean_rmse: Some(sum_rmse / n_w as f64),
                    error: None,
                });
                per_bundle_preds.push(Some(pooled));
            }
            Some(e) => {
                scores.push(BundleScore {
                    bundle: grid.bundles[b].clone(),
                    mean_rmse: None,
                    error: Some(e),
                });
                per_bundle_preds.push(None);
            }
        }
    }

    let best_index = scores
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.mean_rmse.map(|r| (i, r)))
        .min_by(|(_, a), (_, b)| a.total_cmp(b))
        .map(|(i, _)| i)
        .ok_or_else(|| PipelineError::AllBundlesDisqualified {
            first_error: scores
                .iter()
                .find_map(|s| s.error.clone())
                .unwrap_or_default(),
        })?;

    let assessment_pred = per_bundle_preds[best_index]
        .take()
        .expect("winner has predictions");
    let assessment_actual: Vec<f64> = windows
        .iter()
        .flat_map(|w| matrix.target[matrix.rows_in(&w.assessment)].to_vec())
        .collect();
    Ok(GridSearchResult {
        best_index,
        scores,
        assessment_pred,
        assessment_actual,
    })
}

/// Point forecasts with a symmetric interval around each one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSeries {
    pub weeks: Vec<WeekId>,
    pub point: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub alpha: f64,
}

/// The split-conformal half-width: the ⌈(n+1)(1−alpha)⌉-th smallest
/// absolute residual, capped at the largest one.
pub fn conformal_halfwidth(calibration_residuals: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PipelineError::BadAlpha(alpha));
    }
    let n = calibration_residuals.len();
    if n == 0 {
        return Err(PipelineError::EmptyCalibration);
    }
    let mut scores: Vec<f64> = calibration_residuals.iter().map(|r| r.abs()).collect();
    scores.sort_unstable_by(f64::total_cmp);
    // Nudge below the float product before taking the ceiling so that
    // values like 20 × 0.95 = 19.000000000000004 still index the 19th
    // element, as the exact arithmetic says.
    let rank = ((n as f64 + 1.0) * (1.0 - alpha) - 1e-9).ceil() as usize;
    Ok(scores[rank.clamp(1, n) - 1])
}

/// Wraps point forecasts in a split-conformal interval: point ± q with
/// q from [`conformal_halfwidth`].
pub fn conformal_interval(
    weeks: Vec<WeekId>,
    point: Vec<f64>,
    calibration_residuals: &[f64],
    alpha: f64,
) -> Result<ForecastSeries> {
    if weeks.len() != point.len() {
        return Err(PipelineError::LengthMismatch {
            context: "forecast weeks vs points".to_string(),
            left: weeks.len(),
            right: point.len(),
        });
    }
    let q = conformal_halfwidth(calibration_residuals, alpha)?;
    let lower = point.iter().map(|p| p - q).collect();
    let upper = point.iter().map(|p| p + q).collect();
    Ok(ForecastSeries {
        weeks,
        point,
        lower,
        upper,
        alpha,
    })
}

/// Pointwise arithmetic mean of the three member forecasts.
pub fn ensemble_predict(rf: &[f64], gbt: &[f64], additive: &[f64]) -> Result<Vec<f64>> {
    if rf.len() != gbt.len() || rf.len() != additive.len() {
        return Err(PipelineError::LengthMismatch {
            context: "ensemble members".to_string(),
            left: rf.len(),
            right: gbt.len().max(additive.len()),
        });
    }
    Ok(rf
        .iter()
        .zip(gbt)
        .zip(additive)
        .map(|((a, b), c)| (a + b + c) / 3.0)
        .collect())
}

/// Everything the protocol produced for one method.
#[derive(Debug, Clone)]
pub struct MethodResult {
    pub kind: LearnerKind,
    pub model: FittedModel,
    /// Winning bundle; `None` for the ensemble, which has none of its own.
    pub chosen: Option<HyperBundle>,
    /// Mean assessment RMSE (or failure) per candidate bundle.
    pub scores: Vec<BundleScore>,
    /// Test-range forecasts with conformal intervals.
    pub test: ForecastSeries,
    /// In-sample fits over the train range, carrying the same interval
    /// half-width as the test forecasts so interval metrics are
    /// comparable across the split.
    pub train: ForecastSeries,
    /// Out-of-sample calibration residuals (observed − predicted).
    pub calibration: Vec<f64>,
}

/// Output of [`run_protocol`] for one region.
#[derive(Debug, Clone)]
pub struct ProtocolResult {
    /// RF, XGBOOST, PROPHET, ENSEMBLE — in that order.
    pub methods: Vec<MethodResult>,
    pub windows: Vec<SlidingWindow>,
    pub train_weeks: Vec<WeekId>,
    pub train_actual: Vec<f64>,
    pub test_actual: Vec<f64>,
}

impl ProtocolResult {
    pub fn method(&self, kind: LearnerKind) -> &MethodResult {
        self.methods
            .iter()
            .find(|m| m.kind == kind)
            .expect("all four methods are always present")
    }
}

/// Runs the full protocol on one region's design matrix:
///
/// 1. tune each single learner over the sliding windows of the train
///    range,
/// 2. refit each winner on the whole train range,
/// 3. forecast the test weeks from their observed covariates,
/// 4. wrap each series in a split-conformal interval calibrated on the
///    pooled out-of-sample assessment residuals of the winning bundle,
/// 5. add the equal-weight ensemble of the three point-forecast series,
///    conformalized independently from the averaged assessment
///    predictions.
///
/// Deterministic given (matrix, grids, `master_seed`).
pub fn run_protocol(
    matrix: &FeatureMatrix,
    split: &Split,
    grids: &[HyperGrid],
    plan: &WindowPlan,
    alpha: f64,
    master_seed: u64,
) -> Result<ProtocolResult> {
    let expected = [
        LearnerKind::RandomForest,
        LearnerKind::GradientBoosting,
        LearnerKind::Additive,
    ];
    let got: Vec<&str> = grids.iter().map(|g| g.kind.label()).collect();
    if grids.len() != 3 || grids.iter().map(|g| g.kind).ne(expected.iter().copied()) {
        return Err(PipelineError::WrongGrids(got.join(", ")));
    }
    for (range, label) in [(&split.train, "train"), (&split.test, "test")] {
        let rows = matrix.rows_in(range);
        if rows.is_empty() {
            return Err(PipelineError::NoRowsInRange { range: *range });
        }
        if rows.len() != range.len() {
            return Err(PipelineError::LengthMismatch {
                context: format!("matrix rows covering the {label} range {range}"),
                left: rows.len(),
                right: range.len(),
            });
        }
    }

    let windows = make_windows(&split.train, plan)?;
    let train_rows = matrix.rows_in(&split.train);
    let test_rows = matrix.rows_in(&split.test);
    let train_sub = matrix.subset(train_rows.clone());
    let test_sub = matrix.subset(test_rows.clone());
    let test_weeks = test_sub.weeks.clone();
    let train_weeks = train_sub.weeks.clone();

    let mut methods = Vec::with_capacity(4);
    let mut member_test: Vec<Vec<f64>> = Vec::with_capacity(3);
    let mut member_assess: Vec<Vec<f64>> = Vec::with_capacity(3);
    let mut member_train: Vec<Vec<f64>> = Vec::with_capacity(3);
    let mut member_models: Vec<FittedModel> = Vec::with_capacity(3);
    let mut assessment_actual: Vec<f64> = Vec::new();

    for (ordinal, grid) in grids.iter().enumerate() {
        let method_seed = derive_seed(master_seed, ordinal as u64);
        let gs = grid_search(matrix, grid, &windows, method_seed)?;
        let chosen = grid.bundles[gs.best_index].clone();
        let model = fit_bundle(
            matrix,
            train_rows.clone(),
            &chosen,
            derive_seed(method_seed, 0),
        )
        .map_err(|source| PipelineError::Fit {
            method: grid.kind.label(),
            source,
        })?;

        let test_point = model
            .predict_matrix(&test_sub)
            .map_err(|source| PipelineError::Fit {
                method: grid.kind.label(),
                source,
            })?;
        let train_point = model
            .predict_matrix(&train_sub)
            .map_err(|source| PipelineError::Fit {
                method: grid.kind.label(),
                source,
            })?;

        let calibration: Vec<f64> = gs
            .assessment_actual
            .iter()
            .zip(&gs.assessment_pred)
            .map(|(a, p)| a - p)
            .collect();
        let q = conformal_halfwidth(&calibration, alpha)?;
        let test = ForecastSeries {
            weeks: test_weeks.clone(),
            lower: test_point.iter().map(|p| p - q).collect(),
            upper: test_point.iter().map(|p| p + q).collect(),
            point: test_point.clone(),
            alpha,
        };
        let train = ForecastSeries {
            weeks: train_weeks.clone(),
            lower: train_point.iter().map(|p| p - q).collect(),
            upper: train_point.iter().map(|p| p + q).collect(),
            point: train_point.clone(),
            alpha,
        };

        assessment_actual = gs.assessment_actual;
        member_test.push(test_point);
        member_assess.push(gs.assessment_pred);
        member_train.push(train_point);
        member_models.push(model.clone());
        methods.push(MethodResult {
            kind: grid.kind,
            model,
            chosen: Some(chosen),
            scores: gs.scores,
            test,
            train,
            calibration,
        });
    }

    // The ensemble averages the three members' points everywhere and is
    // calibrated on its own assessment residuals.
    let ens_test = ensemble_predict(&member_test[0], &member_test[1], &member_test[2])?;
    let ens_assess = ensemble_predict(&member_assess[0], &member_assess[1], &member_assess[2])?;
    let ens_train = ensemble_predict(&member_train[0], &member_train[1], &member_train[2])?;
    let calibration: Vec<f64> = assessment_actual
        .iter()
        .zip(&ens_assess)
        .map(|(a, p)| a - p)
        .collect();
    let q = conformal_halfwidth(&calibration, alpha)?;
    methods.push(MethodResult {
        kind: LearnerKind::Ensemble,
        model: FittedModel::Ensemble(member_models),
        chosen: None,
        scores: Vec::new(),
        test: ForecastSeries {
            weeks: test_weeks,
            lower: ens_test.iter().map(|p| p - q).collect(),
            upper: ens_test.iter().map(|p| p + q).collect(),
            point: ens_test,
            alpha,
        },
        train: ForecastSeries {
            weeks: train_weeks.clone(),
            lower: ens_train.iter().map(|p| p - q).collect(),
            upper: ens_train.iter().map(|p| p + q).collect(),
            point: ens_train,
            alpha,
        },
        calibration,
    });

    Ok(ProtocolResult {
        methods,
        windows,
        train_weeks,
        train_actual: train_sub.target,
        test_actual: test_sub.target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::RegionId;
    use proptest::prelude::*;

    fn week(y: i32, w: u32) -> WeekId {
        WeekId::new(y, w).unwrap()
    }

    fn range_of_len(len: usize) -> WeekRange {
        let start = week(2001, 1);
        WeekRange {
            start,
            end: start.add_weeks(len as i64 - 1),
        }
    }

    /// A deterministic matrix whose target depends strongly on x0, has
    /// an annual cycle, and never goes degenerate inside a window.
    fn test_matrix(n_weeks: usize) -> FeatureMatrix {
        let names: Vec<String> = ["x0", "x1", "x2", TIME_COLUMN]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let start = week(2001, 1);
        let weeks: Vec<WeekId> = (0..n_weeks).map(|i| start.add_weeks(i as i64)).collect();
        let mut data = Vec::new();
        let mut target = Vec::new();
        for i in 0..n_weeks {
            let t = i as f64;
            let x0 = (t * 0.7).sin() * 5.0 + (i % 13) as f64;
            let x1 = (t * 0.31).cos() * 2.0;
            let x2 = ((i * 37) % 11) as f64;
            data.extend_from_slice(&[x0, x1, x2, t]);
            target.push(3.0 * x0 + (2.0 * std::f64::consts::PI * t / 52.0).sin() * 4.0 + 20.0);
        }
        FeatureMatrix::new(RegionId::new("r"), names, weeks, data, target)
    }

    fn tiny_grids() -> Vec<HyperGrid> {
        vec![
            HyperGrid {
                kind: LearnerKind::RandomForest,
                bundles: vec![HyperBundle::Forest(ForestParams {
                    n_trees: 10,
                    mtry: 2,
                    min_n: 5,
                    seed: 0,
                })],
            },
            HyperGrid {
                kind: LearnerKind::GradientBoosting,
                bundles: vec![HyperBundle::Boosted(BoostParams {
                    n_trees: 15,
                    mtry: 3,
                    min_n: 5,
                    tree_depth: 3,
                    learn_rate: 0.2,
                    sample_size: 0.9,
                    ..BoostParams::default()
                })],
            },
            HyperGrid {
                kind: LearnerKind::Additive,
                bundles: vec![HyperBundle::Additive(AdditiveParams {
                    n_changepoints: 3,
                    fourier_order: 2,
                    ..AdditiveParams::default()
                })],
            },
        ]
    }

    #[test]
    fn window_counts_match_hand_enumeration() {
        let plan = WindowPlan::default();
        assert_eq!(make_windows(&range_of_len(208), &plan).unwrap().len(), 2);
        assert_eq!(make_windows(&range_of_len(156), &plan).unwrap().len(), 1);
        assert!(matches!(
            make_windows(&range_of_len(155), &plan),
            Err(PipelineError::TrainTooShort { len: 155, need: 156, .. })
        ));
    }

    #[test]
    fn eighteen_training_years_give_sixteen_windows() {
        let train = WeekRange {
            start: week(2001, 1),
            end: week(2018, 52),
        };
        assert_eq!(train.len(), 939);
        let windows = make_windows(&train, &WindowPlan::default()).unwrap();
        assert_eq!(windows.len(), 16);
        for (i, w) in windows.iter().enumerate() {
            assert_eq!(w.analysis.len(), 104);
            assert_eq!(w.assessment.len(), 52);
            assert_eq!(w.assessment.start, w.analysis.end.next());
            assert_eq!(w.analysis.start, train.start.add_weeks(52 * i as i64));
            assert!(w.assessment.end <= train.end);
        }
    }

    #[test]
    fn degenerate_window_geometry_is_rejected() {
        let plan = WindowPlan {
            step: 0,
            ..WindowPlan::default()
        };
        assert!(matches!(
            make_windows(&range_of_len(208), &plan),
            Err(PipelineError::BadWindowGeometry { .. })
        ));
    }

    #[test]
    fn split_requires_test_right_after_train() {
        let train = range_of_len(208);
        let good = WeekRange {
            start: train.end.next(),
            end: train.end.add_weeks(52),
        };
        assert!(Split::new(train, good).is_ok());
        let gap = WeekRange {
            start: train.end.add_weeks(2),
            end: train.end.add_weeks(53),
        };
        assert!(matches!(
            Split::new(train, gap),
            Err(PipelineError::BadSplit { .. })
        ));
        let overlap = WeekRange {
            start: train.end,
            end: train.end.add_weeks(52),
        };
        assert!(Split::new(train, overlap).is_err());
    }

    #[test]
    fn single_bundle_grid_selects_it() {
        let m = test_matrix(170);
        let windows = make_windows(&range_of_len(170), &WindowPlan::default()).unwrap();
        let grid = HyperGrid {
            kind: LearnerKind::RandomForest,
            bundles: vec![HyperBundle::Forest(ForestParams {
                n_trees: 5,
                mtry: 2,
                min_n: 5,
                seed: 0,
            })],
        };
        let gs = grid_search(&m, &grid, &windows, 7).unwrap();
        assert_eq!(gs.best_index, 0);
        assert_eq!(gs.scores.len(), 1);
        assert!(gs.scores[0].mean_rmse.unwrap() > 0.0);
        assert_eq!(gs.assessment_pred.len(), 52);
        assert_eq!(gs.assessment_actual.len(), 52);
    }

    #[test]
    fn identical_bundles_tie_to_the_first() {
        let m = test_matrix(170);
        let windows = make_windows(&range_of_len(170), &WindowPlan::default()).unwrap();
        let bundle = HyperBundle::Forest(ForestParams {
            n_trees: 5,
            mtry: 2,
            min_n: 5,
            seed: 0,
        });
        let grid = HyperGrid {
            kind: LearnerKind::RandomForest,
            bundles: vec![bundle.clone(), bundle],
        };
        let gs = grid_search(&m, &grid, &windows, 7).unwrap();
        // Seeds are derived per window, not per bundle, so identical
        // bundles score identically; the tie must keep the first.
        assert_eq!(gs.scores[0].mean_rmse, gs.scores[1].mean_rmse);
        assert_eq!(gs.best_index, 0);
    }

    #[test]
    fn stronger_bundle_beats_crippled_one_in_either_order() {
        let m = test_matrix(170);
        let windows = make_windows(&range_of_len(170), &WindowPlan::default()).unwrap();
        let strong = HyperBundle::Forest(ForestParams {
            n_trees: 20,
            mtry: 3,
            min_n: 4,
            seed: 0,
        });
        // min_n of a million forces every tree down to a single leaf:
        // the model predicts the analysis mean everywhere.
        let crippled = HyperBundle::Forest(ForestParams {
            n_trees: 20,
            mtry: 3,
            min_n: 1_000_000,
            seed: 0,
        });
        for (bundles, expect) in [
            (vec![strong.clone(), crippled.clone()], 0),
            (vec![crippled, strong], 1),
        ] {
            let grid = HyperGrid {
                kind: LearnerKind::RandomForest,
                bundles,
            };
            let gs = grid_search(&m, &grid, &windows, 3).unwrap();
            assert_eq!(gs.best_index, expect);
        }
    }

    #[test]
    fn failing_bundles_are_disqualified_not_fatal() {
        let m = test_matrix(170);
        let windows = make_windows(&range_of_len(170), &WindowPlan::default()).unwrap();
        let good = HyperBundle::Forest(ForestParams {
            n_trees: 5,
            mtry: 2,
            min_n: 5,
            seed: 0,
        });
        let bad = HyperBundle::Forest(ForestParams {
            n_trees: 5,
            mtry: 999,
            min_n: 5,
            seed: 0,
        });
        let grid = HyperGrid {
            kind: LearnerKind::RandomForest,
            bundles: vec![bad.clone(), good],
        };
        let gs = grid_search(&m, &grid, &windows, 3).unwrap();
        assert_eq!(gs.best_index, 1);
        assert!(gs.scores[0].error.as_deref().unwrap().contains("mtry"));
        assert!(gs.scores[0].mean_rmse.is_none());

        let all_bad = HyperGrid {
            kind: LearnerKind::RandomForest,
            bundles: vec![bad.clone(), bad],
        };
        assert!(matches!(
            grid_search(&m, &all_bad, &windows, 3),
            Err(PipelineError::AllBundlesDisqualified { .. })
        ));
    }

    #[test]
    fn conformal_rank_matches_hand_evaluation() {
        // Scores 1..=19 with mixed signs; alpha 0.05 ranks the 19th
        // smallest absolute score, which is 19.
        let residuals: Vec<f64> = (1..=19).map(|i| if i % 2 == 0 { -(i as f64) } else { i as f64 }).collect();
        assert_eq!(conformal_halfwidth(&residuals, 0.05).unwrap(), 19.0);
        // alpha near 1 ranks the single smallest score.
        assert_eq!(conformal_halfwidth(&residuals, 0.999).unwrap(), 1.0);
        // Perfect calibration collapses the interval.
        let zeros = vec![0.0; 8];
        assert_eq!(conformal_halfwidth(&zeros, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn conformal_interval_wraps_points_symmetrically() {
        let weeks: Vec<WeekId> = (0..3).map(|i| week(2019, 1 + i)).collect();
        let residuals: Vec<f64> = (1..=19).map(|i| i as f64).collect();
        let fs = conformal_interval(weeks, vec![10.0, 0.0, -4.0], &residuals, 0.05).unwrap();
        assert_eq!(fs.lower, vec![-9.0, -19.0, -23.0]);
        assert_eq!(fs.upper, vec![29.0, 19.0, 15.0]);
        for i in 0..3 {
            assert!(fs.lower[i] <= fs.point[i] && fs.point[i] <= fs.upper[i]);
        }
    }

    #[test]
    fn conformal_rejects_bad_inputs() {
        assert!(matches!(
            conformal_halfwidth(&[], 0.05),
            Err(PipelineError::EmptyCalibration)
        ));
        assert!(matches!(
            conformal_halfwidth(&[1.0], 0.0),
            Err(PipelineError::BadAlpha(_))
        ));
        assert!(matches!(
            conformal_halfwidth(&[1.0], 1.0),
            Err(PipelineError::BadAlpha(_))
        ));
        assert!(matches!(
            conformal_interval(vec![week(2019, 1)], vec![1.0, 2.0], &[1.0], 0.05),
            Err(PipelineError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn ensemble_means_and_symmetry() {
        assert_eq!(
            ensemble_predict(&[1.0], &[2.0], &[3.0]).unwrap(),
            vec![2.0]
        );
        let s = vec![4.0, 5.0, 6.0];
        assert_eq!(ensemble_predict(&s, &s, &s).unwrap(), s);
        let (a, b, c) = (vec![1.0, 4.0], vec![2.0, 5.0], vec![3.0, 9.0]);
        let abc = ensemble_predict(&a, &b, &c).unwrap();
        let cab = ensemble_predict(&c, &a, &b).unwrap();
        assert_eq!(abc, cab);
        assert!(matches!(
            ensemble_predict(&a, &b, &[1.0]),
            Err(PipelineError::LengthMismatch { .. })
        ));
    }

    fn smoke_split() -> Split {
        let train = range_of_len(208);
        let test = WeekRange {
            start: train.end.next(),
            end: train.end.add_weeks(20),
        };
        Split::new(train, test).unwrap()
    }

    #[test]
    fn protocol_emits_all_four_methods_with_sane_intervals() {
        let m = test_matrix(228);
        let split = smoke_split();
        let result =
            run_protocol(&m, &split, &tiny_grids(), &WindowPlan::default(), 0.1, 11).unwrap();
        let labels: Vec<&str> = result.methods.iter().map(|m| m.kind.label()).collect();
        assert_eq!(labels, vec!["RF", "XGBOOST", "PROPHET", "ENSEMBLE"]);
        assert_eq!(result.windows.len(), 2);
        assert_eq!(result.test_actual.len(), 20);
        assert_eq!(result.train_actual.len(), 208);
        for method in &result.methods {
            assert_eq!(method.model.kind(), method.kind);
            assert_eq!(method.test.point.len(), 20);
            assert_eq!(method.train.point.len(), 208);
            // Two windows pool two assessment years of residuals.
            assert_eq!(method.calibration.len(), 104);
            for series in [&method.test, &method.train] {
                for i in 0..series.point.len() {
                    assert!(series.lower[i] <= series.point[i]);
                    assert!(series.point[i] <= series.upper[i]);
                }
            }
            match method.kind {
                LearnerKind::Ensemble => assert!(method.chosen.is_none()),
                _ => assert!(method.chosen.is_some()),
            }
        }
        // The ensemble's points are the member means, test and train.
        let (rf, gbt, add, ens) = (
            &result.methods[0],
            &result.methods[1],
            &result.methods[2],
            &result.methods[3],
        );
        for i in 0..20 {
            let mean = (rf.test.point[i] + gbt.test.point[i] + add.test.point[i]) / 3.0;
            assert!((ens.test.point[i] - mean).abs() < 1e-12);
        }
        for i in 0..208 {
            let mean = (rf.train.point[i] + gbt.train.point[i] + add.train.point[i]) / 3.0;
            assert!((ens.train.point[i] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn protocol_is_deterministic_in_the_master_seed() {
        let m = test_matrix(228);
        let split = smoke_split();
        let plan = WindowPlan::default();
        let a = run_protocol(&m, &split, &tiny_grids(), &plan, 0.1, 42).unwrap();
        let b = run_protocol(&m, &split, &tiny_grids(), &plan, 0.1, 42).unwrap();
        for (x, y) in a.methods.iter().zip(&b.methods) {
            assert_eq!(x.test, y.test);
            assert_eq!(x.train, y.train);
        }
        let c = run_protocol(&m, &split, &tiny_grids(), &plan, 0.1, 43).unwrap();
        let same = a.methods[0]
            .test
            .point
            .iter()
            .zip(&c.methods[0].test.point)
            .all(|(x, y)| x == y);
        assert!(!same, "a different master seed must move the forest");
    }

    #[test]
    fn test_rows_never_influence_fits_or_intervals() {
        let m = test_matrix(228);
        let split = smoke_split();
        let plan = WindowPlan::default();
        let baseline = run_protocol(&m, &split, &tiny_grids(), &plan, 0.1, 5).unwrap();

        // Corrupt every test-range target; covariates stay put.
        let mut poisoned = m.clone();
        let test_rows = poisoned.rows_in(&split.test);
        for i in test_rows {
            poisoned.target[i] += 1.0e6;
        }
        let after = run_protocol(&poisoned, &split, &tiny_grids(), &plan, 0.1, 5).unwrap();
        for (x, y) in baseline.methods.iter().zip(&after.methods) {
            assert_eq!(x.test, y.test, "{} leaked test information", x.kind);
            assert_eq!(x.train, y.train);
        }
    }

    #[test]
    fn protocol_rejects_wrong_grid_lineup() {
        let m = test_matrix(228);
        let split = smoke_split();
        let mut grids = tiny_grids();
        grids.swap(0, 2);
        assert!(matches!(
            run_protocol(&m, &split, &grids, &WindowPlan::default(), 0.1, 1),
            Err(PipelineError::WrongGrids(_))
        ));
        assert!(matches!(
            run_protocol(&m, &split, &tiny_grids()[..2], &WindowPlan::default(), 0.1, 1),
            Err(PipelineError::WrongGrids(_))
        ));
    }

    #[test]
    fn protocol_requires_full_week_coverage() {
        let m = test_matrix(100);
        let split = smoke_split();
        assert!(matches!(
            run_protocol(&m, &split, &tiny_grids(), &WindowPlan::default(), 0.1, 1),
            Err(PipelineError::LengthMismatch { .. }) | Err(PipelineError::NoRowsInRange { .. })
        ));
    }

    #[test]
    fn default_grids_have_the_documented_shape() {
        let grids = default_grids(1000);
        assert_eq!(grids[0].bundles.len(), 24);
        assert_eq!(grids[1].bundles.len(), 3);
        assert_eq!(grids[2].bundles.len(), 15);
        for g in &grids {
            g.validate().unwrap();
        }
        // Spot-check one member of each grid.
        assert!(grids[0].bundles.iter().any(|b| matches!(
            b,
            HyperBundle::Forest(ForestParams { mtry: 17, min_n: 30, n_trees: 1000, .. })
        )));
        assert!(grids[1].bundles.iter().any(|b| matches!(
            b,
            HyperBundle::Boosted(BoostParams { mtry: 14, min_n: 8, tree_depth: 11, .. })
        )));
        assert!(grids[2].bundles.iter().any(|b| matches!(
            b,
            HyperBundle::Additive(p)
                if (p.prior_scale_changepoints - 1.778).abs() < 1e-12
                    && (p.prior_scale_seasonality - 5.623).abs() < 1e-12
        )));
    }

    proptest! {
        #[test]
        fn conformal_halfwidth_is_monotone_in_alpha(
            residuals in proptest::collection::vec(-100.0f64..100.0, 1..50),
            a1 in 0.01f64..0.98,
            gap in 0.001f64..0.5,
        ) {
            let a2 = (a1 + gap).min(0.99);
            let q1 = conformal_halfwidth(&residuals, a1).unwrap();
            let q2 = conformal_halfwidth(&residuals, a2).unwrap();
            // Less miscoverage allowed (smaller alpha) can never shrink
            // the interval.
            prop_assert!(q1 >= q2);
        }

        #[test]
        fn conformal_halfwidth_bounds_every_score_at_tiny_alpha(
            residuals in proptest::collection::vec(-50.0f64..50.0, 1..30),
        ) {
            let q = conformal_halfwidth(&residuals, 0.001).unwrap();
            let max = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
            prop_assert_eq!(q, max);
        }
    }
}
