//! Command implementations behind the CLI: each `cmd_*` function takes a
//! validated [`RunConfig`], orchestrates the core stages, and leaves its
//! artifacts under the configured output directory.
//!
//! Regions are processed in parallel (rayon), but every random stream is
//! derived from the master seed and the region's position in sorted
//! region order, so results do not depend on scheduling.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{ConfigError, IngestError, MetricError, ShapError};
use crate::features::{
    build_design_matrix, compute_baseline, compute_indices, log_transform_precip, sample_ccf,
    select_lag, FeatureMatrix, IndexVector, PercentileBaseline,
};
use crate::ingest::{
    aggregate_weekly, aod_weekly_by_region, load_aod_daily, load_aod_sites, load_cell_map,
    load_centroids, load_climate_csv, load_discharges_csv, DailyClimatePanel, RegionId,
    WeeklyClimate, WeeklySeries,
};
use crate::metrics::{
    interval_score, mae, mse, relative_ratio, select_model, MethodScores, RegionEvaluation,
};
use crate::model::save_model;
use crate::pipeline::{
    grid_search, make_windows, run_protocol, HyperBundle, MethodResult, Split,
};
use crate::report::{
    render_forecast_svg, write_ccf_csv, write_design_csv, write_evaluation_csv,
    write_forecasts_csv, write_hyperparameters_json, write_importance_csv, CcfRow,
    ChosenHyperparameters, ForecastRow, ImportanceTable, PlotSeries,
};
use crate::shapley::{global_importance, shapley_sampling, subsample_rows, GlobalImportance};
use crate::synth::{generate, write_dataset, SyntheticSpec};
use crate::util::{atomic_write, derive_seed};
use crate::week::{WeekId, WeekRange};
use crate::{Error, Result};

/// Everything loaded and weekly-aggregated from the input files.
pub struct LoadedInputs {
    pub panel: DailyClimatePanel,
    pub weekly: WeeklyClimate,
    pub aod_weekly: BTreeMap<RegionId, WeeklySeries>,
    pub discharges: BTreeMap<RegionId, WeeklySeries>,
}

/// Loads and validates all six input files named by the config.
pub fn load_inputs(config: &RunConfig) -> Result<LoadedInputs> {
    let cells = load_cell_map(&config.paths.cells)?;
    let regions = cells.values().map(|c| c.region_id.clone()).collect();
    let panel = load_climate_csv(&config.paths.climate, &cells)?;
    let weekly = aggregate_weekly(&panel)?;
    let sites = load_aod_sites(&config.paths.aod_sites)?;
    let aod_records = load_aod_daily(&config.paths.aod_daily, &sites)?;
    let centroids = load_centroids(&config.paths.centroids)?;
    let aod_weekly = aod_weekly_by_region(&sites, &aod_records, &centroids, config.idw_power)?;
    let discharges = load_discharges_csv(&config.paths.discharges, Some(&regions))?;
    Ok(LoadedInputs {
        panel,
        weekly,
        aod_weekly,
        discharges,
    })
}

fn indices_for_region(
    region: &RegionId,
    inputs: &LoadedInputs,
    baseline: &PercentileBaseline,
) -> Result<Vec<(WeekId, IndexVector)>> {
    let groups = &inputs.weekly.groups[region];
    let mut indices = Vec::with_capacity(groups.len());
    for group in groups {
        indices.push((group.week, compute_indices(region, group, baseline)?));
    }
    Ok(indices)
}

/// Builds every region's design matrix over the span where climate
/// indices, the aerosol series, and the discharge series all align,
/// applying the lagged-aerosol trim and the precipitation log transform.
pub fn design_matrices(
    config: &RunConfig,
    inputs: &LoadedInputs,
) -> Result<BTreeMap<RegionId, FeatureMatrix>> {
    let baseline = compute_baseline(&inputs.panel, config.baseline, config.baseline_scope)?;
    let mut matrices = BTreeMap::new();
    for region in inputs.weekly.groups.keys() {
        let missing = |what: &'static str| {
            Error::Ingest(IngestError::MissingSeries {
                region: region.to_string(),
                what,
            })
        };
        let aod = inputs
            .aod_weekly
            .get(region)
            .ok_or_else(|| missing("aerosol series"))?;
        let hd = inputs
            .discharges
            .get(region)
            .ok_or_else(|| missing("discharge series"))?;
        let indices = indices_for_region(region, inputs, &baseline)?;
        let (first, last) = match (indices.first(), indices.last()) {
            (Some(f), Some(l)) => (f.0, l.0),
            _ => {
                return Err(IngestError::Empty {
                    context: format!("region {region} has no complete climate weeks"),
                }
                .into())
            }
        };
        let idx_range = WeekRange {
            start: first,
            end: last,
        };
        let common = idx_range
            .intersect(&aod.range())
            .and_then(|r| r.intersect(&hd.range()))
            .ok_or_else(|| {
                crate::error::FeatureError::MisalignedRanges {
                    indices: idx_range,
                    aod: aod.range(),
                    discharges: hd.range(),
                }
            })?;
        let lo = common.start.weeks_since(&idx_range.start) as usize;
        let trimmed = &indices[lo..lo + common.len()];
        let aod = aod.slice(&common).expect("intersection is contained");
        let hd = hd.slice(&common).expect("intersection is contained");
        let matrix = build_design_matrix(trimmed, &aod, &hd, config.aod_lag)?;
        matrices.insert(region.clone(), log_transform_precip(&matrix)?);
    }
    Ok(matrices)
}

/// Clips the configured training range to the weeks the design matrix
/// actually covers. The first weeks of the study period have no lagged
/// covariates, so the usable training range starts where the features
/// do; the test range must be covered in full.
pub fn effective_split(matrix: &FeatureMatrix, configured: &Split) -> Result<Split> {
    let cover = matrix.week_range();
    let train = configured.train.intersect(&cover).ok_or({
        crate::error::PipelineError::NoRowsInRange {
            range: configured.train,
        }
    })?;
    if !(cover.start <= configured.test.start && configured.test.end <= cover.end) {
        return Err(crate::error::PipelineError::NoRowsInRange {
            range: configured.test,
        }
        .into());
    }
    if train.start != configured.train.start {
        log::info!(
            "region {}: training clipped to {train} (lagged covariates unavailable earlier)",
            matrix.region_id
        );
    }
    Ok(Split::new(train, configured.test)?)
}

/// Turns a region label into a safe file stem.
fn file_slug(region: &RegionId) -> String {
    region
        .as_str()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

// ---------------------------------------------------------------------------
// generate-synthetic
// ---------------------------------------------------------------------------

/// Generates the synthetic dataset into `dir`, together with a ready
/// `run.conf` pointing at the generated files.
pub fn cmd_generate_synthetic(spec: &SyntheticSpec, dir: &std::path::Path) -> Result<Vec<PathBuf>> {
    let dataset = generate(spec)?;
    let paths = write_dataset(&dataset, dir)?;
    let conf = dir.join("run.conf");
    let body = crate::config::render_config(spec.start_year, spec.end_year);
    atomic_write(&conf, body.as_bytes()).map_err(|source| {
        crate::error::ArtifactError::Io {
            path: conf.clone(),
            source,
        }
    })?;
    Ok(vec![
        paths.climate,
        paths.cells,
        paths.aod_sites,
        paths.aod_daily,
        paths.centroids,
        paths.discharges,
        paths.truth,
        conf,
    ])
}

// ---------------------------------------------------------------------------
// ingest-check
// ---------------------------------------------------------------------------

/// Row counts and coverage spans for each input source, per region.
pub struct IngestSummary {
    pub cells: usize,
    pub aod_sites: usize,
    pub aod_records: usize,
    pub dropped_leading: usize,
    pub dropped_trailing: usize,
    /// Per region: complete climate weeks, discharge weeks, design rows.
    pub regions: BTreeMap<RegionId, RegionCoverage>,
}

pub struct RegionCoverage {
    pub climate_weeks: usize,
    pub aod_weeks: usize,
    pub discharge_weeks: usize,
    pub design_rows: usize,
    pub design_range: WeekRange,
}

impl std::fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{} cells, {} aerosol sites, {} aerosol records",
            self.cells, self.aod_sites, self.aod_records
        )?;
        writeln!(
            f,
            "partial edge weeks dropped: {} leading, {} trailing records",
            self.dropped_leading, self.dropped_trailing
        )?;
        for (region, c) in &self.regions {
            writeln!(
                f,
                "{region}: {} climate weeks, {} aerosol weeks, {} discharge weeks -> {} design rows over {}",
                c.climate_weeks, c.aod_weeks, c.discharge_weeks, c.design_rows, c.design_range
            )?;
        }
        Ok(())
    }
}

/// Loads everything, builds every design matrix, and reports coverage.
/// Succeeding at all is the check.
pub fn cmd_ingest_check(config: &RunConfig) -> Result<IngestSummary> {
    let inputs = load_inputs(config)?;
    let matrices = design_matrices(config, &inputs)?;
    let mut regions = BTreeMap::new();
    for (region, matrix) in &matrices {
        regions.insert(
            region.clone(),
            RegionCoverage {
                climate_weeks: inputs.weekly.groups[region].len(),
                aod_weeks: inputs.aod_weekly[region].values().len(),
                discharge_weeks: inputs.discharges[region].values().len(),
                design_rows: matrix.n_rows(),
                design_range: matrix.week_range(),
            },
        );
    }
    let sites = load_aod_sites(&config.paths.aod_sites)?;
    let aod_records = load_aod_daily(&config.paths.aod_daily, &sites)?.len();
    Ok(IngestSummary {
        cells: inputs.panel.cells.len(),
        aod_sites: sites.len(),
        aod_records,
        dropped_leading: inputs.weekly.dropped_leading,
        dropped_trailing: inputs.weekly.dropped_trailing,
        regions,
    })
}

// ---------------------------------------------------------------------------
// features
// ---------------------------------------------------------------------------

/// Writes every region's design matrix under `out_dir/features/`.
pub fn cmd_features(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let inputs = load_inputs(config)?;
    let matrices = design_matrices(config, &inputs)?;
    let dir = config.out_dir.join("features");
    let mut written = Vec::new();
    for (region, matrix) in &matrices {
        let path = dir.join(format!("{}.csv", file_slug(region)));
        write_design_csv(&path, matrix)?;
        written.push(path);
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// ccf
// ---------------------------------------------------------------------------

/// Cross-correlates one covariate with the discharge target at lags
/// `0..=ccf_max_lag` in every region, marks each region's best lag, and
/// writes `out_dir/ccf_<covariate>.csv`.
pub fn cmd_ccf(config: &RunConfig, covariate: &str) -> Result<Vec<CcfRow>> {
    let inputs = load_inputs(config)?;
    let matrices = design_matrices(config, &inputs)?;
    let mut rows = Vec::new();
    for (region, matrix) in &matrices {
        let col = matrix.col_index(covariate).map_err(|_| {
            ConfigError::BadValue {
                key: "covariate".to_string(),
                message: format!(
                    "unknown covariate `{covariate}` (available: {})",
                    matrix.names.join(", ")
                ),
            }
        })?;
        let x = matrix.column(col);
        let ccf = sample_ccf(&x, &matrix.target, config.ccf_max_lag)?;
        let best = select_lag(&ccf)?;
        for (lag, r) in ccf {
            rows.push(CcfRow {
                region: region.clone(),
                lag,
                r,
                selected: lag == best,
            });
        }
    }
    let path = config
        .out_dir
        .join(format!("ccf_{}.csv", covariate.replace(['/', '\\'], "_")));
    write_ccf_csv(&path, &rows)?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// tune
// ---------------------------------------------------------------------------

/// Runs only the sliding-window grid search and records each region's
/// winning bundle per learner in `out_dir/hyperparameters.json`. Uses
/// the same derived seeds as [`cmd_run`], so the choices match a full
/// run exactly.
pub fn cmd_tune(config: &RunConfig) -> Result<ChosenHyperparameters> {
    let inputs = load_inputs(config)?;
    let matrices = design_matrices(config, &inputs)?;
    let entries: Vec<(usize, &RegionId, &FeatureMatrix)> = matrices
        .iter()
        .enumerate()
        .map(|(idx, (r, m))| (idx, r, m))
        .collect();
    let tuned: Vec<(RegionId, BTreeMap<String, HyperBundle>)> = entries
        .par_iter()
        .map(|&(idx, region, matrix)| {
            let split = effective_split(matrix, &config.split)?;
            let windows = make_windows(&split.train, &config.plan)?;
            let region_seed = derive_seed(config.master_seed, idx as u64);
            let mut chosen = BTreeMap::new();
            for (ordinal, grid) in config.grids.iter().enumerate() {
                let seed = derive_seed(region_seed, ordinal as u64);
                let result = grid_search(matrix, grid, &windows, seed)?;
                chosen.insert(
                    grid.kind.label().to_string(),
                    grid.bundles[result.best_index].clone(),
                );
            }
            Ok((region.clone(), chosen))
        })
        .collect::<Result<_>>()?;
    let chosen: ChosenHyperparameters = tuned
        .into_iter()
        .map(|(r, c)| (r.to_string(), c))
        .collect();
    write_hyperparameters_json(&config.out_dir.join("hyperparameters.json"), &chosen)?;
    Ok(chosen)
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

/// What one region's full protocol run leaves behind.
struct RegionOutput {
    evaluation: RegionEvaluation,
    chosen: BTreeMap<String, HyperBundle>,
    forecasts: Vec<ForecastRow>,
    importance: GlobalImportance,
    names: Vec<String>,
    written: Vec<PathBuf>,
}

/// Scores one method's train and test series against the observations.
fn score_method(
    m: &MethodResult,
    train_actual: &[f64],
    test_actual: &[f64],
    alpha: f64,
    convention: crate::metrics::RatioConvention,
) -> std::result::Result<MethodScores, MetricError> {
    let mse_test = mse(test_actual, &m.test.point)?;
    let mae_test = mae(test_actual, &m.test.point)?;
    let is_test = interval_score(test_actual, &m.test.lower, &m.test.upper, alpha)?;
    let mse_train = mse(train_actual, &m.train.point)?;
    let mae_train = mae(train_actual, &m.train.point)?;
    let is_train = interval_score(train_actual, &m.train.lower, &m.train.upper, alpha)?;
    Ok(MethodScores {
        method: m.kind.label().to_string(),
        mse_test,
        mse_train,
        mse_rel: relative_ratio(mse_train, mse_test, convention)?,
        mae_test,
        mae_train,
        mae_rel: relative_ratio(mae_train, mae_test, convention)?,
        is_test,
        is_train,
        is_rel: relative_ratio(is_train, is_test, convention)?,
        selected: false,
    })
}

fn run_region(
    config: &RunConfig,
    region: &RegionId,
    matrix: &FeatureMatrix,
    idx: u64,
) -> Result<RegionOutput> {
    let split = effective_split(matrix, &config.split)?;
    let region_seed = derive_seed(config.master_seed, idx);
    let protocol = run_protocol(
        matrix,
        &split,
        &config.grids,
        &config.plan,
        config.alpha,
        region_seed,
    )?;

    let mut rows = protocol
        .methods
        .iter()
        .map(|m| {
            score_method(
                m,
                &protocol.train_actual,
                &protocol.test_actual,
                config.alpha,
                config.convention,
            )
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let (selected_idx, relaxed) = select_model(&rows)?;
    rows[selected_idx].selected = true;

    let mut forecasts = Vec::new();
    for m in &protocol.methods {
        for (i, week) in m.test.weeks.iter().enumerate() {
            forecasts.push(ForecastRow {
                region: region.clone(),
                week: *week,
                method: m.kind.label().to_string(),
                observed: Some(protocol.test_actual[i]),
                point: m.test.point[i],
                lower: m.test.lower[i],
                upper: m.test.upper[i],
            });
        }
    }

    let mut chosen = BTreeMap::new();
    for m in &protocol.methods {
        if let Some(bundle) = &m.chosen {
            chosen.insert(m.kind.label().to_string(), bundle.clone());
        }
    }

    let selected = &protocol.methods[selected_idx];
    let slug = file_slug(region);
    let mut written = Vec::new();

    let model_path = config.out_dir.join("models").join(format!("{slug}.json"));
    save_model(&selected.model, &model_path)?;
    written.push(model_path);

    let plot = PlotSeries {
        weeks: selected.test.weeks.clone(),
        observed: protocol.test_actual.clone(),
        predicted: selected.test.point.clone(),
        lower: selected.test.lower.clone(),
        upper: selected.test.upper.clone(),
    };
    let plots_dir = config.out_dir.join("plots");
    let plot_csv = plots_dir.join(format!("{slug}.csv"));
    crate::report::write_plot_csv(&plot_csv, &plot)?;
    written.push(plot_csv);
    let svg = render_forecast_svg(
        &format!("{region} — {} forecast", selected.kind.label()),
        &plot,
    )?;
    let svg_path = plots_dir.join(format!("{slug}.svg"));
    atomic_write(&svg_path, svg.as_bytes()).map_err(|source| {
        crate::error::ArtifactError::Io {
            path: svg_path.clone(),
            source,
        }
    })?;
    written.push(svg_path);

    let importance = attribute_region(config, matrix, &split, selected, region_seed)?;

    Ok(RegionOutput {
        evaluation: RegionEvaluation {
            region_id: region.clone(),
            rows,
            relaxed,
        },
        chosen,
        forecasts,
        importance,
        names: matrix.names.clone(),
        written,
    })
}

/// Shapley attribution of every test-week prediction of the selected
/// model, against a seeded subsample of the training rows.
fn attribute_region(
    config: &RunConfig,
    matrix: &FeatureMatrix,
    split: &Split,
    selected: &MethodResult,
    region_seed: u64,
) -> Result<GlobalImportance> {
    let train_rows = matrix.rows_in(&split.train);
    let test_rows: Vec<usize> = matrix.rows_in(&split.test).collect();
    let picks = subsample_rows(
        train_rows.len(),
        config.shapley_background,
        derive_seed(region_seed, 1000),
    );
    let background: Vec<Vec<f64>> = picks
        .iter()
        .map(|&k| matrix.row(train_rows.start + k).to_vec())
        .collect();
    let predict = selected.model.row_predictor(&matrix.names)?;
    let predict_ref: &(dyn Fn(&[f64]) -> f64 + Sync) = predict.as_ref();
    let attributions = test_rows
        .par_iter()
        .enumerate()
        .map(|(k, &i)| {
            shapley_sampling(
                predict_ref,
                matrix.row(i),
                &background,
                config.shapley_samples,
                derive_seed(region_seed, 2000 + k as u64),
            )
        })
        .collect::<std::result::Result<Vec<_>, ShapError>>()?;
    Ok(global_importance(&attributions)?)
}

/// Everything a full run wrote, for display and further checks.
pub struct RunArtifacts {
    pub evaluations: Vec<RegionEvaluation>,
    pub importance: ImportanceTable,
    pub written: Vec<PathBuf>,
}

/// The full per-region protocol: tune, refit, forecast, conformalize,
/// score, select, attribute — then write every artifact.
pub fn cmd_run(config: &RunConfig) -> Result<RunArtifacts> {
    let inputs = load_inputs(config)?;
    let matrices = design_matrices(config, &inputs)?;
    let entries: Vec<(usize, &RegionId, &FeatureMatrix)> = matrices
        .iter()
        .enumerate()
        .map(|(idx, (r, m))| (idx, r, m))
        .collect();
    let outputs: Vec<RegionOutput> = entries
        .par_iter()
        .map(|&(idx, region, matrix)| run_region(config, region, matrix, idx as u64))
        .collect::<Result<_>>()?;

    let names = outputs
        .first()
        .map(|o| o.names.clone())
        .unwrap_or_default();
    let mut evaluations = Vec::with_capacity(outputs.len());
    let mut forecasts = Vec::new();
    let mut chosen = ChosenHyperparameters::new();
    let mut per_region_importance = Vec::with_capacity(outputs.len());
    let mut written = Vec::new();
    for output in outputs {
        debug_assert_eq!(output.names, names, "column layout differs across regions");
        let region = output.evaluation.region_id.to_string();
        per_region_importance.push((region.clone(), output.importance));
        chosen.insert(region, output.chosen);
        forecasts.extend(output.forecasts);
        evaluations.push(output.evaluation);
        written.extend(output.written);
    }

    let forecasts_path = config.out_dir.join("forecasts.csv");
    write_forecasts_csv(&forecasts_path, &forecasts)?;
    let evaluation_path = config.out_dir.join("evaluation.csv");
    write_evaluation_csv(&evaluation_path, &evaluations)?;
    let importance = ImportanceTable::from_importances(
        &names,
        &per_region_importance,
        config.importance_threshold,
    )?;
    let importance_path = config.out_dir.join("importance.csv");
    write_importance_csv(&importance_path, &importance)?;
    let hyper_path = config.out_dir.join("hyperparameters.json");
    write_hyperparameters_json(&hyper_path, &chosen)?;
    written.extend([forecasts_path, evaluation_path, importance_path, hyper_path]);

    Ok(RunArtifacts {
        evaluations,
        importance,
        written,
    })
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// Renders the evaluation and importance artifacts of a finished run as
/// a plain-text report.
pub fn cmd_report(config: &RunConfig) -> Result<String> {
    let evaluations =
        crate::report::read_evaluation_csv(&config.out_dir.join("evaluation.csv"))?;
    let importance = crate::report::read_importance_csv(&config.out_dir.join("importance.csv"))?;

    let mut out = String::new();
    for eval in &evaluations {
        out.push_str(&format!(
            "== {}{}\n",
            eval.region_id,
            if eval.relaxed {
                "  (selection bar relaxed)"
            } else {
                ""
            }
        ));
        out.push_str(
            "   method     MSE (rel)          MAE (rel)          IS (rel)\n",
        );
        for row in &eval.rows {
            out.push_str(&format!(
                " {} {:<9} {:>8.2} ({:>6.2})  {:>8.2} ({:>6.2})  {:>8.2} ({:>6.2})\n",
                if row.selected { '*' } else { ' ' },
                row.method,
                row.mse_test,
                row.mse_rel,
                row.mae_test,
                row.mae_rel,
                row.is_test,
                row.is_rel,
            ));
        }
        out.push('\n');
    }

    out.push_str("Covariate importance of the selected models (%):\n");
    let name_width = importance
        .covariates
        .iter()
        .map(String::len)
        .max()
        .unwrap_or(9)
        .max("covariate".len());
    let widths: Vec<usize> = importance.regions.iter().map(|r| r.len().max(5)).collect();
    out.push_str(&format!("{:<name_width$}", "covariate"));
    for (region, w) in importance.regions.iter().zip(&widths) {
        out.push_str(&format!("  {region:>w$}"));
    }
    out.push('\n');
    for (name, row) in importance.covariates.iter().zip(&importance.cells) {
        out.push_str(&format!("{name:<name_width$}"));
        for (cell, w) in row.iter().zip(&widths) {
            match cell {
                Some(v) => out.push_str(&format!("  {v:>w$.1}")),
                None => out.push_str(&format!("  {:>w$}", "")),
            }
        }
        out.push('\n');
    }
    Ok(out)
}
