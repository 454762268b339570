//! Run artifacts: the CSV and JSON files a run leaves behind, plus readers
//! that load every one of them back without loss.
//!
//! All writers go through [`atomic_write`] (temp file + rename) so a crashed
//! run never leaves a half-written artifact. Floats are written with the
//! shortest representation that round-trips, except for the importance table,
//! whose cells are deliberately rounded to one decimal for display.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::ArtifactError;
use crate::features::FeatureMatrix;
use crate::ingest::RegionId;
use crate::metrics::{MethodScores, RegionEvaluation};
use crate::pipeline::HyperBundle;
use crate::shapley::GlobalImportance;
use crate::util::atomic_write;
use crate::week::WeekId;

type Result<T> = std::result::Result<T, ArtifactError>;

// ---------------------------------------------------------------------------
// Shared CSV plumbing
// ---------------------------------------------------------------------------

/// Quotes a field if it contains a comma, quote, or newline (RFC 4180).
/// Region labels come from user data, so they cannot be trusted to be tame.
fn escape_csv(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, text.as_bytes()).map_err(|source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// A parsed CSV file: header plus records, each tagged with its line number.
struct CsvFile {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl CsvFile {
    fn open(path: &Path, expected_header: &[&str]) -> Result<Self> {
        let read_err = |message: String| ArtifactError::Read {
            path: path.to_path_buf(),
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .from_path(path)
            .map_err(|e| read_err(e.to_string()))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| read_err(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if !expected_header.is_empty() && header != expected_header {
            return Err(read_err(format!(
                "unexpected header `{}` (expected `{}`)",
                header.join(","),
                expected_header.join(",")
            )));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| read_err(e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != header.len() {
                return Err(read_err(format!(
                    "line {line}: expected {} fields, found {}",
                    header.len(),
                    record.len()
                )));
            }
            rows.push((line, record));
        }
        Ok(CsvFile {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn error(&self, line: u64, message: impl Into<String>) -> ArtifactError {
        ArtifactError::Read {
            path: self.path.clone(),
            message: format!("line {line}: {}", message.into()),
        }
    }

    fn f64(&self, line: u64, record: &csv::StringRecord, idx: usize) -> Result<f64> {
        let raw = &record[idx];
        raw.parse()
            .map_err(|_| self.error(line, format!("`{raw}` is not a number")))
    }

    fn opt_f64(&self, line: u64, record: &csv::StringRecord, idx: usize) -> Result<Option<f64>> {
        if record[idx].is_empty() {
            Ok(None)
        } else {
            self.f64(line, record, idx).map(Some)
        }
    }

    fn week(&self, line: u64, record: &csv::StringRecord, idx: usize) -> Result<WeekId> {
        let raw = &record[idx];
        WeekId::from_str(raw).map_err(|e| self.error(line, format!("`{raw}`: {e}")))
    }

    fn bool(&self, line: u64, record: &csv::StringRecord, idx: usize) -> Result<bool> {
        match &record[idx] {
            "true" => Ok(true),
            "false" => Ok(false),
            raw => Err(self.error(line, format!("`{raw}` is not true/false"))),
        }
    }
}

fn opt_cell(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// Forecasts
// ---------------------------------------------------------------------------

/// One forecasted week for one method in one region. `observed` is blank
/// when the outcome is not yet known.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRow {
    pub region: RegionId,
    pub week: WeekId,
    pub method: String,
    pub observed: Option<f64>,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

const FORECAST_HEADER: [&str; 7] = [
    "region", "week", "method", "observed", "point", "lower", "upper",
];

pub fn write_forecasts_csv(path: &Path, rows: &[ForecastRow]) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{}", FORECAST_HEADER.join(","));
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            escape_csv(row.region.as_str()),
            row.week,
            escape_csv(&row.method),
            opt_cell(row.observed),
            row.point,
            row.lower,
            row.upper
        );
    }
    write_text(path, &out)
}

pub fn read_forecasts_csv(path: &Path) -> Result<Vec<ForecastRow>> {
    let file = CsvFile::open(path, &FORECAST_HEADER)?;
    let mut rows = Vec::with_capacity(file.rows.len());
    for (line, record) in &file.rows {
        rows.push(ForecastRow {
            region: RegionId::new(&record[0]),
            week: file.week(*line, record, 1)?,
            method: record[2].to_string(),
            observed: file.opt_f64(*line, record, 3)?,
            point: file.f64(*line, record, 4)?,
            lower: file.f64(*line, record, 5)?,
            upper: file.f64(*line, record, 6)?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Evaluation table
// ---------------------------------------------------------------------------

const EVALUATION_HEADER: [&str; 13] = [
    "region",
    "method",
    "mse_test",
    "mse_train",
    "mse_rel",
    "mae_test",
    "mae_train",
    "mae_rel",
    "is_test",
    "is_train",
    "is_rel",
    "selected",
    "relaxed",
];

/// One row per (region, method) with every score at full precision; the
/// selected method carries `selected=true`, and `relaxed` records whether
/// that region's selection had to ignore the overfitting bar.
pub fn write_evaluation_csv(path: &Path, evaluations: &[RegionEvaluation]) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{}", EVALUATION_HEADER.join(","));
    for eval in evaluations {
        for row in &eval.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                escape_csv(eval.region_id.as_str()),
                escape_csv(&row.method),
                row.mse_test,
                row.mse_train,
                row.mse_rel,
                row.mae_test,
                row.mae_train,
                row.mae_rel,
                row.is_test,
                row.is_train,
                row.is_rel,
                row.selected,
                eval.relaxed
            );
        }
    }
    write_text(path, &out)
}

/// Rebuilds the per-region evaluations, grouping consecutive rows that share
/// a region label.
pub fn read_evaluation_csv(path: &Path) -> Result<Vec<RegionEvaluation>> {
    let file = CsvFile::open(path, &EVALUATION_HEADER)?;
    let mut evaluations: Vec<RegionEvaluation> = Vec::new();
    for (line, record) in &file.rows {
        let region = RegionId::new(&record[0]);
        let scores = MethodScores {
            method: record[1].to_string(),
            mse_test: file.f64(*line, record, 2)?,
            mse_train: file.f64(*line, record, 3)?,
            mse_rel: file.f64(*line, record, 4)?,
            mae_test: file.f64(*line, record, 5)?,
            mae_train: file.f64(*line, record, 6)?,
            mae_rel: file.f64(*line, record, 7)?,
            is_test: file.f64(*line, record, 8)?,
            is_train: file.f64(*line, record, 9)?,
            is_rel: file.f64(*line, record, 10)?,
            selected: file.bool(*line, record, 11)?,
        };
        let relaxed = file.bool(*line, record, 12)?;
        match evaluations.last_mut() {
            Some(last) if last.region_id == region => {
                if last.relaxed != relaxed {
                    return Err(file.error(*line, "relaxed flag differs within one region"));
                }
                last.rows.push(scores);
            }
            _ => evaluations.push(RegionEvaluation {
                region_id: region,
                rows: vec![scores],
                relaxed,
            }),
        }
    }
    Ok(evaluations)
}

// ---------------------------------------------------------------------------
// Importance table
// ---------------------------------------------------------------------------

/// Covariate-importance shares arranged as a display table: one row per
/// covariate, one column per region, cells in percent rounded to one
/// decimal. Cells below the rendering threshold are blank, and covariates
/// blank in every region are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceTable {
    pub regions: Vec<String>,
    pub covariates: Vec<String>,
    /// `cells[i][j]` is covariate `i` in region `j`.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl ImportanceTable {
    /// Assembles the table from per-region importances. `features` is the
    /// row order; every importance must have one share per feature.
    pub fn from_importances(
        features: &[String],
        per_region: &[(String, GlobalImportance)],
        threshold: f64,
    ) -> Result<Self> {
        let rendered: Vec<Vec<Option<f64>>> = per_region
            .iter()
            .map(|(region, importance)| {
                if importance.percent.len() != features.len() {
                    return Err(ArtifactError::Encode {
                        path: PathBuf::new(),
                        message: format!(
                            "region {region}: {} importance shares for {} covariates",
                            importance.percent.len(),
                            features.len()
                        ),
                    });
                }
                Ok(importance
                    .rendered(threshold)
                    .into_iter()
                    .map(|cell| cell.map(|p| (p * 10.0).round() / 10.0))
                    .collect())
            })
            .collect::<Result<_>>()?;
        let mut covariates = Vec::new();
        let mut cells = Vec::new();
        for (i, name) in features.iter().enumerate() {
            let row: Vec<Option<f64>> = rendered.iter().map(|cols| cols[i]).collect();
            if row.iter().any(Option::is_some) {
                covariates.push(name.clone());
                cells.push(row);
            }
        }
        Ok(ImportanceTable {
            regions: per_region.iter().map(|(r, _)| r.clone()).collect(),
            covariates,
            cells,
        })
    }
}

pub fn write_importance_csv(path: &Path, table: &ImportanceTable) -> Result<()> {
    let mut out = String::from("covariate");
    for region in &table.regions {
        let _ = write!(out, ",{}", escape_csv(region));
    }
    out.push('\n');
    for (name, row) in table.covariates.iter().zip(&table.cells) {
        let _ = write!(out, "{}", escape_csv(name));
        for cell in row {
            match cell {
                Some(v) => {
                    let _ = write!(out, ",{v:.1}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_importance_csv(path: &Path) -> Result<ImportanceTable> {
    let file = CsvFile::open(path, &[])?;
    if file.header.first().map(String::as_str) != Some("covariate") {
        return Err(file.error(1, "first header field must be `covariate`"));
    }
    let regions: Vec<String> = file.header[1..].to_vec();
    let mut covariates = Vec::new();
    let mut cells = Vec::new();
    for (line, record) in &file.rows {
        covariates.push(record[0].to_string());
        let mut row = Vec::with_capacity(regions.len());
        for idx in 1..record.len() {
            row.push(file.opt_f64(*line, record, idx)?);
        }
        cells.push(row);
    }
    Ok(ImportanceTable {
        regions,
        covariates,
        cells,
    })
}

// ---------------------------------------------------------------------------
// Plot data
// ---------------------------------------------------------------------------

/// The selected method's test-period trajectory for one region, in the
/// shape a plotting tool wants: observed and predicted side by side with
/// the interval bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub weeks: Vec<WeekId>,
    pub observed: Vec<f64>,
    pub predicted: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl PlotSeries {
    fn check(&self) -> std::result::Result<(), String> {
        let n = self.weeks.len();
        if self.observed.len() != n
            || self.predicted.len() != n
            || self.lower.len() != n
            || self.upper.len() != n
        {
            return Err(format!(
                "series lengths differ: {} weeks, {} observed, {} predicted, {} lower, {} upper",
                n,
                self.observed.len(),
                self.predicted.len(),
                self.lower.len(),
                self.upper.len()
            ));
        }
        Ok(())
    }
}

const PLOT_HEADER: [&str; 5] = ["week", "observed", "predicted", "lower", "upper"];

pub fn write_plot_csv(path: &Path, series: &PlotSeries) -> Result<()> {
    series.check().map_err(|message| ArtifactError::Encode {
        path: path.to_path_buf(),
        message,
    })?;
    let mut out = String::new();
    let _ = writeln!(out, "{}", PLOT_HEADER.join(","));
    for (i, week) in series.weeks.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            week, series.observed[i], series.predicted[i], series.lower[i], series.upper[i]
        );
    }
    write_text(path, &out)
}

pub fn read_plot_csv(path: &Path) -> Result<PlotSeries> {
    let file = CsvFile::open(path, &PLOT_HEADER)?;
    let mut series = PlotSeries {
        weeks: Vec::new(),
        observed: Vec::new(),
        predicted: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
    };
    for (line, record) in &file.rows {
        series.weeks.push(file.week(*line, record, 0)?);
        series.observed.push(file.f64(*line, record, 1)?);
        series.predicted.push(file.f64(*line, record, 2)?);
        series.lower.push(file.f64(*line, record, 3)?);
        series.upper.push(file.f64(*line, record, 4)?);
    }
    Ok(series)
}

// ---------------------------------------------------------------------------
// Chosen hyperparameters
// ---------------------------------------------------------------------------

/// Winning hyperparameters per region and method label.
pub type ChosenHyperparameters = BTreeMap<String, BTreeMap<String, HyperBundle>>;

pub fn write_hyperparameters_json(path: &Path, chosen: &ChosenHyperparameters) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(chosen).map_err(|e| ArtifactError::Encode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_hyperparameters_json(path: &Path) -> Result<ChosenHyperparameters> {
    let text = std::fs::read_to_string(path).map_err(|source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ArtifactError::Read {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Cross-correlation table
// ---------------------------------------------------------------------------

/// One lag of the sample cross-correlation between a covariate and the
/// target in one region; `selected` marks the lag with the largest |r|.
#[derive(Debug, Clone, PartialEq)]
pub struct CcfRow {
    pub region: RegionId,
    pub lag: usize,
    pub r: f64,
    pub selected: bool,
}

const CCF_HEADER: [&str; 4] = ["region", "lag", "r", "selected"];

pub fn write_ccf_csv(path: &Path, rows: &[CcfRow]) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{}", CCF_HEADER.join(","));
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            escape_csv(row.region.as_str()),
            row.lag,
            row.r,
            row.selected
        );
    }
    write_text(path, &out)
}

pub fn read_ccf_csv(path: &Path) -> Result<Vec<CcfRow>> {
    let file = CsvFile::open(path, &CCF_HEADER)?;
    let mut rows = Vec::with_capacity(file.rows.len());
    for (line, record) in &file.rows {
        let raw_lag = &record[1];
        let lag = raw_lag
            .parse()
            .map_err(|_| file.error(*line, format!("`{raw_lag}` is not a lag")))?;
        rows.push(CcfRow {
            region: RegionId::new(&record[0]),
            lag,
            r: file.f64(*line, record, 2)?,
            selected: file.bool(*line, record, 3)?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Design-matrix dump
// ---------------------------------------------------------------------------

/// Writes one region's design matrix as `week,<covariates...>,target`.
pub fn write_design_csv(path: &Path, matrix: &FeatureMatrix) -> Result<()> {
    let mut out = String::from("week");
    for name in &matrix.names {
        let _ = write!(out, ",{}", escape_csv(name));
    }
    out.push_str(",target\n");
    for (i, week) in matrix.weeks.iter().enumerate() {
        let _ = write!(out, "{week}");
        for value in matrix.row(i) {
            let _ = write!(out, ",{value}");
        }
        let _ = writeln!(out, ",{}", matrix.target[i]);
    }
    write_text(path, &out)
}

/// Reloads a design-matrix dump. The region is not stored in the file —
/// dumps are one file per region — so the caller supplies it.
pub fn read_design_csv(path: &Path, region: RegionId) -> Result<FeatureMatrix> {
    let file = CsvFile::open(path, &[])?;
    if file.header.first().map(String::as_str) != Some("week")
        || file.header.last().map(String::as_str) != Some("target")
    {
        return Err(file.error(1, "header must run `week,<covariates...>,target`"));
    }
    let names: Vec<String> = file.header[1..file.header.len() - 1].to_vec();
    let mut weeks = Vec::with_capacity(file.rows.len());
    let mut data = Vec::with_capacity(file.rows.len() * names.len());
    let mut target = Vec::with_capacity(file.rows.len());
    for (line, record) in &file.rows {
        let week = file.week(*line, record, 0)?;
        if let Some(prev) = weeks.last() {
            if week <= *prev {
                return Err(file.error(*line, format!("week {week} out of order")));
            }
        }
        weeks.push(week);
        for idx in 1..=names.len() {
            data.push(file.f64(*line, record, idx)?);
        }
        target.push(file.f64(*line, record, names.len() + 1)?);
    }
    Ok(FeatureMatrix::new(region, names, weeks, data, target))
}

// ---------------------------------------------------------------------------
// SVG chart
// ---------------------------------------------------------------------------

/// Renders a static line chart of observed vs predicted values with the
/// prediction-interval band, suitable for dropping next to the plot CSV.
pub fn render_forecast_svg(title: &str, series: &PlotSeries) -> Result<String> {
    let encode_err = |message: String| ArtifactError::Encode {
        path: PathBuf::from("<svg>"),
        message,
    };
    series.check().map_err(encode_err)?;
    let n = series.weeks.len();
    if n < 2 {
        return Err(encode_err(format!("need at least 2 points, got {n}")));
    }
    let everything = series
        .observed
        .iter()
        .chain(&series.predicted)
        .chain(&series.lower)
        .chain(&series.upper);
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for &v in everything {
        if !v.is_finite() {
            return Err(encode_err("series contain a non-finite value".into()));
        }
        y_min = y_min.min(v);
        y_max = y_max.max(v);
    }
    let pad = 0.05 * (y_max - y_min).max(1e-12);
    let (y_min, y_max) = (y_min - pad, y_max + pad);

    const W: f64 = 800.0;
    const H: f64 = 420.0;
    const MARGIN: f64 = 55.0;
    let x = |i: usize| MARGIN + (W - 2.0 * MARGIN) * i as f64 / (n - 1) as f64;
    let y = |v: f64| H - MARGIN - (H - 2.0 * MARGIN) * (v - y_min) / (y_max - y_min);
    let path_of = |values: &[f64]| {
        let mut p = String::new();
        for (i, &v) in values.iter().enumerate() {
            let _ = write!(p, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, x(i), y(v));
        }
        p.trim_end().to_string()
    };

    let mut band = String::new();
    for (i, &v) in series.upper.iter().enumerate() {
        let _ = write!(band, "{:.2},{:.2} ", x(i), y(v));
    }
    for (i, &v) in series.lower.iter().enumerate().rev() {
        let _ = write!(band, "{:.2},{:.2} ", x(i), y(v));
    }

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        W / 2.0,
        title
    );
    let _ = writeln!(
        svg,
        r##"<polygon points="{}" fill="#b3cde3" fill-opacity="0.6" stroke="none"/>"##,
        band.trim_end()
    );
    let _ = writeln!(
        svg,
        r##"<path d="{}" fill="none" stroke="#636363" stroke-width="1.5"/>"##,
        path_of(&series.observed)
    );
    let _ = writeln!(
        svg,
        r##"<path d="{}" fill="none" stroke="#1f78b4" stroke-width="1.5" stroke-dasharray="5 3"/>"##,
        path_of(&series.predicted)
    );
    // Axes with end labels: week ids on x, data range on y.
    let _ = writeln!(
        svg,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<text x="{m}" y="{ly:.1}" text-anchor="start">{first}</text><text x="{r}" y="{ly:.1}" text-anchor="end">{last}</text>"#,
        m = MARGIN,
        r = W - MARGIN,
        ly = H - MARGIN + 18.0,
        first = series.weeks[0],
        last = series.weeks[n - 1]
    );
    let _ = writeln!(
        svg,
        r#"<text x="{lx:.1}" y="{b}" text-anchor="end">{lo:.1}</text><text x="{lx:.1}" y="{t}" text-anchor="end">{hi:.1}</text>"#,
        lx = MARGIN - 6.0,
        b = H - MARGIN,
        t = MARGIN + 4.0,
        lo = y_min,
        hi = y_max
    );
    let _ = writeln!(
        svg,
        r##"<text x="{lx}" y="40" fill="#636363">observed</text><text x="{lx}" y="56" fill="#1f78b4">predicted</text>"##,
        lx = MARGIN + 4.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}
