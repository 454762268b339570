//! Weekly climate-extreme indices and design-matrix assembly.
//!
//! From daily gridded climate this module derives, per region-week, the
//! 22 indices summarizing maxima/means/minima and threshold-exceedance
//! day counts of temperature, temperature amplitude, and precipitation.
//! It also provides the percentile baselines behind the count indices,
//! the `ln(1+x)` transform for precipitation amounts, a sample
//! cross-correlation scan for lag selection, and the final design matrix
//! combining indices with same-week aerosol, lag-10 aerosol, and the two
//! autoregressive discharge lags.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::FeatureError;
use crate::ingest::{CellId, DailyClimatePanel, RegionId, WeekGroup, WeeklySeries};
use crate::week::{WeekId, WeekRange};

type Result<T> = std::result::Result<T, FeatureError>;

/// Column names of the 22 indices, in fixed report order.
pub const INDEX_NAMES: [&str; 22] = [
    "Tmax_max",
    "Tmax_mean",
    "Tmax_min",
    "n_Tmax_Q3",
    "Tmin_min",
    "Tmin_mean",
    "Tmin_max",
    "n_Tmin_Q1",
    "amplitude_max_max",
    "amplitude_max_mean",
    "amplitude_max_min",
    "amplitude_min_max",
    "amplitude_min_mean",
    "amplitude_min_min",
    "n_amplitude_Q3",
    "n_amplitude_P90",
    "precip_max_max",
    "precip_max_mean",
    "precip_max_min",
    "precip_mean_mean",
    "n_precip_max_Q3",
    "n_precip_max_P90",
];

/// Feature columns appended after the indices in every design matrix.
pub const EXTRA_FEATURE_NAMES: [&str; 5] =
    ["aerosol", "aerosol_10", "egreso_1", "egreso_2", "date"];

/// The precipitation-amount columns (mm units) that receive the
/// `ln(1+x)` transform. Day-count indices stay on their natural scale.
pub const PRECIP_AMOUNT_COLUMNS: [&str; 4] = [
    "precip_max_max",
    "precip_max_mean",
    "precip_max_min",
    "precip_mean_mean",
];

/// Minimum daily records per cell required to estimate baselines.
pub const MIN_BASELINE_DAYS: usize = 90;

/// Empirical quantile with linear interpolation between order
/// statistics at rank h = (n−1)p + 1 (1-based).
///
/// For values 1..=100 this gives 75.25 at p = 0.75 and 90.1 at p = 0.90.
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(FeatureError::EmptySample);
    }
    if !p.is_finite() || !(0.0..=1.0).contains(&p) {
        return Err(FeatureError::BadProbability(p));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let h = (n as f64 - 1.0) * p + 1.0;
    let lo = h.floor() as usize; // 1-based rank in 1..=n
    let frac = h - h.floor();
    if lo >= n {
        Ok(v[n - 1])
    } else {
        Ok(v[lo - 1] + frac * (v[lo] - v[lo - 1]))
    }
}

/// Whether baseline percentiles pool daily values across a region's
/// cells or use each cell's own history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineScope {
    PerCell,
    Pooled,
}

/// Percentile thresholds for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellThresholds {
    pub tmax_q75: f64,
    pub tmin_q25: f64,
    pub amplitude_q75: f64,
    pub amplitude_q25: f64,
    pub precip_max_q75: f64,
    pub precip_max_q90: f64,
}

/// Per-cell percentile baselines over a fixed reference period, used by
/// the threshold-exceedance count indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileBaseline {
    pub period: WeekRange,
    pub per_cell: BTreeMap<CellId, CellThresholds>,
}

fn thresholds_from(
    tmax: &[f64],
    tmin: &[f64],
    amplitude: &[f64],
    precip: &[f64],
) -> Result<CellThresholds> {
    Ok(CellThresholds {
        tmax_q75: quantile(tmax, 0.75)?,
        tmin_q25: quantile(tmin, 0.25)?,
        amplitude_q75: quantile(amplitude, 0.75)?,
        amplitude_q25: quantile(amplitude, 0.25)?,
        precip_max_q75: quantile(precip, 0.75)?,
        precip_max_q90: quantile(precip, 0.90)?,
    })
}

/// Computes percentile baselines over `period` (inclusive week range).
/// Every cell must contribute at least [`MIN_BASELINE_DAYS`] daily
/// records inside the period.
pub fn compute_baseline(
    panel: &DailyClimatePanel,
    period: WeekRange,
    scope: BaselineScope,
) -> Result<PercentileBaseline> {
    let lo = period.start.monday();
    let hi = period.end.sunday();
    // Gather each cell's in-period daily values.
    let mut per_cell_values: BTreeMap<CellId, (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> =
        BTreeMap::new();
    let regions: Vec<RegionId> = panel.regions().cloned().collect();
    for region in &regions {
        for rec in panel.region_records(region) {
            if rec.date < lo || rec.date > hi {
                continue;
            }
            let entry = per_cell_values.entry(rec.cell_id.clone()).or_default();
            entry.0.push(rec.tmax);
            entry.1.push(rec.tmin);
            entry.2.push(rec.tmax - rec.tmin);
            entry.3.push(rec.precip);
        }
    }
    for (cell, vals) in &per_cell_values {
        if vals.0.len() < MIN_BASELINE_DAYS {
            return Err(FeatureError::InsufficientBaseline {
                cell: cell.to_string(),
                got: vals.0.len(),
                need: MIN_BASELINE_DAYS,
            });
        }
    }
    for cell in panel.cells.keys() {
        if !per_cell_values.contains_key(cell) {
            return Err(FeatureError::InsufficientBaseline {
                cell: cell.to_string(),
                got: 0,
                need: MIN_BASELINE_DAYS,
            });
        }
    }

    let mut per_cell = BTreeMap::new();
    match scope {
        BaselineScope::PerCell => {
            for (cell, (tmax, tmin, amp, precip)) in &per_cell_values {
                per_cell.insert(cell.clone(), thresholds_from(tmax, tmin, amp, precip)?);
            }
        }
        BaselineScope::Pooled => {
            // Pool values across each region's cells; every cell of the
            // region shares the pooled thresholds.
            for region in &regions {
                let mut tmax = Vec::new();
                let mut tmin = Vec::new();
                let mut amp = Vec::new();
                let mut precip = Vec::new();
                let mut cells = Vec::new();
                for (cell, gc) in &panel.cells {
                    if &gc.region_id != region {
                        continue;
                    }
                    cells.push(cell.clone());
                    let vals = &per_cell_values[cell];
                    tmax.extend_from_slice(&vals.0);
                    tmin.extend_from_slice(&vals.1);
                    amp.extend_from_slice(&vals.2);
                    precip.extend_from_slice(&vals.3);
                }
                let thresholds = thresholds_from(&tmax, &tmin, &amp, &precip)?;
                for cell in cells {
                    per_cell.insert(cell, thresholds.clone());
                }
            }
        }
    }
    Ok(PercentileBaseline { period, per_cell })
}

/// The 22 weekly indices for one region-week, named per the report
/// layout. Units follow each definition: °C for temperatures and
/// amplitudes, mm for precipitation amounts, day counts in [0, 7] for
/// the `n_*` entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexVector {
    pub tmax_max: f64,
    pub tmax_mean: f64,
    pub tmax_min: f64,
    pub n_tmax_q3: f64,
    pub tmin_min: f64,
    pub tmin_mean: f64,
    pub tmin_max: f64,
    pub n_tmin_q1: f64,
    pub amplitude_max_max: f64,
    pub amplitude_max_mean: f64,
    pub amplitude_max_min: f64,
    pub amplitude_min_max: f64,
    pub amplitude_min_mean: f64,
    pub amplitude_min_min: f64,
    pub n_amplitude_q3: f64,
    pub n_amplitude_p90: f64,
    pub precip_max_max: f64,
    pub precip_max_mean: f64,
    pub precip_max_min: f64,
    pub precip_mean_mean: f64,
    pub n_precip_max_q3: f64,
    pub n_precip_max_p90: f64,
}

impl IndexVector {
    /// Values in [`INDEX_NAMES`] order.
    pub fn to_array(&self) -> [f64; 22] {
        [
            self.tmax_max,
            self.tmax_mean,
            self.tmax_min,
            self.n_tmax_q3,
            self.tmin_min,
            self.tmin_mean,
            self.tmin_max,
            self.n_tmin_q1,
            self.amplitude_max_max,
            self.amplitude_max_mean,
            self.amplitude_max_min,
            self.amplitude_min_max,
            self.amplitude_min_mean,
            self.amplitude_min_min,
            self.n_amplitude_q3,
            self.n_amplitude_p90,
            self.precip_max_max,
            self.precip_max_mean,
            self.precip_max_min,
            self.precip_mean_mean,
            self.n_precip_max_q3,
            self.n_precip_max_p90,
        ]
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Computes the 22 indices for one region-week.
///
/// Per cell, the within-week statistic is taken over the seven daily
/// values (the statistic named by each index: max, mean, or min of
/// tmax/tmin/amplitude/precipitation, or a threshold-exceedance day
/// count); the across-cell aggregate then follows the index name's
/// "across the region" qualifier. Count indices are per-cell counts
/// averaged across cells.
pub fn compute_indices(
    region: &RegionId,
    group: &WeekGroup,
    baseline: &PercentileBaseline,
) -> Result<IndexVector> {
    if group.by_cell.is_empty() {
        return Err(FeatureError::EmptyWeek { week: group.week });
    }
    // Per-cell within-week statistics, in cell-id order.
    let n_cells = group.by_cell.len();
    let mut tmax_max_c = Vec::with_capacity(n_cells);
    let mut tmax_mean_c = Vec::with_capacity(n_cells);
    let mut tmax_min_c = Vec::with_capacity(n_cells);
    let mut tmin_max_c = Vec::with_capacity(n_cells);
    let mut tmin_mean_c = Vec::with_capacity(n_cells);
    let mut tmin_min_c = Vec::with_capacity(n_cells);
    let mut amp_max_c = Vec::with_capacity(n_cells);
    let mut amp_min_c = Vec::with_capacity(n_cells);
    let mut precip_max_c = Vec::with_capacity(n_cells);
    let mut precip_mean_c = Vec::with_capacity(n_cells);
    let mut count_tmax = Vec::with_capacity(n_cells);
    let mut count_tmin = Vec::with_capacity(n_cells);
    let mut count_amp_hi = Vec::with_capacity(n_cells);
    let mut count_amp_lo = Vec::with_capacity(n_cells);
    let mut count_p75 = Vec::with_capacity(n_cells);
    let mut count_p90 = Vec::with_capacity(n_cells);

    for (cell, records) in &group.by_cell {
        if records.len() != 7 {
            return Err(FeatureError::WrongDayCount {
                region: region.to_string(),
                week: group.week,
                cell: cell.to_string(),
                got: records.len(),
            });
        }
        let thresholds = baseline
            .per_cell
            .get(cell)
            .ok_or_else(|| FeatureError::MissingBaseline {
                cell: cell.to_string(),
            })?;

        let tmax: Vec<f64> = records.iter().map(|r| r.tmax).collect();
        let tmin: Vec<f64> = records.iter().map(|r| r.tmin).collect();
        let amp: Vec<f64> = records.iter().map(|r| r.tmax - r.tmin).collect();
        let precip: Vec<f64> = records.iter().map(|r| r.precip).collect();

        tmax_max_c.push(max_of(&tmax));
        tmax_mean_c.push(mean(&tmax));
        tmax_min_c.push(min_of(&tmax));
        tmin_max_c.push(max_of(&tmin));
        tmin_mean_c.push(mean(&tmin));
        tmin_min_c.push(min_of(&tmin));
        amp_max_c.push(max_of(&amp));
        amp_min_c.push(min_of(&amp));
        precip_max_c.push(max_of(&precip));
        precip_mean_c.push(mean(&precip));

        count_tmax.push(tmax.iter().filter(|v| **v > thresholds.tmax_q75).count() as f64);
        count_tmin.push(tmin.iter().filter(|v| **v < thresholds.tmin_q25).count() as f64);
        count_amp_hi.push(amp.iter().filter(|v| **v > thresholds.amplitude_q75).count() as f64);
        // Named "P90" in the report layout but defined as days below the
        // 25th-percentile amplitude; the definition wins.
        count_amp_lo.push(amp.iter().filter(|v| **v < thresholds.amplitude_q25).count() as f64);
        count_p75.push(precip.iter().filter(|v| **v > thresholds.precip_max_q75).count() as f64);
        count_p90.push(precip.iter().filter(|v| **v > thresholds.precip_max_q90).count() as f64);
    }

    Ok(IndexVector {
        tmax_max: max_of(&tmax_max_c),
        tmax_mean: mean(&tmax_mean_c),
        tmax_min: min_of(&tmax_min_c),
        n_tmax_q3: mean(&count_tmax),
        tmin_min: min_of(&tmin_min_c),
        tmin_mean: mean(&tmin_mean_c),
        tmin_max: max_of(&tmin_max_c),
        n_tmin_q1: mean(&count_tmin),
        amplitude_max_max: max_of(&amp_max_c),
        amplitude_max_mean: mean(&amp_max_c),
        amplitude_max_min: min_of(&amp_max_c),
        amplitude_min_max: max_of(&amp_min_c),
        amplitude_min_mean: mean(&amp_min_c),
        amplitude_min_min: min_of(&amp_min_c),
        n_amplitude_q3: mean(&count_amp_hi),
        n_amplitude_p90: mean(&count_amp_lo),
        precip_max_max: max_of(&precip_max_c),
        precip_max_mean: mean(&precip_max_c),
        precip_max_min: min_of(&precip_max_c),
        precip_mean_mean: mean(&precip_mean_c),
        n_precip_max_q3: mean(&count_p75),
        n_precip_max_p90: mean(&count_p90),
    })
}

/// A per-region design matrix: one row per week, fixed feature-column
/// order ([`INDEX_NAMES`] then [`EXTRA_FEATURE_NAMES`]), and the target
/// series alongside. Rows are ordered by strictly increasing week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub region_id: RegionId,
    pub names: Vec<String>,
    pub weeks: Vec<WeekId>,
    data: Vec<f64>,
    pub target: Vec<f64>,
}

impl FeatureMatrix {
    /// Assembles a matrix from row-major data. Panics on inconsistent
    /// dimensions or unsorted weeks — these are programming errors, not
    /// data errors.
    pub fn new(
        region_id: RegionId,
        names: Vec<String>,
        weeks: Vec<WeekId>,
        data: Vec<f64>,
        target: Vec<f64>,
    ) -> Self {
        assert_eq!(data.len(), names.len() * weeks.len(), "data size mismatch");
        assert_eq!(target.len(), weeks.len(), "target length mismatch");
        assert!(
            weeks.windows(2).all(|w| w[0] < w[1]),
            "weeks must be strictly increasing"
        );
        FeatureMatrix {
            region_id,
            names,
            weeks,
            data,
            target,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.weeks.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.n_cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn col_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| FeatureError::UnknownColumn(name.to_string()))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.row(i)[j]).collect()
    }

    /// The inclusive week range of the rows.
    pub fn week_range(&self) -> WeekRange {
        WeekRange {
            start: self.weeks[0],
            end: *self.weeks.last().expect("non-empty matrix"),
        }
    }

    /// Indices of the rows whose week falls inside `range`.
    pub fn rows_in(&self, range: &WeekRange) -> std::ops::Range<usize> {
        let lo = self.weeks.partition_point(|w| *w < range.start);
        let hi = self.weeks.partition_point(|w| *w <= range.end);
        lo..hi
    }

    /// A copy of the given row span as its own matrix.
    pub fn subset(&self, rows: std::ops::Range<usize>) -> FeatureMatrix {
        let c = self.n_cols();
        FeatureMatrix {
            region_id: self.region_id.clone(),
            names: self.names.clone(),
            weeks: self.weeks[rows.clone()].to_vec(),
            data: self.data[rows.start * c..rows.end * c].to_vec(),
            target: self.target[rows].to_vec(),
        }
    }

    pub(crate) fn replace_value(&mut self, row: usize, col: usize, value: f64) {
        let c = self.n_cols();
        self.data[row * c + col] = value;
    }
}

/// Applies `ln(1+x)` to the four precipitation-amount columns, leaving
/// every other column bitwise untouched.
pub fn log_transform_precip(matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
    let mut out = matrix.clone();
    for name in PRECIP_AMOUNT_COLUMNS {
        let j = out.col_index(name)?;
        for i in 0..out.n_rows() {
            let v = out.row(i)[j];
            if v < 0.0 {
                return Err(FeatureError::NegativePrecip {
                    column: name.to_string(),
                    value: v,
                });
            }
            out.replace_value(i, j, v.ln_1p());
        }
    }
    Ok(out)
}

fn pearson(xs: &[f64], ys: &[f64], lag: usize) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(FeatureError::ConstantSeries { lag });
    }
    let _ = n;
    Ok(sxy / (sxx * syy).sqrt())
}

/// Sample cross-correlation: for each lag k in 0..=max_lag, the Pearson
/// correlation between x_{t−k} and y_t over their overlapping window.
pub fn sample_ccf(x: &[f64], y: &[f64], max_lag: usize) -> Result<Vec<(usize, f64)>> {
    if x.len() != y.len() {
        return Err(FeatureError::LengthMismatch {
            x: x.len(),
            y: y.len(),
        });
    }
    if x.len() <= max_lag + 2 {
        return Err(FeatureError::SeriesTooShort {
            len: x.len(),
            max_lag,
        });
    }
    let n = x.len();
    (0..=max_lag)
        .map(|k| pearson(&x[..n - k], &y[k..], k).map(|r| (k, r)))
        .collect()
}

/// The lag with the largest |correlation|; ties go to the smallest lag.
pub fn select_lag(ccf: &[(usize, f64)]) -> Result<usize> {
    if ccf.is_empty() {
        return Err(FeatureError::EmptyCcf);
    }
    let mut best = ccf[0];
    for entry in &ccf[1..] {
        if entry.1.abs() > best.1.abs() {
            best = *entry;
        }
    }
    Ok(best.0)
}

/// Builds the design matrix for one region from aligned weekly inputs.
///
/// All three inputs must cover the identical week range. Row `t` holds
/// the week-`t` indices, same-week aerosol, aerosol lagged by `aod_lag`,
/// the discharge values of the previous two weeks, a plain integer week
/// counter ("date"), and the week-`t` discharge target. The first
/// `max(aod_lag, 2)` weeks carry incomplete lags and are dropped.
pub fn build_design_matrix(
    indices: &[(WeekId, IndexVector)],
    aod: &WeeklySeries,
    hd: &WeeklySeries,
    aod_lag: usize,
) -> Result<FeatureMatrix> {
    if indices.is_empty() {
        return Err(FeatureError::TooShortAfterTrim { rows: 0, trim: 0 });
    }
    let idx_range = WeekRange {
        start: indices[0].0,
        end: indices.last().expect("non-empty").0,
    };
    if idx_range.len() != indices.len() {
        // A gap in the index weeks is a misalignment of its own kind.
        return Err(FeatureError::MisalignedRanges {
            indices: idx_range,
            aod: aod.range(),
            discharges: hd.range(),
        });
    }
    if aod.range() != idx_range || hd.range() != idx_range {
        return Err(FeatureError::MisalignedRanges {
            indices: idx_range,
            aod: aod.range(),
            discharges: hd.range(),
        });
    }

    let trim = aod_lag.max(2);
    let n = indices.len();
    if n <= trim {
        return Err(FeatureError::TooShortAfterTrim { rows: n, trim });
    }

    let names: Vec<String> = INDEX_NAMES
        .iter()
        .chain(EXTRA_FEATURE_NAMES.iter())
        .map(|s| s.to_string())
        .collect();
    let aod_values = aod.values();
    let hd_values = hd.values();
    let mut weeks = Vec::with_capacity(n - trim);
    let mut data = Vec::with_capacity((n - trim) * names.len());
    let mut target = Vec::with_capacity(n - trim);
    for t in trim..n {
        let (week, ref iv) = indices[t];
        weeks.push(week);
        data.extend_from_slice(&iv.to_array());
        data.push(aod_values[t]);
        data.push(aod_values[t - aod_lag]);
        data.push(hd_values[t - 1]);
        data.push(hd_values[t - 2]);
        data.push(t as f64);
        target.push(hd_values[t]);
    }

    let matrix = FeatureMatrix::new(hd.region_id.clone(), names, weeks, data, target);
    for i in 0..matrix.n_rows() {
        for (j, v) in matrix.row(i).iter().enumerate() {
            if !v.is_finite() {
                return Err(FeatureError::NonFiniteValue {
                    column: matrix.names[j].clone(),
                    week: matrix.weeks[i],
                });
            }
        }
        if !matrix.target[i].is_finite() {
            return Err(FeatureError::NonFiniteValue {
                column: "target".to_string(),
                week: matrix.weeks[i],
            });
        }
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::DailyClimateRecord;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    #[test]
    fn quantile_interpolates_order_statistics() {
        let values: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        assert!((quantile(&values, 0.75).unwrap() - 75.25).abs() < 1e-12);
        assert!((quantile(&values, 0.90).unwrap() - 90.1).abs() < 1e-12);
        assert_eq!(quantile(&values, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&values, 1.0).unwrap(), 100.0);
        let constant = vec![4.2; 17];
        assert_eq!(quantile(&constant, 0.75).unwrap(), 4.2);
        assert!(quantile(&[], 0.5).is_err());
        assert!(quantile(&values, 1.5).is_err());
    }

    fn day(cell: &str, date: NaiveDate, tmax: f64, tmin: f64, precip: f64) -> DailyClimateRecord {
        DailyClimateRecord {
            cell_id: CellId::new(cell),
            date,
            tmax,
            tmin,
            precip,
        }
    }

    /// A one-week group for the given per-cell (tmax, tmin, precip) rows.
    fn week_group(cells: &[(&str, [f64; 7], [f64; 7], [f64; 7])]) -> WeekGroup {
        let monday: NaiveDate = "2001-01-01".parse().unwrap();
        let mut by_cell = BTreeMap::new();
        for (cell, tmax, tmin, precip) in cells {
            let records: Vec<DailyClimateRecord> = (0..7)
                .map(|d| {
                    day(
                        cell,
                        monday + chrono::Duration::days(d as i64),
                        tmax[d],
                        tmin[d],
                        precip[d],
                    )
                })
                .collect();
            by_cell.insert(CellId::new(*cell), records);
        }
        WeekGroup {
            week: WeekId::new(2001, 1).unwrap(),
            by_cell,
        }
    }

    fn flat_baseline(cells: &[&str], thresholds: CellThresholds) -> PercentileBaseline {
        PercentileBaseline {
            period: WeekRange::new(WeekId::new(2001, 1).unwrap(), WeekId::new(2001, 52).unwrap())
                .unwrap(),
            per_cell: cells
                .iter()
                .map(|c| (CellId::new(*c), thresholds.clone()))
                .collect(),
        }
    }

    fn loose_thresholds() -> CellThresholds {
        CellThresholds {
            tmax_q75: 1e6,
            tmin_q25: -1e6,
            amplitude_q75: 1e6,
            amplitude_q25: -1e6,
            precip_max_q75: 1e6,
            precip_max_q90: 1e6,
        }
    }

    #[test]
    fn single_cell_temperature_statistics() {
        let tmax = [30.0, 31.0, 32.0, 33.0, 34.0, 35.0, 36.0];
        let tmin = [20.0; 7];
        let precip = [0.0; 7];
        let group = week_group(&[("c1", tmax, tmin, precip)]);
        let baseline = flat_baseline(&["c1"], loose_thresholds());
        let iv = compute_indices(&RegionId::new("r"), &group, &baseline).unwrap();
        assert_eq!(iv.tmax_max, 36.0);
        assert_eq!(iv.tmax_mean, 33.0);
        assert_eq!(iv.tmax_min, 30.0);
        // Amplitude follows tmax here since tmin is constant.
        assert_eq!(iv.amplitude_max_max, 16.0);
        assert_eq!(iv.amplitude_min_min, 10.0);
        // All count indices are zero under unreachable thresholds.
        assert_eq!(iv.n_tmax_q3, 0.0);
        assert_eq!(iv.n_tmin_q1, 0.0);
        assert_eq!(iv.n_amplitude_q3, 0.0);
        assert_eq!(iv.n_precip_max_q3, 0.0);
    }

    #[test]
    fn duplicate_cells_leave_every_index_unchanged() {
        let tmax = [30.0, 28.0, 32.0, 29.5, 34.0, 35.0, 33.0];
        let tmin = [21.0, 20.0, 22.5, 19.0, 23.0, 24.0, 22.0];
        let precip = [0.0, 4.0, 12.5, 0.0, 3.0, 0.5, 8.0];
        let thresholds = CellThresholds {
            tmax_q75: 32.0,
            tmin_q25: 21.0,
            amplitude_q75: 10.0,
            amplitude_q25: 9.0,
            precip_max_q75: 4.0,
            precip_max_q90: 8.0,
        };
        let single = week_group(&[("a", tmax, tmin, precip)]);
        let double = week_group(&[("a", tmax, tmin, precip), ("b", tmax, tmin, precip)]);
        let iv1 = compute_indices(
            &RegionId::new("r"),
            &single,
            &flat_baseline(&["a"], thresholds.clone()),
        )
        .unwrap();
        let iv2 = compute_indices(
            &RegionId::new("r"),
            &double,
            &flat_baseline(&["a", "b"], thresholds),
        )
        .unwrap();
        // The across-cell stage (max, mean, or min over identical
        // per-cell values) is the identity, so every index matches the
        // single-cell result.
        assert_eq!(iv1.to_array(), iv2.to_array());
        // Families whose three indices share a within-week statistic
        // collapse outright.
        assert_eq!(iv2.amplitude_max_max, iv2.amplitude_max_min);
        assert_eq!(iv2.amplitude_max_max, iv2.amplitude_max_mean);
        assert_eq!(iv2.amplitude_min_max, iv2.amplitude_min_min);
        assert_eq!(iv2.amplitude_min_max, iv2.amplitude_min_mean);
        assert_eq!(iv2.precip_max_max, iv2.precip_max_min);
        assert_eq!(iv2.precip_max_max, iv2.precip_max_mean);
        // Exceedance counts: tmax > 32 on days {34, 35, 33} → 3;
        // tmin < 21 on {20, 19} → 2; precip > 4 on {12.5, 8} → 2;
        // precip > 8 on {12.5} → 1.
        assert_eq!(iv2.n_tmax_q3, 3.0);
        assert_eq!(iv2.n_tmin_q1, 2.0);
        assert_eq!(iv2.n_precip_max_q3, 2.0);
        assert_eq!(iv2.n_precip_max_p90, 1.0);
    }

    #[test]
    fn amplitude_below_threshold_count_uses_q25() {
        // Amplitudes: 10, 8, 12, 9, 11, 10, 10 with q25 threshold 9.5 →
        // days strictly below: {8, 9} → 2.
        let tmax = [30.0, 28.0, 32.0, 29.0, 31.0, 30.0, 30.0];
        let tmin = [20.0; 7];
        let precip = [0.0; 7];
        let group = week_group(&[("c1", tmax, tmin, precip)]);
        let mut thresholds = loose_thresholds();
        thresholds.amplitude_q25 = 9.5;
        let baseline = flat_baseline(&["c1"], thresholds);
        let iv = compute_indices(&RegionId::new("r"), &group, &baseline).unwrap();
        assert_eq!(iv.n_amplitude_p90, 2.0);
    }

    #[test]
    fn wrong_day_count_is_rejected() {
        let mut group = week_group(&[("c1", [30.0; 7], [20.0; 7], [0.0; 7])]);
        group.by_cell.get_mut(&CellId::new("c1")).unwrap().pop();
        let baseline = flat_baseline(&["c1"], loose_thresholds());
        let err = compute_indices(&RegionId::new("r"), &group, &baseline).unwrap_err();
        assert!(matches!(err, FeatureError::WrongDayCount { got: 6, .. }));
    }

    fn tiny_matrix(values: [f64; 4]) -> FeatureMatrix {
        // Two rows with the full standard column set; index columns 0.
        let names: Vec<String> = INDEX_NAMES
            .iter()
            .chain(EXTRA_FEATURE_NAMES.iter())
            .map(|s| s.to_string())
            .collect();
        let start = WeekId::new(2001, 1).unwrap();
        let mut data = Vec::new();
        for row in 0..2 {
            let mut r = vec![0.0; names.len()];
            let pmm = names.iter().position(|n| n == "precip_max_max").unwrap();
            let pm = names.iter().position(|n| n == "precip_mean_mean").unwrap();
            r[pmm] = values[row * 2];
            r[pm] = values[row * 2 + 1];
            data.extend_from_slice(&r);
        }
        FeatureMatrix::new(
            RegionId::new("r"),
            names,
            vec![start, start.next()],
            data,
            vec![1.0, 2.0],
        )
    }

    #[test]
    fn log_transform_touches_only_precip_amounts() {
        let e = std::f64::consts::E;
        let m = tiny_matrix([0.0, e - 1.0, 3.0, 7.0]);
        let t = log_transform_precip(&m).unwrap();
        let pmm = t.col_index("precip_max_max").unwrap();
        let pm = t.col_index("precip_mean_mean").unwrap();
        assert_eq!(t.row(0)[pmm], 0.0);
        assert!((t.row(0)[pm] - 1.0).abs() < 1e-12);
        assert!((t.row(1)[pmm] - 4.0_f64.ln()).abs() < 1e-12);
        // Temperature and count columns bitwise identical.
        for name in ["Tmax_max", "n_precip_max_Q3", "aerosol", "egreso_1", "date"] {
            let j = t.col_index(name).unwrap();
            assert_eq!(t.row(0)[j].to_bits(), m.row(0)[j].to_bits());
            assert_eq!(t.row(1)[j].to_bits(), m.row(1)[j].to_bits());
        }

        let bad = tiny_matrix([-0.1, 0.0, 0.0, 0.0]);
        assert!(matches!(
            log_transform_precip(&bad).unwrap_err(),
            FeatureError::NegativePrecip { .. }
        ));
    }

    #[test]
    fn ccf_finds_shifted_identity() {
        let n = 80;
        let base: Vec<f64> = (0..n).map(|t| (t as f64 * 0.7).sin() + 0.1 * t as f64).collect();
        // y_t = x_{t-10}.
        let x = base[10..].to_vec();
        let y = base[..n - 10].to_vec();
        let x_full: Vec<f64> = base.clone();
        let y_full: Vec<f64> = (0..n)
            .map(|t| if t >= 10 { base[t - 10] } else { base[t] })
            .collect();
        let _ = (x, y);
        let ccf = sample_ccf(&x_full, &y_full, 15).unwrap();
        // Exact identity holds only once the warm-up rows leave the
        // window, so compare at the lag level.
        assert_eq!(select_lag(&ccf).unwrap(), 10);

        // Pure shift without warm-up contamination: correlation exactly 1.
        let xs: Vec<f64> = (0..60).map(|t| ((t * 37) % 11) as f64).collect();
        let shifted: Vec<f64> = (0..60)
            .map(|t| if t >= 10 { xs[t - 10] } else { 0.0 })
            .collect();
        let ccf = sample_ccf(&xs, &shifted, 12).unwrap();
        let at10 = ccf.iter().find(|(k, _)| *k == 10).unwrap().1;
        assert!((at10 - 1.0).abs() < 1e-12, "r at lag 10 = {at10}");
        assert_eq!(select_lag(&ccf).unwrap(), 10);
    }

    #[test]
    fn ccf_rejects_constant_and_short_series() {
        let x = vec![5.0; 50];
        let y: Vec<f64> = (0..50).map(|t| t as f64).collect();
        assert!(matches!(
            sample_ccf(&x, &y, 5).unwrap_err(),
            FeatureError::ConstantSeries { .. }
        ));
        let x: Vec<f64> = (0..10).map(|t| t as f64).collect();
        assert!(matches!(
            sample_ccf(&x, &x.clone(), 8).unwrap_err(),
            FeatureError::SeriesTooShort { .. }
        ));
    }

    #[test]
    fn white_noise_ccf_stays_small() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ccf = sample_ccf(&x, &y, 20).unwrap();
        for (lag, r) in ccf {
            assert!(r.abs() < 0.15, "lag {lag}: |r| = {}", r.abs());
        }
    }

    #[test]
    fn select_lag_breaks_ties_toward_smallest() {
        let ccf = vec![(0, 0.2), (3, -0.8), (5, 0.4), (7, 0.8)];
        assert_eq!(select_lag(&ccf).unwrap(), 3);
        assert!(select_lag(&[]).is_err());
    }

    fn constant_indices(week: WeekId) -> (WeekId, IndexVector) {
        let iv = IndexVector {
            tmax_max: 1.0,
            tmax_mean: 1.0,
            tmax_min: 1.0,
            n_tmax_q3: 0.0,
            tmin_min: 1.0,
            tmin_mean: 1.0,
            tmin_max: 1.0,
            n_tmin_q1: 0.0,
            amplitude_max_max: 1.0,
            amplitude_max_mean: 1.0,
            amplitude_max_min: 1.0,
            amplitude_min_max: 1.0,
            amplitude_min_mean: 1.0,
            amplitude_min_min: 1.0,
            n_amplitude_q3: 0.0,
            n_amplitude_p90: 0.0,
            precip_max_max: 0.0,
            precip_max_mean: 0.0,
            precip_max_min: 0.0,
            precip_mean_mean: 0.0,
            n_precip_max_q3: 0.0,
            n_precip_max_p90: 0.0,
        };
        (week, iv)
    }

    fn aligned_inputs(n: usize) -> (Vec<(WeekId, IndexVector)>, WeeklySeries, WeeklySeries) {
        let start = WeekId::new(2001, 1).unwrap();
        let indices: Vec<_> = (0..n)
            .map(|i| constant_indices(start.add_weeks(i as i64)))
            .collect();
        let aod = WeeklySeries::from_start(
            RegionId::new("r"),
            start,
            (0..n).map(|i| 0.1 + i as f64 * 0.01).collect(),
        )
        .unwrap();
        let hd = WeeklySeries::from_start(
            RegionId::new("r"),
            start,
            (0..n).map(|i| 50.0 + i as f64).collect(),
        )
        .unwrap();
        (indices, aod, hd)
    }

    #[test]
    fn design_matrix_trims_lag_warmup() {
        let (indices, aod, hd) = aligned_inputs(62);
        let m = build_design_matrix(&indices, &aod, &hd, 10).unwrap();
        assert_eq!(m.n_rows(), 52);
        assert_eq!(m.n_cols(), 27);
        let m0 = build_design_matrix(&indices, &aod, &hd, 0).unwrap();
        assert_eq!(m0.n_rows(), 60);
    }

    #[test]
    fn design_matrix_lags_are_definitional() {
        let (indices, aod, hd) = aligned_inputs(30);
        let m = build_design_matrix(&indices, &aod, &hd, 10).unwrap();
        let e1 = m.col_index("egreso_1").unwrap();
        let e2 = m.col_index("egreso_2").unwrap();
        let a = m.col_index("aerosol").unwrap();
        let a10 = m.col_index("aerosol_10").unwrap();
        let date = m.col_index("date").unwrap();
        for (i, week) in m.weeks.iter().enumerate() {
            assert_eq!(m.row(i)[e1], hd.get(&week.prev()).unwrap());
            assert_eq!(m.row(i)[e2], hd.get(&week.add_weeks(-2)).unwrap());
            assert_eq!(m.row(i)[a], aod.get(week).unwrap());
            assert_eq!(m.row(i)[a10], aod.get(&week.add_weeks(-10)).unwrap());
            assert_eq!(m.row(i)[date], (i + 10) as f64);
            assert_eq!(m.target[i], hd.get(week).unwrap());
        }
    }

    #[test]
    fn design_matrix_rejects_misaligned_ranges() {
        let (indices, aod, hd) = aligned_inputs(30);
        let start = WeekId::new(2001, 2).unwrap();
        let shifted = WeeklySeries::from_start(
            RegionId::new("r"),
            start,
            hd.values().to_vec(),
        )
        .unwrap();
        assert!(matches!(
            build_design_matrix(&indices, &aod, &shifted, 10).unwrap_err(),
            FeatureError::MisalignedRanges { .. }
        ));
        // Too short to survive trimming.
        let (indices, aod, hd) = aligned_inputs(10);
        assert!(matches!(
            build_design_matrix(&indices, &aod, &hd, 10).unwrap_err(),
            FeatureError::TooShortAfterTrim { .. }
        ));
    }

    #[test]
    fn matrix_row_slicing_by_week_range() {
        let (indices, aod, hd) = aligned_inputs(40);
        let m = build_design_matrix(&indices, &aod, &hd, 10).unwrap();
        let start = m.weeks[5];
        let end = m.weeks[14];
        let rows = m.rows_in(&WeekRange::new(start, end).unwrap());
        assert_eq!(rows, 5..15);
        let sub = m.subset(rows);
        assert_eq!(sub.n_rows(), 10);
        assert_eq!(sub.weeks[0], start);
        assert_eq!(sub.target, m.target[5..15]);
    }

    proptest! {
        /// Ordering invariants of the index families hold for arbitrary
        /// single-week panels of 1–3 cells.
        #[test]
        fn index_orderings_hold(
            n_cells in 1usize..=3,
            raw in prop::collection::vec(0.0f64..15.0, 3 * 7 * 3),
        ) {
            let mut cells = Vec::new();
            let names = ["a", "b", "c"];
            for c in 0..n_cells {
                let mut tmax = [0.0; 7];
                let mut tmin = [0.0; 7];
                let mut precip = [0.0; 7];
                for d in 0..7 {
                    let base = c * 21 + d * 3;
                    tmin[d] = raw[base];
                    tmax[d] = raw[base] + raw[base + 1]; // ensures tmax >= tmin
                    precip[d] = raw[base + 2];
                }
                cells.push((names[c], tmax, tmin, precip));
            }
            let group = week_group(&cells);
            let baseline = flat_baseline(&names[..n_cells], CellThresholds {
                tmax_q75: 7.0,
                tmin_q25: 7.0,
                amplitude_q75: 7.0,
                amplitude_q25: 7.0,
                precip_max_q75: 7.0,
                precip_max_q90: 11.0,
            });
            let iv = compute_indices(&RegionId::new("r"), &group, &baseline).unwrap();
            prop_assert!(iv.tmax_min <= iv.tmax_mean && iv.tmax_mean <= iv.tmax_max);
            prop_assert!(iv.tmin_min <= iv.tmin_mean && iv.tmin_mean <= iv.tmin_max);
            prop_assert!(iv.amplitude_max_min <= iv.amplitude_max_mean);
            prop_assert!(iv.amplitude_max_mean <= iv.amplitude_max_max);
            prop_assert!(iv.amplitude_min_min <= iv.amplitude_min_mean);
            prop_assert!(iv.amplitude_min_mean <= iv.amplitude_min_max);
            prop_assert!(iv.precip_max_min <= iv.precip_max_mean);
            prop_assert!(iv.precip_max_mean <= iv.precip_max_max);
            for count in [iv.n_tmax_q3, iv.n_tmin_q1, iv.n_amplitude_q3,
                          iv.n_amplitude_p90, iv.n_precip_max_q3, iv.n_precip_max_p90] {
                prop_assert!((0.0..=7.0).contains(&count));
            }
        }

        /// Autocorrelation of any non-constant series is exactly 1 at lag 0.
        #[test]
        fn ccf_self_correlation_is_one(
            values in prop::collection::vec(-100.0f64..100.0, 20..60)
        ) {
            prop_assume!(values.iter().any(|v| *v != values[0]));
            let ccf = sample_ccf(&values, &values, 3).unwrap();
            prop_assert!((ccf[0].1 - 1.0).abs() < 1e-12);
        }
    }
}
