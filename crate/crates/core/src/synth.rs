//! Synthetic dataset generator: a desk-scale stand-in for the real
//! inputs with known ground truth.
//!
//! The generator emits the five input CSVs (gridded daily climate, cell
//! map, aerosol sites, daily aerosol readings, region centroids, weekly
//! discharges) plus a JSON manifest of the coefficients that produced
//! the discharges. Climate follows annual sinusoids with noise; aerosol
//! optical depth is deliberately non-seasonal (a national AR(1) level
//! plus site offsets) so its lagged effect on discharges stands out
//! from the shared yearly cycle.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error, Result};
use crate::ingest::{
    AodDailyRecord, AodSite, CellId, DailyClimatePanel, DailyClimateRecord, GridCell,
    RegionCentroid, RegionId, SiteId, WeeklySeries,
};
use crate::util::atomic_write;
use crate::week::{WeekId, WeekRange};

/// The causal structure behind the generated discharge counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthCoefficients {
    /// Weeks by which regional aerosol leads discharges.
    pub aod_lag: usize,
    pub beta_aod: f64,
    /// Weight on the weekly mean of daily maximum temperature,
    /// centered at `tmax_reference`.
    pub beta_tmax: f64,
    pub tmax_reference: f64,
    /// Weight on ln(1 + weekly mean precipitation).
    pub beta_precip: f64,
    pub ar1: f64,
    pub ar2: f64,
    pub intercept: f64,
}

impl Default for TruthCoefficients {
    fn default() -> Self {
        TruthCoefficients {
            aod_lag: 10,
            beta_aod: 70.0,
            beta_tmax: 1.2,
            tmax_reference: 28.0,
            beta_precip: 2.0,
            ar1: 0.25,
            ar2: 0.10,
            intercept: 18.0,
        }
    }
}

/// Shape and seed of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_regions: usize,
    pub n_cells_per_region: usize,
    pub n_aod_sites: usize,
    pub start_year: i32,
    pub end_year: i32,
    pub seed: u64,
    pub truth: TruthCoefficients,
    /// Standard deviation of the weekly discharge noise, in counts.
    pub noise_scale: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_regions: 7,
            n_cells_per_region: 4,
            n_aod_sites: 12,
            start_year: 2001,
            end_year: 2019,
            seed: 42,
            truth: TruthCoefficients::default(),
            noise_scale: 3.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config(ConfigError::BadValue {
                key: key.to_string(),
                message: message.to_string(),
            }))
        };
        if self.n_regions == 0 || self.n_cells_per_region == 0 || self.n_aod_sites == 0 {
            return bad("synthetic dimensions", "regions, cells, and sites must be >= 1");
        }
        if self.end_year < self.start_year {
            return bad("synthetic years", "end year precedes start year");
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return bad("noise_scale", "must be finite and non-negative");
        }
        let t = &self.truth;
        let coefs = [
            t.beta_aod,
            t.beta_tmax,
            t.tmax_reference,
            t.beta_precip,
            t.ar1,
            t.ar2,
            t.intercept,
        ];
        if coefs.iter().any(|c| !c.is_finite()) {
            return bad("truth coefficients", "must all be finite");
        }
        if t.ar1 < 0.0 || t.ar2 < 0.0 || t.ar1 + t.ar2 >= 1.0 {
            return bad("truth ar1/ar2", "need ar1, ar2 >= 0 and ar1 + ar2 < 1 for stability");
        }
        let weeks = week_span(self);
        if t.aod_lag >= weeks.len() {
            return bad("truth aod_lag", "lag exceeds the generated week span");
        }
        Ok(())
    }
}

/// Ground truth written next to the generated files, for oracle tests
/// and post-hoc verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthManifest {
    pub spec: SyntheticSpec,
    pub start_week: WeekId,
    pub end_week: WeekId,
    pub n_weeks: usize,
}

/// A complete in-memory dataset, ready to write or to feed straight
/// into the pipeline.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub panel: DailyClimatePanel,
    pub sites: BTreeMap<SiteId, AodSite>,
    pub aod_records: Vec<AodDailyRecord>,
    pub centroids: BTreeMap<RegionId, RegionCentroid>,
    pub discharges: BTreeMap<RegionId, WeeklySeries>,
    /// The distance-weighted weekly aerosol series per region — the
    /// exact series whose lagged values entered the discharge recursion.
    pub aod_weekly: BTreeMap<RegionId, WeeklySeries>,
    pub manifest: TruthManifest,
}

/// All ISO weeks from W01 of the start year through the last week of
/// the end year.
fn week_span(spec: &SyntheticSpec) -> WeekRange {
    let start = WeekId::new(spec.start_year, 1).expect("week 1 exists in every year");
    let end = WeekId::new(spec.end_year, 53)
        .unwrap_or_else(|_| WeekId::new(spec.end_year, 52).expect("week 52 exists"));
    WeekRange { start, end }
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let k = 10f64.powi(decimals);
    (v * k).round() / k
}

struct RegionProfile {
    base_tmax: f64,
    seasonal_amp: f64,
    phase: f64,
    daily_range: f64,
    wet_phase: f64,
    wet_amp: f64,
    intercept: f64,
}

fn region_profile(r: usize, truth: &TruthCoefficients) -> RegionProfile {
    let rf = r as f64;
    RegionProfile {
        base_tmax: 27.0 + 2.5 * (rf * 2.1).sin() + 0.3 * rf,
        seasonal_amp: 2.0 + 0.3 * (r % 3) as f64,
        phase: 0.8 * rf,
        daily_range: 8.0 + 0.5 * (r % 4) as f64,
        wet_phase: 1.9 + 0.5 * rf,
        wet_amp: 9.0 + 1.5 * (r % 3) as f64,
        intercept: truth.intercept + 4.0 * rf,
    }
}

/// Generates the full dataset for `spec`. Deterministic: every random
/// stream is seeded from `spec.seed` alone.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let truth = &spec.truth;
    let span = week_span(spec);
    let weeks: Vec<WeekId> = span.iter().collect();
    let n_weeks = weeks.len();
    let first_day = span.start.monday();
    let last_day = span.end.sunday();
    let n_days = (last_day - first_day).num_days() as usize + 1;

    // Independent streams so a tweak to one component never reshuffles
    // the others.
    let stream = |s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(s);
        rng
    };
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    // --- Geography -------------------------------------------------
    let mut geo = stream(0);
    let mut cells = BTreeMap::new();
    let mut centroids = BTreeMap::new();
    let region_ids: Vec<RegionId> = (0..spec.n_regions)
        .map(|r| RegionId::new(format!("region_{}", r + 1)))
        .collect();
    for (r, region_id) in region_ids.iter().enumerate() {
        let lat = 8.4 + 0.35 * r as f64 + geo.gen_range(-0.1..0.1);
        let lon = -85.5 + 0.38 * r as f64 + geo.gen_range(-0.1..0.1);
        centroids.insert(
            region_id.clone(),
            RegionCentroid {
                region_id: region_id.clone(),
                lat: round_to(lat, 4),
                lon: round_to(lon, 4),
            },
        );
        for c in 0..spec.n_cells_per_region {
            let cell_id = CellId::new(format!("cell_{}_{}", r + 1, c + 1));
            cells.insert(
                cell_id.clone(),
                GridCell {
                    cell_id,
                    lat: round_to(lat + geo.gen_range(-0.25..0.25), 4),
                    lon: round_to(lon + geo.gen_range(-0.25..0.25), 4),
                    region_id: region_id.clone(),
                },
            );
        }
    }
    let mut sites = BTreeMap::new();
    for s in 0..spec.n_aod_sites {
        let site_id = SiteId::new(format!("site_{:02}", s + 1));
        sites.insert(
            site_id.clone(),
            AodSite {
                site_id,
                lat: round_to(geo.gen_range(8.2..11.0), 4),
                lon: round_to(geo.gen_range(-85.7..-82.8), 4),
            },
        );
    }

    // --- Daily climate ----------------------------------------------
    let mut cl = stream(1);
    let mut climate = Vec::with_capacity(cells.len() * n_days);
    for cell in cells.values() {
        let r = region_ids
            .iter()
            .position(|id| *id == cell.region_id)
            .expect("cell belongs to a generated region");
        let profile = region_profile(r, truth);
        let last_digit = cell.cell_id.as_str().bytes().last().unwrap_or(b'0');
        let cell_offset = 0.02 * last_digit as f64;
        for d in 0..n_days {
            let date = first_day + Duration::days(d as i64);
            let theta =
                2.0 * std::f64::consts::PI * date.ordinal0() as f64 / 365.25;
            let tmax = profile.base_tmax
                + cell_offset
                + profile.seasonal_amp * (theta + profile.phase).sin()
                + 1.2 * normal.sample(&mut cl);
            let range = (profile.daily_range * (0.8 + 0.2 * (theta + profile.phase + 0.7).cos())
                + 0.8 * normal.sample(&mut cl))
            .max(0.5);
            let wet = (theta + profile.wet_phase).sin().max(0.0);
            let precip = (wet * (profile.wet_amp + 3.0 * normal.sample(&mut cl))
                + 0.6 * normal.sample(&mut cl))
            .max(0.0);
            let tmax = round_to(tmax, 2);
            // Round the range, not tmin, so tmax >= tmin survives
            // rounding exactly.
            let tmin = round_to(tmax - round_to(range, 2), 2);
            climate.push(DailyClimateRecord {
                cell_id: cell.cell_id.clone(),
                date,
                tmax,
                tmin,
                precip: round_to(precip, 2),
            });
        }
    }

    // --- Aerosol optical depth ---------------------------------------
    // A national weekly AR(1) level; deliberately free of any annual
    // cycle. Per-site offsets and daily noise sit on top, and ~5% of
    // (site, day) readings go missing — except at the first site, which
    // guarantees every week has data.
    let mut ar = stream(2);
    let (mu, rho, sigma_level) = (0.35, 0.6, 0.07);
    let mut level = Vec::with_capacity(n_weeks);
    let mut l = mu;
    for _ in 0..n_weeks {
        l = mu + rho * (l - mu) + sigma_level * normal.sample(&mut ar);
        level.push(l);
    }
    let site_offsets: Vec<f64> = (0..spec.n_aod_sites)
        .map(|_| 0.04 * normal.sample(&mut ar))
        .collect();
    let mut aod_records = Vec::new();
    for (s, site) in sites.values().enumerate() {
        for d in 0..n_days {
            if s != 0 && ar.gen_bool(0.05) {
                continue; // missing retrieval
            }
            let date = first_day + Duration::days(d as i64);
            let w = (d / 7).min(n_weeks - 1);
            let value = (level[w] + site_offsets[s] + 0.05 * normal.sample(&mut ar)).max(0.0);
            aod_records.push(AodDailyRecord {
                site_id: site.site_id.clone(),
                date,
                aod: round_to(value, 4),
            });
        }
    }

    // --- Weekly covariate summaries per region -----------------------
    let aod_weekly =
        crate::ingest::aod_weekly_by_region(&sites, &aod_records, &centroids, 1.0)?;
    let mut tmax_mean: BTreeMap<RegionId, Vec<f64>> = BTreeMap::new();
    let mut precip_mean: BTreeMap<RegionId, Vec<f64>> = BTreeMap::new();
    let mut counts: BTreeMap<RegionId, Vec<usize>> = BTreeMap::new();
    for region_id in &region_ids {
        tmax_mean.insert(region_id.clone(), vec![0.0; n_weeks]);
        precip_mean.insert(region_id.clone(), vec![0.0; n_weeks]);
        counts.insert(region_id.clone(), vec![0; n_weeks]);
    }
    for rec in &climate {
        let region = &cells[&rec.cell_id].region_id;
        let w = WeekId::from_date(rec.date).weeks_since(&span.start) as usize;
        tmax_mean.get_mut(region).unwrap()[w] += rec.tmax;
        precip_mean.get_mut(region).unwrap()[w] += rec.precip;
        counts.get_mut(region).unwrap()[w] += 1;
    }
    for region_id in &region_ids {
        let n = &counts[region_id];
        let tm = tmax_mean.get_mut(region_id).unwrap();
        let pm = precip_mean.get_mut(region_id).unwrap();
        for w in 0..n_weeks {
            tm[w] /= n[w] as f64;
            pm[w] /= n[w] as f64;
        }
    }

    // --- Weekly discharges --------------------------------------------
    let mut hd_rng = stream(3);
    let mut discharges = BTreeMap::new();
    for (r, region_id) in region_ids.iter().enumerate() {
        let profile = region_profile(r, truth);
        let aod = aod_weekly[region_id].values();
        let tm = &tmax_mean[region_id];
        let pm = &precip_mean[region_id];
        let steady = (profile.intercept + truth.beta_aod * mu + truth.beta_precip * 1.5)
            / (1.0 - truth.ar1 - truth.ar2);
        let (mut h1, mut h2) = (steady, steady);
        let mut values = Vec::with_capacity(n_weeks);
        for t in 0..n_weeks {
            let lagged_aod = aod[t.saturating_sub(truth.aod_lag)];
            let x = profile.intercept
                + truth.beta_aod * lagged_aod
                + truth.beta_tmax * (tm[t] - truth.tmax_reference)
                + truth.beta_precip * pm[t].ln_1p()
                + truth.ar1 * h1
                + truth.ar2 * h2
                + spec.noise_scale * normal.sample(&mut hd_rng);
            let hd = x.round().max(0.0);
            values.push(hd);
            h2 = h1;
            h1 = hd;
        }
        discharges.insert(
            region_id.clone(),
            WeeklySeries::from_start(region_id.clone(), span.start, values)?,
        );
    }

    Ok(SyntheticDataset {
        panel: DailyClimatePanel::from_records(cells, climate),
        sites,
        aod_records,
        centroids,
        discharges,
        aod_weekly,
        manifest: TruthManifest {
            spec: spec.clone(),
            start_week: span.start,
            end_week: span.end,
            n_weeks,
        },
    })
}

/// The file names [`write_dataset`] produces inside its directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPaths {
    pub climate: PathBuf,
    pub cells: PathBuf,
    pub aod_sites: PathBuf,
    pub aod_daily: PathBuf,
    pub centroids: PathBuf,
    pub discharges: PathBuf,
    pub truth: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        DatasetPaths {
            climate: dir.join("climate.csv"),
            cells: dir.join("cells.csv"),
            aod_sites: dir.join("aod_sites.csv"),
            aod_daily: dir.join("aod_daily.csv"),
            centroids: dir.join("centroids.csv"),
            discharges: dir.join("discharges.csv"),
            truth: dir.join("truth.json"),
        }
    }
}

/// Writes the six input files plus the truth manifest into `dir`
/// (created if absent). Atomic per file; byte-identical across runs
/// with the same spec.
pub fn write_dataset(dataset: &SyntheticDataset, dir: &Path) -> Result<DatasetPaths> {
    let paths = DatasetPaths::in_dir(dir);
    crate::ingest::write_climate_csv(&paths.climate, &dataset.panel)?;
    crate::ingest::write_cell_map_csv(&paths.cells, &dataset.panel.cells)?;
    crate::ingest::write_aod_sites_csv(&paths.aod_sites, &dataset.sites)?;
    crate::ingest::write_aod_daily_csv(&paths.aod_daily, &dataset.aod_records)?;
    crate::ingest::write_centroids_csv(&paths.centroids, &dataset.centroids)?;
    crate::ingest::write_discharges_csv(&paths.discharges, &dataset.discharges)?;
    let json = serde_json::to_vec_pretty(&dataset.manifest).map_err(|e| {
        Error::Artifact(crate::error::ArtifactError::Encode {
            path: paths.truth.clone(),
            message: e.to_string(),
        })
    })?;
    atomic_write(&paths.truth, &json).map_err(|source| {
        Error::Artifact(crate::error::ArtifactError::Io {
            path: paths.truth.clone(),
            source,
        })
    })?;
    Ok(paths)
}
