//! Loading and validating the raw inputs: gridded daily climate, aerosol
//! optical depth (AOD) site readings, region centroids, and weekly
//! discharge counts.
//!
//! All tabular inputs are CSV with a header row. Weekly structures are
//! keyed by ISO-8601 week (Monday start); a "full" week is one whose
//! seven calendar days all fall inside the data's date span. Partial
//! leading and trailing weeks are dropped with a logged warning, while a
//! gap in a weekly series is always an error.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use crate::error::IngestError;
use crate::week::{WeekId, WeekRange};

type Result<T> = std::result::Result<T, IngestError>;

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(
            Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

id_type!(
    /// Identifier of a health region.
    RegionId
);
id_type!(
    /// Identifier of a climate grid cell.
    CellId
);
id_type!(
    /// Identifier of an aerosol measurement site.
    SiteId
);

/// A climate grid cell and the region it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub cell_id: CellId,
    pub lat: f64,
    pub lon: f64,
    pub region_id: RegionId,
}

/// One day of gridded climate at one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyClimateRecord {
    pub cell_id: CellId,
    pub date: NaiveDate,
    pub tmax: f64,
    pub tmin: f64,
    pub precip: f64,
}

/// An aerosol measurement site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AodSite {
    pub site_id: SiteId,
    pub lat: f64,
    pub lon: f64,
}

/// One day of aerosol optical depth at one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AodDailyRecord {
    pub site_id: SiteId,
    pub date: NaiveDate,
    pub aod: f64,
}

/// The population-weighted centroid of a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCentroid {
    pub region_id: RegionId,
    pub lat: f64,
    pub lon: f64,
}

/// Validated daily climate for all regions, grouped by region and sorted
/// by (cell, date) within each region.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyClimatePanel {
    pub cells: BTreeMap<CellId, GridCell>,
    records: BTreeMap<RegionId, Vec<DailyClimateRecord>>,
}

impl DailyClimatePanel {
    /// Assembles a panel from in-memory records, grouping by region and
    /// sorting by (cell, date). Callers must supply records that already
    /// satisfy the row invariants (known cell, tmax >= tmin, precip >= 0,
    /// no duplicates) — the CSV loader enforces them at parse time and
    /// generators guarantee them by construction.
    pub fn from_records(
        cells: BTreeMap<CellId, GridCell>,
        records: Vec<DailyClimateRecord>,
    ) -> Self {
        let mut grouped: BTreeMap<RegionId, Vec<DailyClimateRecord>> = BTreeMap::new();
        for rec in records {
            debug_assert!(rec.tmax >= rec.tmin && rec.precip >= 0.0);
            let region = cells
                .get(&rec.cell_id)
                .expect("record references a mapped cell")
                .region_id
                .clone();
            grouped.entry(region).or_default().push(rec);
        }
        for recs in grouped.values_mut() {
            recs.sort_by(|a, b| (&a.cell_id, a.date).cmp(&(&b.cell_id, b.date)));
        }
        DailyClimatePanel {
            cells,
            records: grouped,
        }
    }

    pub fn regions(&self) -> impl Iterator<Item = &RegionId> {
        self.records.keys()
    }

    pub fn region_records(&self, region: &RegionId) -> &[DailyClimateRecord] {
        self.records.get(region).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn n_records(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }
}

/// A contiguous weekly series for one region. Construction rejects
/// duplicate weeks and gaps, so an instance always covers every week of
/// its range exactly once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklySeries {
    pub region_id: RegionId,
    start: WeekId,
    values: Vec<f64>,
}

impl WeeklySeries {
    /// Builds a series from (week, value) pairs in any order.
    pub fn from_pairs(region_id: RegionId, mut pairs: Vec<(WeekId, f64)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(IngestError::Empty {
                context: format!("weekly series for region {region_id}"),
            });
        }
        pairs.sort_by_key(|(w, _)| *w);
        let start = pairs[0].0;
        let mut values = Vec::with_capacity(pairs.len());
        let mut expected = start;
        for (i, (week, value)) in pairs.iter().enumerate() {
            if i > 0 && *week == pairs[i - 1].0 {
                return Err(IngestError::DuplicateWeek {
                    region: region_id.to_string(),
                    week: *week,
                });
            }
            if *week != expected {
                return Err(IngestError::WeekGap {
                    region: region_id.to_string(),
                    week: pairs[i - 1].0,
                    expected,
                    found: *week,
                });
            }
            values.push(*value);
            expected = expected.next();
        }
        Ok(WeeklySeries {
            region_id,
            start,
            values,
        })
    }

    /// Builds a series from a start week and consecutive values.
    pub fn from_start(region_id: RegionId, start: WeekId, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(IngestError::Empty {
                context: format!("weekly series for region {region_id}"),
            });
        }
        Ok(WeeklySeries {
            region_id,
            start,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn range(&self) -> WeekRange {
        WeekRange {
            start: self.start,
            end: self.start.add_weeks(self.values.len() as i64 - 1),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value for `week`, if the series covers it.
    pub fn get(&self, week: &WeekId) -> Option<f64> {
        let offset = week.weeks_since(&self.start);
        if offset < 0 || offset as usize >= self.values.len() {
            None
        } else {
            Some(self.values[offset as usize])
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (WeekId, f64)> + '_ {
        let start = self.start;
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (start.add_weeks(i as i64), *v))
    }

    /// The sub-series covering `range`, if fully contained.
    pub fn slice(&self, range: &WeekRange) -> Option<WeeklySeries> {
        let lo = range.start.weeks_since(&self.start);
        let hi = range.end.weeks_since(&self.start);
        if lo < 0 || hi < lo || hi as usize >= self.values.len() {
            return None;
        }
        Some(WeeklySeries {
            region_id: self.region_id.clone(),
            start: range.start,
            values: self.values[lo as usize..=hi as usize].to_vec(),
        })
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn malformed(path: &Path, line: u64, message: impl fmt::Display) -> IngestError {
    IngestError::MalformedRow {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

/// Reads every row of `path` as `T`, handing each row and its line number
/// to `visit`.
fn for_each_row<T, F>(path: &Path, mut visit: F) -> Result<()>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut(u64, T) -> Result<()>,
{
    let mut rdr = open_reader(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| malformed(path, 1, e))?
        .clone();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            malformed(path, line, e)
        })?;
        let line = record_line(&rec);
        let row: T = rec
            .deserialize(Some(&headers))
            .map_err(|e| malformed(path, line, e))?;
        visit(line, row)?;
    }
    Ok(())
}

/// Loads the cell map (`cell_id,lat,lon,region_id`).
pub fn load_cell_map(path: &Path) -> Result<BTreeMap<CellId, GridCell>> {
    let mut cells = BTreeMap::new();
    for_each_row::<GridCell, _>(path, |line, cell| {
        if !cell.lat.is_finite() || !cell.lon.is_finite() {
            return Err(malformed(path, line, "non-finite coordinate"));
        }
        if cells.insert(cell.cell_id.clone(), cell).is_some() {
            return Err(malformed(path, line, "duplicate cell_id"));
        }
        Ok(())
    })?;
    if cells.is_empty() {
        return Err(IngestError::Empty {
            context: format!("cell map {}", path.display()),
        });
    }
    Ok(cells)
}

/// Loads daily gridded climate (`cell_id,date,tmax,tmin,precip`) and
/// validates every row against the cell map: known cell, tmax >= tmin,
/// non-negative precipitation, no duplicate (cell, date).
pub fn load_climate_csv(
    path: &Path,
    cells: &BTreeMap<CellId, GridCell>,
) -> Result<DailyClimatePanel> {
    let mut seen: HashSet<(CellId, NaiveDate)> = HashSet::new();
    let mut records: BTreeMap<RegionId, Vec<DailyClimateRecord>> = BTreeMap::new();
    for_each_row::<DailyClimateRecord, _>(path, |line, rec| {
        let cell = cells
            .get(&rec.cell_id)
            .ok_or_else(|| IngestError::UnknownCell {
                path: path.to_path_buf(),
                line,
                cell: rec.cell_id.to_string(),
            })?;
        if ![rec.tmax, rec.tmin, rec.precip].iter().all(|v| v.is_finite()) {
            return Err(malformed(path, line, "non-finite measurement"));
        }
        if rec.tmax < rec.tmin {
            return Err(IngestError::TmaxBelowTmin {
                path: path.to_path_buf(),
                line,
                cell: rec.cell_id.to_string(),
                date: rec.date,
                tmax: rec.tmax,
                tmin: rec.tmin,
            });
        }
        if rec.precip < 0.0 {
            return Err(malformed(
                path,
                line,
                format!("negative precipitation {}", rec.precip),
            ));
        }
        if !seen.insert((rec.cell_id.clone(), rec.date)) {
            return Err(IngestError::DuplicateRecord {
                path: path.to_path_buf(),
                line,
                cell: rec.cell_id.to_string(),
                date: rec.date,
            });
        }
        records.entry(cell.region_id.clone()).or_default().push(rec);
        Ok(())
    })?;
    if records.is_empty() {
        return Err(IngestError::Empty {
            context: format!("climate panel {}", path.display()),
        });
    }
    for recs in records.values_mut() {
        recs.sort_by(|a, b| (&a.cell_id, a.date).cmp(&(&b.cell_id, b.date)));
    }
    Ok(DailyClimatePanel {
        cells: cells.clone(),
        records,
    })
}

/// Loads AOD sites (`site_id,lat,lon`).
pub fn load_aod_sites(path: &Path) -> Result<BTreeMap<SiteId, AodSite>> {
    let mut sites = BTreeMap::new();
    for_each_row::<AodSite, _>(path, |line, site| {
        if sites.insert(site.site_id.clone(), site).is_some() {
            return Err(malformed(path, line, "duplicate site_id"));
        }
        Ok(())
    })?;
    if sites.is_empty() {
        return Err(IngestError::NoSites);
    }
    Ok(sites)
}

/// Loads daily AOD readings (`site_id,date,aod`).
pub fn load_aod_daily(path: &Path, sites: &BTreeMap<SiteId, AodSite>) -> Result<Vec<AodDailyRecord>> {
    let mut records = Vec::new();
    let mut seen: HashSet<(SiteId, NaiveDate)> = HashSet::new();
    for_each_row::<AodDailyRecord, _>(path, |line, rec| {
        if !sites.contains_key(&rec.site_id) {
            return Err(IngestError::UnknownSiteRef {
                path: path.to_path_buf(),
                line,
                site: rec.site_id.to_string(),
            });
        }
        if !rec.aod.is_finite() || rec.aod < 0.0 {
            return Err(malformed(path, line, format!("bad aod value {}", rec.aod)));
        }
        if !seen.insert((rec.site_id.clone(), rec.date)) {
            return Err(malformed(path, line, "duplicate (site, date)"));
        }
        records.push(rec);
        Ok(())
    })?;
    if records.is_empty() {
        return Err(IngestError::Empty {
            context: format!("aod readings {}", path.display()),
        });
    }
    Ok(records)
}

/// Loads region centroids (`region_id,lat,lon`).
pub fn load_centroids(path: &Path) -> Result<BTreeMap<RegionId, RegionCentroid>> {
    let mut centroids = BTreeMap::new();
    for_each_row::<RegionCentroid, _>(path, |line, c| {
        if centroids.insert(c.region_id.clone(), c).is_some() {
            return Err(malformed(path, line, "duplicate region_id"));
        }
        Ok(())
    })?;
    if centroids.is_empty() {
        return Err(IngestError::Empty {
            context: format!("centroids {}", path.display()),
        });
    }
    Ok(centroids)
}

#[derive(Debug, Deserialize, Serialize)]
struct DischargeRow {
    region_id: String,
    iso_year: i32,
    iso_week: u32,
    count: i64,
}

/// Loads weekly discharge counts (`region_id,iso_year,iso_week,count`)
/// into one contiguous series per region. Counts must be non-negative;
/// a gap inside a region's range is an error. When `known_regions` is
/// given, rows for other regions are rejected.
pub fn load_discharges_csv(
    path: &Path,
    known_regions: Option<&BTreeSet<RegionId>>,
) -> Result<BTreeMap<RegionId, WeeklySeries>> {
    let mut pairs: BTreeMap<RegionId, Vec<(WeekId, f64)>> = BTreeMap::new();
    for_each_row::<DischargeRow, _>(path, |line, row| {
        let region = RegionId::new(row.region_id.clone());
        if let Some(known) = known_regions {
            if !known.contains(&region) {
                return Err(IngestError::UnknownRegion {
                    path: path.to_path_buf(),
                    line,
                    region: row.region_id,
                });
            }
        }
        if row.count < 0 {
            return Err(IngestError::NegativeCount {
                path: path.to_path_buf(),
                line,
                region: row.region_id,
                count: row.count,
            });
        }
        let week = WeekId::new(row.iso_year, row.iso_week)
            .map_err(|e| malformed(path, line, e))?;
        pairs.entry(region).or_default().push((week, row.count as f64));
        Ok(())
    })?;
    if pairs.is_empty() {
        return Err(IngestError::Empty {
            context: format!("discharges {}", path.display()),
        });
    }
    pairs
        .into_iter()
        .map(|(region, p)| WeeklySeries::from_pairs(region.clone(), p).map(|s| (region, s)))
        .collect()
}

/// Daily climate records for one region and one full ISO week, grouped
/// by cell.
#[derive(Debug, Clone)]
pub struct WeekGroup {
    pub week: WeekId,
    pub by_cell: BTreeMap<CellId, Vec<DailyClimateRecord>>,
}

/// Weekly-grouped climate plus counts of records dropped from partial
/// edge weeks.
#[derive(Debug, Clone)]
pub struct WeeklyClimate {
    pub groups: BTreeMap<RegionId, Vec<WeekGroup>>,
    pub dropped_leading: usize,
    pub dropped_trailing: usize,
}

/// Partitions a daily panel into full ISO weeks per region. A week is
/// kept only when all seven of its calendar days lie inside the region's
/// date span; partial leading/trailing weeks are dropped and logged.
pub fn aggregate_weekly(panel: &DailyClimatePanel) -> Result<WeeklyClimate> {
    let mut groups = BTreeMap::new();
    let mut dropped_leading = 0;
    let mut dropped_trailing = 0;
    for region in panel.regions() {
        let records = panel.region_records(region);
        let min_date = records.iter().map(|r| r.date).min().expect("non-empty");
        let max_date = records.iter().map(|r| r.date).max().expect("non-empty");

        // First week whose Monday is on/after min_date and last week
        // whose Sunday is on/before max_date.
        let mut first = WeekId::from_date(min_date);
        if first.monday() < min_date {
            first = first.next();
        }
        let mut last = WeekId::from_date(max_date);
        if last.sunday() > max_date {
            last = last.prev();
        }

        let mut region_groups: Vec<WeekGroup> = Vec::new();
        if first.monday() <= last.monday() {
            let range = WeekRange::new(first, last).expect("first <= last");
            let mut by_week: BTreeMap<WeekId, BTreeMap<CellId, Vec<DailyClimateRecord>>> =
                range.iter().map(|w| (w, BTreeMap::new())).collect();
            for rec in records {
                let week = WeekId::from_date(rec.date);
                match by_week.get_mut(&week) {
                    Some(cells) => cells
                        .entry(rec.cell_id.clone())
                        .or_default()
                        .push(rec.clone()),
                    None if rec.date < first.monday() => dropped_leading += 1,
                    None => dropped_trailing += 1,
                }
            }
            region_groups = by_week
                .into_iter()
                .map(|(week, by_cell)| WeekGroup { week, by_cell })
                .collect();
        } else {
            dropped_leading += records.len();
        }

        if region_groups.is_empty() {
            log::warn!(
                "region {region}: span {min_date}..{max_date} contains no full ISO week; all {} records dropped",
                records.len()
            );
        }
        groups.insert(region.clone(), region_groups);
    }
    if dropped_leading + dropped_trailing > 0 {
        log::warn!(
            "dropped {dropped_leading} leading and {dropped_trailing} trailing daily records in partial edge weeks"
        );
    }
    Ok(WeeklyClimate {
        groups,
        dropped_leading,
        dropped_trailing,
    })
}

fn euclid(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    ((lat1 - lat2).powi(2) + (lon1 - lon2).powi(2)).sqrt()
}

/// Aggregates daily site AOD into one weekly series per region centroid.
///
/// Each day's regional value is the inverse-distance weighted average of
/// the sites reporting that day, with weights `d^(-power)` on Euclidean
/// distance in degrees. A site coincident with the centroid dominates in
/// the limit, so its value is used exactly (coincident sites are
/// averaged). Weekly values are the mean over available days of a full
/// ISO week; a full week with no reporting site at all is an error.
pub fn aod_weekly_by_region(
    sites: &BTreeMap<SiteId, AodSite>,
    records: &[AodDailyRecord],
    centroids: &BTreeMap<RegionId, RegionCentroid>,
    power: f64,
) -> Result<BTreeMap<RegionId, WeeklySeries>> {
    if sites.is_empty() {
        return Err(IngestError::NoSites);
    }
    if !power.is_finite() || power < 0.0 {
        return Err(IngestError::BadIdwPower(power));
    }
    if records.is_empty() {
        return Err(IngestError::Empty {
            context: "aerosol readings".to_string(),
        });
    }

    let mut by_date: BTreeMap<NaiveDate, Vec<&AodDailyRecord>> = BTreeMap::new();
    for rec in records {
        if !sites.contains_key(&rec.site_id) {
            return Err(IngestError::UnknownSiteRef {
                path: Default::default(),
                line: 0,
                site: rec.site_id.to_string(),
            });
        }
        by_date.entry(rec.date).or_default().push(rec);
    }
    let min_date = *by_date.keys().next().expect("non-empty");
    let max_date = *by_date.keys().next_back().expect("non-empty");
    let mut first = WeekId::from_date(min_date);
    if first.monday() < min_date {
        first = first.next();
    }
    let mut last = WeekId::from_date(max_date);
    if last.sunday() > max_date {
        last = last.prev();
    }
    if first.monday() > last.monday() {
        return Err(IngestError::Empty {
            context: "aerosol span contains no full ISO week".to_string(),
        });
    }
    let weeks = WeekRange::new(first, last).expect("first <= last");

    let mut out = BTreeMap::new();
    for (region_id, centroid) in centroids {
        let mut values = Vec::with_capacity(weeks.len());
        let mut missing_days = 0usize;
        for week in weeks.iter() {
            let mut day_values = Vec::with_capacity(7);
            for offset in 0..7 {
                let date = week.monday() + chrono::Duration::days(offset);
                let Some(day_records) = by_date.get(&date) else {
                    missing_days += 1;
                    continue;
                };
                day_values.push(idw_value(day_records, sites, centroid, power));
            }
            if day_values.is_empty() {
                return Err(IngestError::MissingAodWeek {
                    region: region_id.to_string(),
                    week,
                });
            }
            values.push(day_values.iter().sum::<f64>() / day_values.len() as f64);
        }
        if missing_days > 0 {
            log::warn!(
                "region {region_id}: {missing_days} days without any aerosol reading; weekly means use available days"
            );
        }
        out.insert(
            region_id.clone(),
            WeeklySeries::from_start(region_id.clone(), first, values)?,
        );
    }
    Ok(out)
}

/// Inverse-distance weighted value of one day's site readings at a
/// centroid. Zero-distance sites take over exactly (their mean if there
/// are several), matching the limit of the weight function.
fn idw_value(
    day_records: &[&AodDailyRecord],
    sites: &BTreeMap<SiteId, AodSite>,
    centroid: &RegionCentroid,
    power: f64,
) -> f64 {
    let mut coincident = Vec::new();
    let mut num = 0.0;
    let mut den = 0.0;
    for rec in day_records {
        let site = &sites[&rec.site_id];
        let d = euclid(site.lat, site.lon, centroid.lat, centroid.lon);
        if d == 0.0 {
            coincident.push(rec.aod);
        } else {
            let w = d.powf(-power);
            num += w * rec.aod;
            den += w;
        }
    }
    if !coincident.is_empty() {
        coincident.iter().sum::<f64>() / coincident.len() as f64
    } else {
        num / den
    }
}

fn write_csv(path: &Path, content: String) -> Result<()> {
    crate::util::atomic_write(path, content.as_bytes()).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a climate panel back to CSV; `load_climate_csv` reads the
/// result without loss ({} formatting round-trips every f64 exactly).
pub fn write_climate_csv(path: &Path, panel: &DailyClimatePanel) -> Result<()> {
    let mut rows: Vec<&DailyClimateRecord> = panel
        .regions()
        .flat_map(|r| panel.region_records(r).iter())
        .collect();
    rows.sort_by(|a, b| (&a.cell_id, a.date).cmp(&(&b.cell_id, b.date)));
    let mut out = String::from("cell_id,date,tmax,tmin,precip\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.cell_id, r.date, r.tmax, r.tmin, r.precip
        ));
    }
    write_csv(path, out)
}

pub fn write_cell_map_csv(path: &Path, cells: &BTreeMap<CellId, GridCell>) -> Result<()> {
    let mut out = String::from("cell_id,lat,lon,region_id\n");
    for cell in cells.values() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            cell.cell_id, cell.lat, cell.lon, cell.region_id
        ));
    }
    write_csv(path, out)
}

pub fn write_aod_sites_csv(path: &Path, sites: &BTreeMap<SiteId, AodSite>) -> Result<()> {
    let mut out = String::from("site_id,lat,lon\n");
    for site in sites.values() {
        out.push_str(&format!("{},{},{}\n", site.site_id, site.lat, site.lon));
    }
    write_csv(path, out)
}

pub fn write_aod_daily_csv(path: &Path, records: &[AodDailyRecord]) -> Result<()> {
    let mut rows: Vec<&AodDailyRecord> = records.iter().collect();
    rows.sort_by(|a, b| (&a.site_id, a.date).cmp(&(&b.site_id, b.date)));
    let mut out = String::from("site_id,date,aod\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.site_id, r.date, r.aod));
    }
    write_csv(path, out)
}

pub fn write_centroids_csv(
    path: &Path,
    centroids: &BTreeMap<RegionId, RegionCentroid>,
) -> Result<()> {
    let mut out = String::from("region_id,lat,lon\n");
    for c in centroids.values() {
        out.push_str(&format!("{},{},{}\n", c.region_id, c.lat, c.lon));
    }
    write_csv(path, out)
}

pub fn write_discharges_csv(
    path: &Path,
    series: &BTreeMap<RegionId, WeeklySeries>,
) -> Result<()> {
    let mut out = String::from("region_id,iso_year,iso_week,count\n");
    for (region, s) in series {
        for (week, value) in s.iter() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                region, week.year, week.week, value as i64
            ));
        }
    }
    write_csv(path, out)
}
