//! Run configuration: a small `key = value` text format with full-line
//! `#` comments, strict key checking, and file-existence validation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{ConfigError, Error, Result};
use crate::features::BaselineScope;
use crate::metrics::RatioConvention;
use crate::model::LearnerKind;
use crate::pipeline::{
    default_grids, HyperBundle, HyperGrid, Split, WindowPlan,
};
use crate::additive::AdditiveParams;
use crate::trees::{BoostParams, ForestParams};
use crate::week::{WeekId, WeekRange};

/// The six input files every run reads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputPaths {
    pub climate: PathBuf,
    pub cells: PathBuf,
    pub aod_sites: PathBuf,
    pub aod_daily: PathBuf,
    pub centroids: PathBuf,
    pub discharges: PathBuf,
}

impl InputPaths {
    fn entries(&self) -> [(&'static str, &PathBuf); 6] {
        [
            ("climate", &self.climate),
            ("cells", &self.cells),
            ("aod_sites", &self.aod_sites),
            ("aod_daily", &self.aod_daily),
            ("centroids", &self.centroids),
            ("discharges", &self.discharges),
        ]
    }
}

/// Everything a run needs beyond the input data itself.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub paths: InputPaths,
    pub out_dir: PathBuf,
    pub split: Split,
    /// Percentile-threshold fitting period for the climate indices.
    pub baseline: WeekRange,
    pub baseline_scope: BaselineScope,
    pub alpha: f64,
    pub aod_lag: usize,
    pub ccf_max_lag: usize,
    pub idw_power: f64,
    pub master_seed: u64,
    pub n_trees: usize,
    pub plan: WindowPlan,
    pub grids: Vec<HyperGrid>,
    pub convention: RatioConvention,
    pub shapley_samples: usize,
    pub shapley_background: usize,
    /// Importance percentages below this are blanked in reports.
    pub importance_threshold: f64,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub convention: Option<RatioConvention>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.master_seed = seed;
        }
        if let Some(alpha) = overrides.alpha {
            self.alpha = alpha;
        }
        if let Some(convention) = overrides.convention {
            self.convention = convention;
        }
        if let Some(out) = &overrides.out {
            self.out_dir = out.clone();
        }
    }

    /// Checks value ranges and that every referenced input file exists.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config(ConfigError::BadValue {
                key: key.to_string(),
                message,
            }))
        };
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", format!("{} is not inside (0, 1)", self.alpha));
        }
        if !(self.idw_power.is_finite() && self.idw_power > 0.0) {
            return bad("idw_power", format!("{} must be positive", self.idw_power));
        }
        if self.n_trees == 0 {
            return bad("n_trees", "must be at least 1".to_string());
        }
        if self.ccf_max_lag == 0 {
            return bad("ccf_max_lag", "must be at least 1".to_string());
        }
        if !(self.importance_threshold >= 0.0) {
            return bad(
                "importance_threshold",
                format!("{} must be non-negative", self.importance_threshold),
            );
        }
        for grid in &self.grids {
            grid.validate().map_err(Error::Pipeline)?;
        }
        for (key, path) in self.paths.entries() {
            if !path.is_file() {
                let _ = key;
                return Err(Error::Config(ConfigError::MissingFile(path.clone())));
            }
        }
        Ok(())
    }
}

fn parse_lines(path: &Path, text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(ConfigError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                text: raw.to_string(),
                message: "expected `key = value`".to_string(),
            })
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if value.is_empty() {
            return Err(Error::Config(ConfigError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                text: raw.to_string(),
                message: "empty value".to_string(),
            }));
        }
        if map.insert(key.clone(), (line_no, value)).is_some() {
            return Err(Error::Config(ConfigError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                text: raw.to_string(),
                message: format!("duplicate key `{key}`"),
            }));
        }
    }
    Ok(map)
}

const KNOWN_KEYS: &[&str] = &[
    "climate",
    "cells",
    "aod_sites",
    "aod_daily",
    "centroids",
    "discharges",
    "out_dir",
    "train_start",
    "train_end",
    "test_start",
    "test_end",
    "baseline_start",
    "baseline_end",
    "baseline_scope",
    "alpha",
    "aod_lag",
    "ccf_max_lag",
    "idw_power",
    "master_seed",
    "n_trees",
    "window_analysis",
    "window_assessment",
    "window_step",
    "convention",
    "shapley_samples",
    "shapley_background",
    "importance_threshold",
    "rf_mtry",
    "rf_min_n",
    "gbt_mtry",
    "gbt_min_n",
    "gbt_tree_depth",
    "gbt_learn_rate",
    "gbt_loss_reduction",
    "gbt_sample_size",
    "prophet_scale_changepoints",
    "prophet_scale_seasonality",
];

struct Reader<'a> {
    map: BTreeMap<String, (usize, String)>,
    dir: &'a Path,
}

impl Reader<'_> {
    fn bad(&self, key: &str, message: impl std::fmt::Display) -> Error {
        Error::Config(ConfigError::BadValue {
            key: key.to_string(),
            message: message.to_string(),
        })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key).map(|(_, v)| v)
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| Error::Config(ConfigError::MissingKey(key.to_string())))
    }

    /// Paths are resolved relative to the config file's directory.
    fn path(&mut self, key: &str) -> Result<PathBuf> {
        let raw = self.require(key)?;
        let p = PathBuf::from(raw);
        Ok(if p.is_absolute() {
            p
        } else {
            self.dir.join(p)
        })
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, value: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        value.parse::<T>().map_err(|e| self.bad(key, e))
    }

    fn scalar_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            Some(v) => self.parse(key, &v),
            None => Ok(default),
        }
    }

    fn week(&mut self, key: &str, default: WeekId) -> Result<WeekId> {
        self.scalar_or(key, default)
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|item| self.parse(key, item.trim()))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }
}

fn week_range(start: WeekId, end: WeekId) -> Result<WeekRange> {
    WeekRange::new(start, end).map_err(Error::Week)
}

/// Builds learner grids, replacing any axis the config overrode.
fn build_grids(reader: &mut Reader, n_trees: usize) -> Result<Vec<HyperGrid>> {
    let mut grids = default_grids(n_trees);

    let rf_mtry: Option<Vec<usize>> = reader.list("rf_mtry")?;
    let rf_min_n: Option<Vec<usize>> = reader.list("rf_min_n")?;
    if rf_mtry.is_some() || rf_min_n.is_some() {
        let defaults = (
            vec![12usize, 15, 17, 20, 22, 25],
            vec![22usize, 30, 37, 40],
        );
        let mtry = rf_mtry.unwrap_or(defaults.0);
        let min_n = rf_min_n.unwrap_or(defaults.1);
        let mut bundles = Vec::new();
        for &m in &mtry {
            for &n in &min_n {
                bundles.push(HyperBundle::Forest(ForestParams {
                    n_trees,
                    mtry: m,
                    min_n: n,
                    seed: 0,
                }));
            }
        }
        grids[0] = HyperGrid {
            kind: LearnerKind::RandomForest,
            bundles,
        };
    }

    let gbt_keys = [
        "gbt_mtry",
        "gbt_min_n",
        "gbt_tree_depth",
        "gbt_learn_rate",
        "gbt_loss_reduction",
        "gbt_sample_size",
    ];
    let gbt_mtry: Option<Vec<usize>> = reader.list(gbt_keys[0])?;
    let gbt_min_n: Option<Vec<usize>> = reader.list(gbt_keys[1])?;
    let gbt_depth: Option<Vec<usize>> = reader.list(gbt_keys[2])?;
    let gbt_rate: Option<Vec<f64>> = reader.list(gbt_keys[3])?;
    let gbt_gamma: Option<Vec<f64>> = reader.list(gbt_keys[4])?;
    let gbt_sample: Option<Vec<f64>> = reader.list(gbt_keys[5])?;
    let any_gbt = [
        gbt_mtry.is_some(),
        gbt_min_n.is_some(),
        gbt_depth.is_some(),
        gbt_rate.is_some(),
        gbt_gamma.is_some(),
        gbt_sample.is_some(),
    ];
    if any_gbt.iter().any(|b| *b) {
        // Boosted bundles are given as parallel lists (one profile per
        // position), so all six lists must be present and equal-length.
        if !any_gbt.iter().all(|b| *b) {
            return Err(reader.bad(
                "gbt_*",
                "boosting profiles need all six gbt_ keys together",
            ));
        }
        let (mtry, min_n, depth) = (gbt_mtry.unwrap(), gbt_min_n.unwrap(), gbt_depth.unwrap());
        let (rate, gamma, sample) = (gbt_rate.unwrap(), gbt_gamma.unwrap(), gbt_sample.unwrap());
        let len = mtry.len();
        if [min_n.len(), depth.len(), rate.len(), gamma.len(), sample.len()]
            .iter()
            .any(|l| *l != len)
        {
            return Err(reader.bad("gbt_*", "the six gbt_ lists must have equal lengths"));
        }
        let bundles = (0..len)
            .map(|i| {
                HyperBundle::Boosted(BoostParams {
                    n_trees,
                    mtry: mtry[i],
                    min_n: min_n[i],
                    tree_depth: depth[i],
                    learn_rate: rate[i],
                    loss_reduction: gamma[i],
                    sample_size: sample[i],
                    l2_reg: 1.0,
                    seed: 0,
                })
            })
            .collect();
        grids[1] = HyperGrid {
            kind: LearnerKind::GradientBoosting,
            bundles,
        };
    }

    let ps_cp: Option<Vec<f64>> = reader.list("prophet_scale_changepoints")?;
    let ps_seas: Option<Vec<f64>> = reader.list("prophet_scale_seasonality")?;
    if ps_cp.is_some() || ps_seas.is_some() {
        let cp = ps_cp.unwrap_or_else(|| vec![1.0, 1.778, 3.162]);
        let seas = ps_seas.unwrap_or_else(|| vec![1.0, 1.778, 3.162, 5.623, 10.0]);
        let mut bundles = Vec::new();
        for &c in &cp {
            for &s in &seas {
                bundles.push(HyperBundle::Additive(AdditiveParams {
                    prior_scale_changepoints: c,
                    prior_scale_seasonality: s,
                    ..AdditiveParams::default()
                }));
            }
        }
        grids[2] = HyperGrid {
            kind: LearnerKind::Additive,
            bundles,
        };
    }
    Ok(grids)
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| {
        Error::Config(ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })
    })?;
    let map = parse_lines(path, &text)?;
    for key in map.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(ConfigError::UnknownKey(key.clone())));
        }
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = Reader { map, dir };

    let paths = InputPaths {
        climate: reader.path("climate")?,
        cells: reader.path("cells")?,
        aod_sites: reader.path("aod_sites")?,
        aod_daily: reader.path("aod_daily")?,
        centroids: reader.path("centroids")?,
        discharges: reader.path("discharges")?,
    };
    let out_dir = {
        let raw = reader.take("out_dir").unwrap_or_else(|| "out".to_string());
        let p = PathBuf::from(raw);
        if p.is_absolute() {
            p
        } else {
            dir.join(p)
        }
    };

    let train_start = reader.week("train_start", WeekId::new(2001, 1).unwrap())?;
    let train_end = reader.week("train_end", WeekId::new(2018, 52).unwrap())?;
    let test_start = reader.week("test_start", WeekId::new(2019, 1).unwrap())?;
    let test_end = reader.week("test_end", WeekId::new(2019, 52).unwrap())?;
    let split = Split::new(
        week_range(train_start, train_end)?,
        week_range(test_start, test_end)?,
    )
    .map_err(Error::Pipeline)?;

    let baseline_start = reader.week("baseline_start", train_start)?;
    let baseline_end = reader.week("baseline_end", train_end)?;
    let baseline = week_range(baseline_start, baseline_end)?;
    let baseline_scope = match reader.take("baseline_scope") {
        None => BaselineScope::PerCell,
        Some(v) => match v.as_str() {
            "per_cell" => BaselineScope::PerCell,
            "pooled" => BaselineScope::Pooled,
            other => {
                return Err(reader.bad(
                    "baseline_scope",
                    format!("unknown scope {other:?} (per_cell|pooled)"),
                ))
            }
        },
    };

    let alpha = reader.scalar_or("alpha", 0.05)?;
    let aod_lag = reader.scalar_or("aod_lag", 10)?;
    let ccf_max_lag = reader.scalar_or("ccf_max_lag", 20)?;
    let idw_power = reader.scalar_or("idw_power", 1.0)?;
    let master_seed = reader.scalar_or("master_seed", 42u64)?;
    let n_trees = reader.scalar_or("n_trees", 1000)?;
    let plan = WindowPlan {
        analysis_len: reader.scalar_or("window_analysis", 104)?,
        assessment_len: reader.scalar_or("window_assessment", 52)?,
        step: reader.scalar_or("window_step", 52)?,
    };
    let convention = match reader.take("convention") {
        None => RatioConvention::Table,
        Some(v) => v
            .parse::<RatioConvention>()
            .map_err(|e| reader.bad("convention", e))?,
    };
    let shapley_samples = reader.scalar_or("shapley_samples", 1000)?;
    let shapley_background = reader.scalar_or("shapley_background", 256)?;
    let importance_threshold = reader.scalar_or("importance_threshold", 1.0)?;
    let grids = build_grids(&mut reader, n_trees)?;

    debug_assert!(reader.map.is_empty(), "all known keys consumed");

    let config = RunConfig {
        paths,
        out_dir,
        split,
        baseline,
        baseline_scope,
        alpha,
        aod_lag,
        ccf_max_lag,
        idw_power,
        master_seed,
        n_trees,
        plan,
        grids,
        convention,
        shapley_samples,
        shapley_background,
        importance_threshold,
    };
    config.validate()?;
    Ok(config)
}

/// Renders a ready-to-run config for a generated dataset; paths are
/// written relative to the config file's own directory.
pub fn render_config(start_year: i32, end_year: i32) -> String {
    let test_year = end_year;
    let train_end = end_year - 1;
    format!(
        "# Auto-generated run configuration for the synthetic dataset.\n\
         climate = climate.csv\n\
         cells = cells.csv\n\
         aod_sites = aod_sites.csv\n\
         aod_daily = aod_daily.csv\n\
         centroids = centroids.csv\n\
         discharges = discharges.csv\n\
         out_dir = out\n\
         train_start = {start_year}-W01\n\
         train_end = {train_end}-W52\n\
         test_start = {test_year}-W01\n\
         test_end = {test_year}-W52\n\
         alpha = 0.05\n\
         aod_lag = 10\n\
         master_seed = 42\n\
         n_trees = 1000\n\
         convention = table\n"
    )
}
