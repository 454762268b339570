//! A single wrapper over the three learner families (and their
//! ensemble) with one prediction interface and one on-disk format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::additive::{predict_additive, AdditiveModel};
use crate::error::ModelError;
use crate::features::FeatureMatrix;
use crate::trees::FittedTreeModel;
use crate::util::atomic_write;

type Result<T> = std::result::Result<T, ModelError>;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// The four methods reports know how to talk about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LearnerKind {
    RandomForest,
    GradientBoosting,
    Additive,
    Ensemble,
}

impl LearnerKind {
    /// The label used in evaluation tables and file names.
    pub fn label(&self) -> &'static str {
        match self {
            LearnerKind::RandomForest => "RF",
            LearnerKind::GradientBoosting => "XGBOOST",
            LearnerKind::Additive => "PROPHET",
            LearnerKind::Ensemble => "ENSEMBLE",
        }
    }

    pub fn all() -> [LearnerKind; 4] {
        [
            LearnerKind::RandomForest,
            LearnerKind::GradientBoosting,
            LearnerKind::Additive,
            LearnerKind::Ensemble,
        ]
    }
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "RF" => Ok(LearnerKind::RandomForest),
            "XGBOOST" => Ok(LearnerKind::GradientBoosting),
            "PROPHET" => Ok(LearnerKind::Additive),
            "ENSEMBLE" => Ok(LearnerKind::Ensemble),
            other => Err(format!(
                "unknown method {other:?} (RF|XGBOOST|PROPHET|ENSEMBLE)"
            )),
        }
    }
}

/// An additive model bound to the feature-matrix columns it reads: the
/// week counter column plus its regressors by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveForecaster {
    pub model: AdditiveModel,
    pub time_column: String,
}

impl AdditiveForecaster {
    pub fn predict_matrix(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        let t_col = matrix
            .col_index(&self.time_column)
            .map_err(|_| ModelError::MissingColumn(self.time_column.clone()))?;
        let t: Vec<f64> = matrix.column(t_col);
        let mut regressors = Vec::new();
        for scale in &self.model.regressors {
            let j = matrix
                .col_index(&scale.name)
                .map_err(|_| ModelError::MissingColumn(scale.name.clone()))?;
            regressors.push((scale.name.clone(), matrix.column(j)));
        }
        predict_additive(&self.model, &t, &regressors)
    }
}

/// Any fitted model, ready to predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedModel {
    Forest(FittedTreeModel),
    Boosted(FittedTreeModel),
    Additive(AdditiveForecaster),
    /// Pointwise mean of its members' predictions.
    Ensemble(Vec<FittedModel>),
}

impl FittedModel {
    pub fn kind(&self) -> LearnerKind {
        match self {
            FittedModel::Forest(_) => LearnerKind::RandomForest,
            FittedModel::Boosted(_) => LearnerKind::GradientBoosting,
            FittedModel::Additive(_) => LearnerKind::Additive,
            FittedModel::Ensemble(_) => LearnerKind::Ensemble,
        }
    }

    /// Predicts every row of `matrix`, matching features by column name.
    pub fn predict_matrix(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        match self {
            FittedModel::Forest(m) | FittedModel::Boosted(m) => m.predict_matrix(matrix),
            FittedModel::Additive(m) => m.predict_matrix(matrix),
            FittedModel::Ensemble(members) => {
                if members.is_empty() {
                    return Err(ModelError::InvalidParams(
                        "ensemble with no members".to_string(),
                    ));
                }
                let mut acc = vec![0.0; matrix.n_rows()];
                for member in members {
                    for (a, p) in acc.iter_mut().zip(member.predict_matrix(matrix)?) {
                        *a += p;
                    }
                }
                let k = members.len() as f64;
                Ok(acc.into_iter().map(|v| v / k).collect())
            }
        }
    }

    /// Binds this model to a fixed column layout and returns a
    /// prediction closure over rows in that layout. Row-at-a-time
    /// callers (attribution) use this to avoid re-resolving names.
    pub fn row_predictor<'a>(
        &'a self,
        names: &[String],
    ) -> Result<Box<dyn Fn(&[f64]) -> f64 + Sync + Send + 'a>> {
        let position = |wanted: &str| {
            names
                .iter()
                .position(|n| n == wanted)
                .ok_or_else(|| ModelError::MissingColumn(wanted.to_string()))
        };
        match self {
            FittedModel::Forest(m) | FittedModel::Boosted(m) => {
                let perm: Vec<usize> = m
                    .feature_names
                    .iter()
                    .map(|n| position(n))
                    .collect::<Result<_>>()?;
                Ok(Box::new(move |row: &[f64]| {
                    let reordered: Vec<f64> = perm.iter().map(|&j| row[j]).collect();
                    m.predict_one(&reordered)
                }))
            }
            FittedModel::Additive(f) => {
                let t_idx = position(&f.time_column)?;
                let reg_idx: Vec<usize> = f
                    .model
                    .regressors
                    .iter()
                    .map(|s| position(&s.name))
                    .collect::<Result<_>>()?;
                let model = &f.model;
                Ok(Box::new(move |row: &[f64]| {
                    let t = row[t_idx];
                    let mut v = model.trend_value(t);
                    let k_max = model.params.fourier_order;
                    let mut col = 2 + model.knots.len();
                    for k in 1..=k_max {
                        let w = 2.0 * std::f64::consts::PI * k as f64 / model.params.period_weeks;
                        v += model.coefficients[col] * (w * t).sin();
                        v += model.coefficients[col + 1] * (w * t).cos();
                        col += 2;
                    }
                    for (scale, &j) in model.regressors.iter().zip(&reg_idx) {
                        v += model.coefficients[col] * (row[j] - scale.mean) / scale.sd;
                        col += 1;
                    }
                    v
                }))
            }
            FittedModel::Ensemble(members) => {
                let fs: Vec<_> = members
                    .iter()
                    .map(|m| m.row_predictor(names))
                    .collect::<Result<_>>()?;
                if fs.is_empty() {
                    return Err(ModelError::InvalidParams(
                        "ensemble with no members".to_string(),
                    ));
                }
                let k = fs.len() as f64;
                Ok(Box::new(move |row: &[f64]| {
                    fs.iter().map(|f| f(row)).sum::<f64>() / k
                }))
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    model: FittedModel,
}

/// Writes the model as a versioned JSON document (atomically).
pub fn save_model(model: &FittedModel, path: &Path) -> Result<()> {
    let doc = ModelDocument {
        format_version: MODEL_FORMAT_VERSION,
        model: model.clone(),
    };
    let bytes = serde_json::to_vec_pretty(&doc).map_err(|e| ModelError::Save {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    atomic_write(path, &bytes).map_err(|e| ModelError::Save {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads a model document back, checking the format version before
/// interpreting the payload.
pub fn load_model(path: &Path) -> Result<FittedModel> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| ModelError::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let got = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| ModelError::Load {
            path: path.to_path_buf(),
            message: "missing format_version".to_string(),
        })? as u32;
    if got != MODEL_FORMAT_VERSION {
        return Err(ModelError::UnsupportedVersion {
            got,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let doc: ModelDocument = serde_json::from_value(value).map_err(|e| ModelError::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(doc.model)
}
