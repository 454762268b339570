//! Forecast scoring: MSE, MAE, the interval score, train/test relative
//! ratios in two conventions, and the rule that picks one method per
//! region.

use serde::{Deserialize, Serialize};

use crate::error::MetricError;
use crate::ingest::RegionId;

type Result<T> = std::result::Result<T, MetricError>;

/// How a train/test score pair is turned into a "relative" percentage.
///
/// Published summaries of this kind of pipeline have used both forms,
/// sometimes inconsistently within one document: the displayed formula
/// `test/train` and tabulated values that actually satisfy
/// `100·train/test`. Both are supported; `Table` is the default because
/// it is the form the reference tables obey.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RatioConvention {
    /// 100·train/test.
    #[default]
    Table,
    /// test/train.
    Text,
}

impl std::fmt::Display for RatioConvention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RatioConvention::Table => write!(f, "table"),
            RatioConvention::Text => write!(f, "text"),
        }
    }
}

impl std::str::FromStr for RatioConvention {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "table" => Ok(RatioConvention::Table),
            "text" => Ok(RatioConvention::Text),
            other => Err(format!("unknown ratio convention {other:?} (table|text)")),
        }
    }
}

fn check_lengths(observed: &[f64], predicted: &[f64]) -> Result<()> {
    if observed.len() != predicted.len() {
        return Err(MetricError::LengthMismatch {
            observed: observed.len(),
            predicted: predicted.len(),
        });
    }
    if observed.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Mean squared error.
pub fn mse(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(observed, predicted)?;
    let sum: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(o, p)| (o - p).powi(2))
        .sum();
    Ok(sum / observed.len() as f64)
}

/// Mean absolute error.
pub fn mae(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(observed, predicted)?;
    let sum: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(o, p)| (o - p).abs())
        .sum();
    Ok(sum / observed.len() as f64)
}

/// Mean interval score of a (1−alpha) prediction interval.
///
/// Per observation: the interval width, plus `2/(1−alpha)` times the
/// distance to the violated bound when the observation falls strictly
/// outside. An observation exactly on a bound incurs no penalty.
pub fn interval_score(observed: &[f64], lower: &[f64], upper: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MetricError::BadAlpha(alpha));
    }
    check_lengths(observed, lower)?;
    check_lengths(observed, upper)?;
    let penalty = 2.0 / (1.0 - alpha);
    let mut total = 0.0;
    for (index, ((&hd, &l), &u)) in observed.iter().zip(lower).zip(upper).enumerate() {
        if l > u {
            return Err(MetricError::CrossedBounds {
                index,
                lower: l,
                upper: u,
            });
        }
        total += u - l;
        if hd < l {
            total += penalty * (l - hd);
        } else if hd > u {
            total += penalty * (hd - u);
        }
    }
    Ok(total / observed.len() as f64)
}

/// One train/test score pair turned into a relative percentage (table)
/// or plain ratio (text).
pub fn relative_ratio(train: f64, test: f64, convention: RatioConvention) -> Result<f64> {
    match convention {
        RatioConvention::Table => {
            if test <= 0.0 {
                return Err(MetricError::ZeroDenominator {
                    context: format!("test score {test}"),
                });
            }
            Ok(100.0 * train / test)
        }
        RatioConvention::Text => {
            if train <= 0.0 {
                return Err(MetricError::ZeroDenominator {
                    context: format!("train score {train}"),
                });
            }
            Ok(test / train)
        }
    }
}

/// Relative MSE and relative IS from (mse, is) train/test pairs.
pub fn relative_ratios(
    train: (f64, f64),
    test: (f64, f64),
    convention: RatioConvention,
) -> Result<(f64, f64)> {
    Ok((
        relative_ratio(train.0, test.0, convention)?,
        relative_ratio(train.1, test.1, convention)?,
    ))
}

/// All scores for one method in one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub method: String,
    pub mse_test: f64,
    pub mae_test: f64,
    pub is_test: f64,
    pub mse_train: f64,
    pub mae_train: f64,
    pub is_train: f64,
    /// Relative ratios in the report's output convention.
    pub mse_rel: f64,
    pub mae_rel: f64,
    pub is_rel: f64,
    pub selected: bool,
}

/// The per-region rows of the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEvaluation {
    pub region_id: RegionId,
    pub rows: Vec<MethodScores>,
    /// True when no method cleared the overfitting bar and the
    /// selection fell back to the smallest test IS outright.
    pub relaxed: bool,
}

/// Picks the method with the smallest test-period interval score among
/// those whose relative IS exceeds 80% — computed as `100·train/test`
/// regardless of the report's display convention. When no method
/// qualifies, falls back to the smallest test IS overall and reports
/// the relaxation. Returns the index into `rows`.
pub fn select_model(rows: &[MethodScores]) -> Result<(usize, bool)> {
    if rows.is_empty() {
        return Err(MetricError::NoCandidates);
    }
    let qualifies = |row: &MethodScores| 100.0 * row.is_train / row.is_test > 80.0;
    let argmin = |indices: &mut dyn Iterator<Item = usize>| {
        indices.min_by(|&a, &b| rows[a].is_test.total_cmp(&rows[b].is_test))
    };
    if let Some(best) = argmin(&mut (0..rows.len()).filter(|&i| qualifies(&rows[i]))) {
        Ok((best, false))
    } else {
        let best = argmin(&mut (0..rows.len())).expect("non-empty rows");
        Ok((best, true))
    }
}
