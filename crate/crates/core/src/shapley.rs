//! Shapley-value attribution: a Monte Carlo permutation estimator for
//! production use, an exact enumerator for small feature counts, and
//! the aggregation of per-row attributions into a global percentage
//! table.
//!
//! The value function marginalizes absent features over a background
//! sample: features "out of coalition" take their values from
//! background rows rather than being dropped.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::ShapError;

type Result<T> = std::result::Result<T, ShapError>;

/// Per-feature contributions for one explained row.
#[derive(Debug, Clone)]
pub struct Attribution {
    /// Caller-assigned identifier of the explained row (position in the
    /// explained set); the estimators themselves leave it at 0.
    pub instance: usize,
    pub phi: Vec<f64>,
    /// Expected prediction over the background sample.
    pub baseline: f64,
    /// Model output at the explained row.
    pub prediction: f64,
    /// Monte Carlo standard error per feature; zero for exact results.
    pub std_err: Vec<f64>,
}

fn check_background(instance: &[f64], background: &[Vec<f64>]) -> Result<()> {
    if background.is_empty() {
        return Err(ShapError::EmptyBackground);
    }
    for row in background {
        if row.len() != instance.len() {
            return Err(ShapError::LengthMismatch {
                instance: instance.len(),
                background: row.len(),
            });
        }
    }
    Ok(())
}

/// The permutation sampling estimator: each draw picks a random feature
/// order and a random background row, then walks the order switching
/// one feature at a time from the background value to the instance
/// value; the prediction delta of each switch is credited to the
/// switched feature. Deterministic given `seed`.
pub fn shapley_sampling(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    instance: &[f64],
    background: &[Vec<f64>],
    n_samples: usize,
    seed: u64,
) -> Result<Attribution> {
    check_background(instance, background)?;
    if n_samples == 0 {
        return Err(ShapError::NoSamples);
    }
    let d = instance.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums = vec![0.0; d];
    let mut sq_sums = vec![0.0; d];
    let mut perm: Vec<usize> = (0..d).collect();
    for _ in 0..n_samples {
        let z = &background[rng.gen_range(0..background.len())];
        perm.shuffle(&mut rng);
        let mut current = z.clone();
        let mut prev = f(&current);
        for &j in &perm {
            current[j] = instance[j];
            let next = f(&current);
            let delta = next - prev;
            sums[j] += delta;
            sq_sums[j] += delta * delta;
            prev = next;
        }
    }
    let n = n_samples as f64;
    let phi: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let std_err: Vec<f64> = phi
        .iter()
        .zip(&sq_sums)
        .map(|(mean, sq)| {
            let var = (sq / n - mean * mean).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    let baseline = background.iter().map(|z| f(z)).sum::<f64>() / background.len() as f64;
    Ok(Attribution {
        instance: 0,
        phi,
        baseline,
        prediction: f(instance),
        std_err,
    })
}

/// Exact Shapley values by enumerating all 2^d coalitions, feasible up
/// to 12 features. The value of a coalition is the mean prediction over
/// background rows with the coalition's features set to the instance.
pub fn exact_shapley(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    instance: &[f64],
    background: &[Vec<f64>],
) -> Result<Attribution> {
    check_background(instance, background)?;
    let d = instance.len();
    if d > 12 {
        return Err(ShapError::TooManyFeatures(d));
    }
    let m = background.len() as f64;
    let n_masks = 1usize << d;
    let mut value = vec![0.0; n_masks];
    for (mask, v) in value.iter_mut().enumerate() {
        let mut sum = 0.0;
        for z in background {
            let mut row = z.clone();
            for (j, x) in instance.iter().enumerate() {
                if mask & (1 << j) != 0 {
                    row[j] = *x;
                }
            }
            sum += f(&row);
        }
        *v = sum / m;
    }

    let mut factorial = [1.0f64; 13];
    for i in 1..=12 {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let mut phi = vec![0.0; d];
    for mask in 0..n_masks {
        let s = mask.count_ones() as usize;
        for j in 0..d {
            if mask & (1 << j) == 0 {
                let weight = factorial[s] * factorial[d - s - 1] / factorial[d];
                phi[j] += weight * (value[mask | (1 << j)] - value[mask]);
            }
        }
    }
    Ok(Attribution {
        instance: 0,
        phi,
        baseline: value[0],
        prediction: value[n_masks - 1],
        std_err: vec![0.0; d],
    })
}

/// Feature importance across a set of explained rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalImportance {
    /// Per-feature share of total attribution mass, in percent;
    /// non-negative and summing to 100.
    pub percent: Vec<f64>,
}

impl GlobalImportance {
    /// Report view: percentages at or above `threshold` (in percent);
    /// smaller entries are blanked.
    pub fn rendered(&self, threshold: f64) -> Vec<Option<f64>> {
        self.percent
            .iter()
            .map(|&p| if p >= threshold { Some(p) } else { None })
            .collect()
    }
}

/// Aggregates local attributions into a global table: the mean absolute
/// contribution of each feature, normalized to percentages.
pub fn global_importance(attributions: &[Attribution]) -> Result<GlobalImportance> {
    let first = attributions.first().ok_or(ShapError::NoAttributions)?;
    let d = first.phi.len();
    let mut mean_abs = vec![0.0; d];
    for a in attributions {
        if a.phi.len() != d {
            return Err(ShapError::LengthMismatch {
                instance: d,
                background: a.phi.len(),
            });
        }
        for (acc, p) in mean_abs.iter_mut().zip(&a.phi) {
            *acc += p.abs();
        }
    }
    let total: f64 = mean_abs.iter().sum();
    if total == 0.0 {
        return Err(ShapError::AllZero);
    }
    Ok(GlobalImportance {
        percent: mean_abs.iter().map(|v| 100.0 * v / total).collect(),
    })
}

/// Picks at most `max` distinct row indices out of `n_rows`, sorted
/// ascending; used to thin the background set deterministically.
pub fn subsample_rows(n_rows: usize, max: usize, seed: u64) -> Vec<usize> {
    if n_rows <= max {
        return (0..n_rows).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n_rows, max).into_vec();
    picked.sort_unstable();
    picked
}
