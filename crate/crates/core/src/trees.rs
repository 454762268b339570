//! Regression-tree learners: a bootstrapped random forest and
//! second-order gradient-boosted trees, both built on one shared CART
//! split search.
//!
//! Everything here is deterministic given a seed. Randomness flows
//! through per-tree (or per-round) substreams of a counter-based
//! generator, so changing the tree count never perturbs the trees that
//! were already grown.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::features::FeatureMatrix;

type Result<T> = std::result::Result<T, ModelError>;

/// A binary regression tree. Rows with `row[feature] <= threshold` go
/// left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            TreeNode::Leaf { value } => *value,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if row[*feature] <= *threshold {
                    left.predict(row)
                } else {
                    right.predict(row)
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

/// Random-forest hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features sampled (afresh) at every split.
    pub mtry: usize,
    /// Minimum rows in any node created by a split.
    pub min_n: usize,
    pub seed: u64,
}

/// Gradient-boosting hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_trees: usize,
    pub mtry: usize,
    pub min_n: usize,
    pub tree_depth: usize,
    pub learn_rate: f64,
    /// Minimum gain a split must strictly exceed.
    pub loss_reduction: f64,
    /// Row-subsample fraction per round, drawn without replacement.
    pub sample_size: f64,
    /// L2 penalty on leaf values.
    pub l2_reg: f64,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            n_trees: 1000,
            mtry: 10,
            min_n: 10,
            tree_depth: 6,
            learn_rate: 0.1,
            loss_reduction: 0.0,
            sample_size: 1.0,
            l2_reg: 1.0,
            seed: 0,
        }
    }
}

/// Which learner produced a fitted model, with its parameter snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeModelKind {
    Forest(ForestParams),
    Boosted(BoostParams),
}

/// A fitted tree ensemble. Forest predictions average the trees;
/// boosted predictions are `base_score + Σ learn_rate · tree(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedTreeModel {
    pub kind: TreeModelKind,
    pub trees: Vec<TreeNode>,
    pub base_score: f64,
    pub feature_names: Vec<String>,
    /// Training MSE after each boosting round; empty for forests.
    #[serde(skip)]
    pub train_mse_per_round: Vec<f64>,
}

impl FittedTreeModel {
    /// Predicts one row given in the model's own feature order.
    pub fn predict_one(&self, row: &[f64]) -> f64 {
        match &self.kind {
            TreeModelKind::Forest(_) => {
                let sum: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
                sum / self.trees.len() as f64
            }
            TreeModelKind::Boosted(p) => {
                let sum: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
                self.base_score + p.learn_rate * sum
            }
        }
    }

    /// Predicts every row of `matrix`, matching feature columns by name.
    pub fn predict_matrix(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        let perm: Vec<usize> = self
            .feature_names
            .iter()
            .map(|name| {
                matrix
                    .col_index(name)
                    .map_err(|_| ModelError::MissingColumn(name.clone()))
            })
            .collect::<Result<_>>()?;
        let mut buf = vec![0.0; perm.len()];
        let mut out = Vec::with_capacity(matrix.n_rows());
        for i in 0..matrix.n_rows() {
            let row = matrix.row(i);
            for (slot, &src) in buf.iter_mut().zip(&perm) {
                *slot = row[src];
            }
            out.push(self.predict_one(&buf));
        }
        Ok(out)
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }
}

/// Split-quality criterion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainKind {
    /// Reduction in (biased) node variance; used by forest trees.
    VarianceReduction,
    /// ½[S_L²/(n_L+λ) + S_R²/(n_R+λ) − S²/(n+λ)] over residual sums;
    /// used by boosted trees.
    SecondOrder { l2_reg: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Scans midpoints of consecutive distinct sorted values of each
/// candidate feature and returns the best split, or `None` when no
/// split strictly beats `loss_reduction` while leaving both children
/// with at least `min_n` rows.
///
/// Gain ties resolve to the lowest feature index, then the lowest
/// threshold: candidates are scanned in ascending index order,
/// thresholds ascending, and a candidate replaces the incumbent only on
/// strictly greater gain.
pub fn best_split(
    columns: &[Vec<f64>],
    y: &[f64],
    rows: &[usize],
    candidates: &[usize],
    min_n: usize,
    kind: GainKind,
    loss_reduction: f64,
) -> Option<SplitChoice> {
    let n = rows.len();
    if n < 2 * min_n {
        return None;
    }
    let total: f64 = rows.iter().map(|&r| y[r]).sum();
    let mut best: Option<SplitChoice> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &feature in candidates {
        let col = &columns[feature];
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (col[r], y[r])));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut left_sum = 0.0;
        for i in 0..n - 1 {
            left_sum += pairs[i].1;
            if pairs[i].0 == pairs[i + 1].0 {
                continue;
            }
            let n_left = i + 1;
            let n_right = n - n_left;
            if n_left < min_n || n_right < min_n {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = match kind {
                GainKind::VarianceReduction => {
                    (left_sum * left_sum / n_left as f64
                        + right_sum * right_sum / n_right as f64
                        - total * total / n as f64)
                        / n as f64
                }
                GainKind::SecondOrder { l2_reg } => {
                    0.5 * (left_sum * left_sum / (n_left as f64 + l2_reg)
                        + right_sum * right_sum / (n_right as f64 + l2_reg)
                        - total * total / (n as f64 + l2_reg))
                }
            };
            if best.map_or(true, |b| gain > b.gain) {
                best = Some(SplitChoice {
                    feature,
                    threshold: 0.5 * (pairs[i].0 + pairs[i + 1].0),
                    gain,
                });
            }
        }
    }
    best.filter(|b| b.gain > loss_reduction)
}

/// Draws `mtry` distinct feature indices and returns them sorted
/// ascending, so the split scan visits features in index order.
pub(crate) fn sample_candidates(
    rng: &mut ChaCha8Rng,
    n_features: usize,
    mtry: usize,
) -> Vec<usize> {
    let mut picked = rand::seq::index::sample(rng, n_features, mtry).into_vec();
    picked.sort_unstable();
    picked
}

pub(crate) struct GrowConfig {
    pub min_n: usize,
    pub mtry: usize,
    /// `None` grows until `min_n` stops every branch.
    pub max_depth: Option<usize>,
    pub kind: GainKind,
    pub loss_reduction: f64,
}

fn leaf_value(kind: GainKind, y: &[f64], rows: &[usize]) -> f64 {
    let sum: f64 = rows.iter().map(|&r| y[r]).sum();
    match kind {
        GainKind::VarianceReduction => sum / rows.len() as f64,
        GainKind::SecondOrder { l2_reg } => sum / (rows.len() as f64 + l2_reg),
    }
}

/// Grows one tree depth-first (left before right). The generator is
/// consumed only to sample split candidates, and only at nodes that are
/// eligible to split, so identical streams reproduce identical trees.
pub(crate) fn grow_tree(
    columns: &[Vec<f64>],
    y: &[f64],
    rows: Vec<usize>,
    depth: usize,
    cfg: &GrowConfig,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let depth_ok = cfg.max_depth.map_or(true, |d| depth < d);
    if depth_ok && rows.len() >= 2 * cfg.min_n {
        let candidates = sample_candidates(rng, columns.len(), cfg.mtry);
        if let Some(choice) = best_split(
            columns,
            y,
            &rows,
            &candidates,
            cfg.min_n,
            cfg.kind,
            cfg.loss_reduction,
        ) {
            let col = &columns[choice.feature];
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&r| col[r] <= choice.threshold);
            let left = grow_tree(columns, y, left_rows, depth + 1, cfg, rng);
            let right = grow_tree(columns, y, right_rows, depth + 1, cfg, rng);
            return TreeNode::Split {
                feature: choice.feature,
                threshold: choice.threshold,
                left: Box::new(left),
                right: Box::new(right),
            };
        }
    }
    TreeNode::Leaf {
        value: leaf_value(cfg.kind, y, &rows),
    }
}

fn feature_columns(matrix: &FeatureMatrix) -> Vec<Vec<f64>> {
    (0..matrix.n_cols()).map(|j| matrix.column(j)).collect()
}

fn validate_common(matrix: &FeatureMatrix, mtry: usize, min_n: usize) -> Result<()> {
    if matrix.n_rows() == 0 || matrix.n_cols() == 0 {
        return Err(ModelError::TooFewRows {
            need: 1,
            got: matrix.n_rows(),
        });
    }
    if mtry < 1 || mtry > matrix.n_cols() {
        return Err(ModelError::InvalidParams(format!(
            "mtry {} outside 1..={}",
            mtry,
            matrix.n_cols()
        )));
    }
    if min_n < 1 {
        return Err(ModelError::InvalidParams("min_n must be >= 1".to_string()));
    }
    for i in 0..matrix.n_rows() {
        if matrix.row(i).iter().any(|v| !v.is_finite()) || !matrix.target[i].is_finite() {
            return Err(ModelError::NonFinite {
                context: format!("training row {i}"),
            });
        }
    }
    Ok(())
}

/// Fits a random forest: `n_trees` trees, each on a bootstrap sample of
/// the rows (n draws with replacement), with `mtry` features re-sampled
/// at every split and branches grown until `min_n`.
pub fn fit_random_forest(matrix: &FeatureMatrix, params: &ForestParams) -> Result<FittedTreeModel> {
    validate_common(matrix, params.mtry, params.min_n)?;
    if params.n_trees < 1 {
        return Err(ModelError::InvalidParams(
            "n_trees must be >= 1 for a forest".to_string(),
        ));
    }
    // With min_n >= n/2 every tree degenerates to a single leaf; that
    // is legal (the bootstrap mean), not an error.
    let n = matrix.n_rows();
    let columns = feature_columns(matrix);
    let cfg = GrowConfig {
        min_n: params.min_n,
        mtry: params.mtry,
        max_depth: None,
        kind: GainKind::VarianceReduction,
        loss_reduction: 0.0,
    };
    let trees: Vec<TreeNode> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(1 + t as u64);
            let bootstrap: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            grow_tree(&columns, &matrix.target, bootstrap, 0, &cfg, &mut rng)
        })
        .collect();
    Ok(FittedTreeModel {
        kind: TreeModelKind::Forest(params.clone()),
        trees,
        base_score: 0.0,
        feature_names: matrix.names.clone(),
        train_mse_per_round: Vec::new(),
    })
}

/// Fits gradient-boosted trees: starting from the target mean, each
/// round subsamples rows without replacement, fits a depth-limited tree
/// to the current residuals under the second-order gain rule with leaf
/// values `Σresidual / (count + λ)`, and advances predictions by
/// `learn_rate` times the tree.
pub fn fit_gbt(matrix: &FeatureMatrix, params: &BoostParams) -> Result<FittedTreeModel> {
    validate_common(matrix, params.mtry, params.min_n)?;
    if params.tree_depth < 1 {
        return Err(ModelError::InvalidParams(
            "tree_depth must be >= 1".to_string(),
        ));
    }
    if !(params.learn_rate > 0.0 && params.learn_rate <= 1.0) {
        return Err(ModelError::InvalidParams(format!(
            "learn_rate {} outside (0, 1]",
            params.learn_rate
        )));
    }
    if !(params.sample_size > 0.0 && params.sample_size <= 1.0) {
        return Err(ModelError::InvalidParams(format!(
            "sample_size {} outside (0, 1]",
            params.sample_size
        )));
    }
    if params.loss_reduction < 0.0 || params.l2_reg < 0.0 {
        return Err(ModelError::InvalidParams(
            "loss_reduction and l2_reg must be >= 0".to_string(),
        ));
    }
    let n = matrix.n_rows();
    let columns = feature_columns(matrix);
    let base_score = matrix.target.iter().sum::<f64>() / n as f64;
    let mut predictions = vec![base_score; n];
    let mut residuals: Vec<f64> = matrix
        .target
        .iter()
        .zip(&predictions)
        .map(|(y, p)| y - p)
        .collect();
    let cfg = GrowConfig {
        min_n: params.min_n,
        mtry: params.mtry,
        max_depth: Some(params.tree_depth),
        kind: GainKind::SecondOrder {
            l2_reg: params.l2_reg,
        },
        loss_reduction: params.loss_reduction,
    };
    let subsample = ((params.sample_size * n as f64).floor() as usize).clamp(1, n);

    let mut trees = Vec::with_capacity(params.n_trees);
    let mut train_mse_per_round = Vec::with_capacity(params.n_trees);
    for round in 0..params.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(1 + round as u64);
        let mut rows = rand::seq::index::sample(&mut rng, n, subsample).into_vec();
        rows.sort_unstable();
        let tree = grow_tree(&columns, &residuals, rows, 0, &cfg, &mut rng);
        for i in 0..n {
            predictions[i] += params.learn_rate * tree.predict(matrix.row(i));
            residuals[i] = matrix.target[i] - predictions[i];
        }
        train_mse_per_round.push(residuals.iter().map(|r| r * r).sum::<f64>() / n as f64);
        trees.push(tree);
    }
    Ok(FittedTreeModel {
        kind: TreeModelKind::Boosted(params.clone()),
        trees,
        base_score,
        feature_names: matrix.names.clone(),
        train_mse_per_round,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::RegionId;
    use crate::week::WeekId;
    use approx::assert_relative_eq;

    fn test_matrix(names: &[&str], rows: Vec<Vec<f64>>, target: Vec<f64>) -> FeatureMatrix {
        let start = WeekId::new(2001, 1).unwrap();
        let weeks: Vec<WeekId> = (0..rows.len()).map(|i| start.add_weeks(i as i64)).collect();
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        FeatureMatrix::new(
            RegionId::new("r"),
            names.iter().map(|s| s.to_string()).collect(),
            weeks,
            data,
            target,
        )
    }

    fn step_case() -> (Vec<Vec<f64>>, Vec<f64>) {
        (
            vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
            vec![0.0, 0.0, 10.0, 10.0],
        )
    }

    #[test]
    fn best_split_prefers_clean_separation() {
        let (rows, y) = step_case();
        let columns = vec![rows.iter().map(|r| r[0]).collect::<Vec<f64>>()];
        let rows_idx: Vec<usize> = (0..4).collect();

        // Candidate gains enumerated by hand: thresholds 1.5 / 2.5 / 3.5
        // give variance reductions 8.33 / 25 / 8.33.
        let vr = best_split(
            &columns,
            &y,
            &rows_idx,
            &[0],
            1,
            GainKind::VarianceReduction,
            0.0,
        )
        .unwrap();
        assert_eq!(vr.feature, 0);
        assert_eq!(vr.threshold, 2.5);
        assert_relative_eq!(vr.gain, 25.0, max_relative = 1e-12);

        // Second-order gains at λ=0: 16.67 / 50 / 16.67.
        let so = best_split(
            &columns,
            &y,
            &rows_idx,
            &[0],
            1,
            GainKind::SecondOrder { l2_reg: 0.0 },
            0.0,
        )
        .unwrap();
        assert_eq!(so.threshold, 2.5);
        assert_relative_eq!(so.gain, 50.0, max_relative = 1e-12);

        // And at λ=1: ½(400/3 − 400/5) = 26.67.
        let so1 = best_split(
            &columns,
            &y,
            &rows_idx,
            &[0],
            1,
            GainKind::SecondOrder { l2_reg: 1.0 },
            0.0,
        )
        .unwrap();
        assert_eq!(so1.threshold, 2.5);
        assert_relative_eq!(so1.gain, 0.5 * (400.0 / 3.0 - 80.0), max_relative = 1e-12);
    }

    #[test]
    fn constant_target_never_splits() {
        let columns = vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]];
        let y = vec![3.0; 6];
        let rows: Vec<usize> = (0..6).collect();
        for kind in [
            GainKind::VarianceReduction,
            GainKind::SecondOrder { l2_reg: 1.0 },
        ] {
            assert!(best_split(&columns, &y, &rows, &[0], 1, kind, 0.0).is_none());
        }
    }

    #[test]
    fn loss_reduction_gates_strictly() {
        let (rows, y) = step_case();
        let columns = vec![rows.iter().map(|r| r[0]).collect::<Vec<f64>>()];
        let rows_idx: Vec<usize> = (0..4).collect();
        let kind = GainKind::SecondOrder { l2_reg: 0.0 };
        // Best achievable gain is exactly 50; the bar must be strictly
        // exceeded.
        assert!(best_split(&columns, &y, &rows_idx, &[0], 1, kind, 50.0).is_none());
        assert!(best_split(&columns, &y, &rows_idx, &[0], 1, kind, 49.999).is_some());
    }

    #[test]
    fn min_n_rules_out_thin_children() {
        let (rows, y) = step_case();
        let columns = vec![rows.iter().map(|r| r[0]).collect::<Vec<f64>>()];
        let rows_idx: Vec<usize> = (0..4).collect();
        let choice = best_split(
            &columns,
            &y,
            &rows_idx,
            &[0],
            2,
            GainKind::VarianceReduction,
            0.0,
        )
        .unwrap();
        // Thresholds 1.5 and 3.5 would leave a 1-row child.
        assert_eq!(choice.threshold, 2.5);
        // min_n 3 leaves no legal split at all on 4 rows.
        assert!(best_split(
            &columns,
            &y,
            &rows_idx,
            &[0],
            3,
            GainKind::VarianceReduction,
            0.0
        )
        .is_none());
    }

    #[test]
    fn duplicated_values_offer_no_midpoint_between_them() {
        // x = [1,1,2,2]: the only distinct-value boundary is 1.5.
        let columns = vec![vec![1.0, 1.0, 2.0, 2.0]];
        let y = vec![0.0, 1.0, 9.0, 10.0];
        let rows: Vec<usize> = (0..4).collect();
        let choice = best_split(
            &columns,
            &y,
            &rows,
            &[0],
            1,
            GainKind::VarianceReduction,
            0.0,
        )
        .unwrap();
        assert_eq!(choice.threshold, 1.5);
    }

    fn synthetic_regression(n: usize, seed: u64) -> FeatureMatrix {
        // Additive signal in features 0..3 plus 20 pure-noise features.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names: Vec<String> = (0..23).map(|j| format!("f{j}")).collect();
        let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let mut rows = Vec::with_capacity(n);
        let mut target = Vec::with_capacity(n);
        for _ in 0..n {
            let mut row: Vec<f64> = (0..23).map(|_| rng.gen_range(-1.0..1.0)).collect();
            row[0] = rng.gen_range(-2.0..2.0);
            let y = 8.0 * row[0] + 6.0 * (3.0 * row[1]).sin() + 4.0 * (row[2] > 0.3) as u8 as f64
                + rng.gen_range(-0.5..0.5);
            rows.push(row);
            target.push(y);
        }
        test_matrix(&name_refs, rows, target)
    }

    #[test]
    fn forest_on_constant_target_predicts_the_constant() {
        let m = test_matrix(
            &["a", "b"],
            (0..10).map(|i| vec![i as f64, (i * i) as f64]).collect(),
            vec![7.25; 10],
        );
        let model = fit_random_forest(
            &m,
            &ForestParams {
                n_trees: 25,
                mtry: 2,
                min_n: 2,
                seed: 3,
            },
        )
        .unwrap();
        for p in model.predict_matrix(&m).unwrap() {
            assert_eq!(p, 7.25);
        }
        assert_eq!(model.predict_one(&[99.0, -4.0]), 7.25);
    }

    #[test]
    fn stump_forest_tracks_the_sample_mean() {
        let m = synthetic_regression(60, 11);
        let n = m.n_rows() as f64;
        let mean = m.target.iter().sum::<f64>() / n;
        let var = m.target.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let se = (var / n).sqrt();
        // min_n >= n collapses every tree to one leaf holding its
        // bootstrap mean.
        let model = fit_random_forest(
            &m,
            &ForestParams {
                n_trees: 200,
                mtry: 5,
                min_n: 60,
                seed: 4,
            },
        )
        .unwrap();
        for tree in &model.trees {
            assert_eq!(tree.n_leaves(), 1);
        }
        let p = model.predict_one(&vec![0.0; 23]);
        assert!(
            (p - mean).abs() <= 3.0 * se,
            "forest of bootstrap means {p} strayed from {mean} (se {se})"
        );
    }

    #[test]
    fn same_seed_reproduces_the_model_bitwise() {
        let m = synthetic_regression(80, 5);
        let params = ForestParams {
            n_trees: 30,
            mtry: 8,
            min_n: 5,
            seed: 42,
        };
        let a = fit_random_forest(&m, &params).unwrap();
        let b = fit_random_forest(&m, &params).unwrap();
        assert_eq!(a, b);
        let pa = a.predict_matrix(&m).unwrap();
        let pb = b.predict_matrix(&m).unwrap();
        assert!(pa.iter().zip(&pb).all(|(x, y)| x.to_bits() == y.to_bits()));

        let c = fit_random_forest(
            &m,
            &ForestParams {
                seed: 43,
                ..params
            },
        )
        .unwrap();
        assert_ne!(a.trees, c.trees);
    }

    #[test]
    fn adding_trees_preserves_earlier_trees() {
        let m = synthetic_regression(50, 9);
        let short = fit_random_forest(
            &m,
            &ForestParams {
                n_trees: 10,
                mtry: 6,
                min_n: 4,
                seed: 8,
            },
        )
        .unwrap();
        let long = fit_random_forest(
            &m,
            &ForestParams {
                n_trees: 14,
                mtry: 6,
                min_n: 4,
                seed: 8,
            },
        )
        .unwrap();
        assert_eq!(short.trees[..], long.trees[..10]);
    }

    #[test]
    fn forest_prediction_is_mean_of_tree_outputs() {
        let m = synthetic_regression(70, 21);
        let model = fit_random_forest(
            &m,
            &ForestParams {
                n_trees: 17,
                mtry: 10,
                min_n: 4,
                seed: 2,
            },
        )
        .unwrap();
        for i in (0..m.n_rows()).step_by(7) {
            let row = m.row(i);
            let by_hand =
                model.trees.iter().map(|t| t.predict(row)).sum::<f64>() / model.trees.len() as f64;
            assert_eq!(model.predict_one(row), by_hand);
        }
    }

    #[test]
    fn boosting_zero_rounds_returns_the_mean() {
        let m = synthetic_regression(40, 13);
        let mean = m.target.iter().sum::<f64>() / m.n_rows() as f64;
        let model = fit_gbt(
            &m,
            &BoostParams {
                n_trees: 0,
                mtry: 23,
                min_n: 2,
                seed: 1,
                ..BoostParams::default()
            },
        )
        .unwrap();
        for p in model.predict_matrix(&m).unwrap() {
            assert_eq!(p, mean);
        }
    }

    #[test]
    fn one_unshrunk_round_fits_a_clean_step_exactly() {
        let (rows, y) = step_case();
        let m = test_matrix(&["x"], rows, y.clone());
        let model = fit_gbt(
            &m,
            &BoostParams {
                n_trees: 1,
                mtry: 1,
                min_n: 1,
                tree_depth: 1,
                learn_rate: 1.0,
                loss_reduction: 0.0,
                sample_size: 1.0,
                l2_reg: 0.0,
                seed: 0,
            },
        )
        .unwrap();
        let p = model.predict_matrix(&m).unwrap();
        for (a, b) in p.iter().zip(&y) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        assert_eq!(model.trees[0].n_leaves(), 2);
    }

    #[test]
    fn boosting_training_mse_never_increases_under_full_sampling() {
        let m = synthetic_regression(120, 17);
        let model = fit_gbt(
            &m,
            &BoostParams {
                n_trees: 40,
                mtry: 12,
                min_n: 3,
                tree_depth: 3,
                learn_rate: 0.3,
                loss_reduction: 0.0,
                sample_size: 1.0,
                l2_reg: 1.0,
                seed: 6,
            },
        )
        .unwrap();
        assert_eq!(model.train_mse_per_round.len(), 40);
        for w in model.train_mse_per_round.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "MSE rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn boosting_is_seed_deterministic() {
        let m = synthetic_regression(60, 23);
        let params = BoostParams {
            n_trees: 12,
            mtry: 9,
            min_n: 3,
            tree_depth: 4,
            learn_rate: 0.2,
            loss_reduction: 0.01,
            sample_size: 0.8,
            l2_reg: 1.0,
            seed: 77,
        };
        let a = fit_gbt(&m, &params).unwrap();
        let b = fit_gbt(&m, &params).unwrap();
        assert_eq!(a, b);
        // Depth limit honored.
        for tree in &a.trees {
            assert!(tree.depth() <= 4);
        }
    }

    #[test]
    fn fully_grown_tree_memorizes_training_rows() {
        let m = synthetic_regression(30, 31);
        let columns: Vec<Vec<f64>> = (0..m.n_cols()).map(|j| m.column(j)).collect();
        let cfg = GrowConfig {
            min_n: 1,
            mtry: m.n_cols(),
            max_depth: None,
            kind: GainKind::VarianceReduction,
            loss_reduction: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tree = grow_tree(
            &columns,
            &m.target,
            (0..m.n_rows()).collect(),
            0,
            &cfg,
            &mut rng,
        );
        // Wrapped as a one-tree forest, the standard predict path
        // reproduces every training target.
        let model = FittedTreeModel {
            kind: TreeModelKind::Forest(ForestParams {
                n_trees: 1,
                mtry: m.n_cols(),
                min_n: 1,
                seed: 0,
            }),
            trees: vec![tree],
            base_score: 0.0,
            feature_names: m.names.clone(),
            train_mse_per_round: Vec::new(),
        };
        let p = model.predict_matrix(&m).unwrap();
        for (a, b) in p.iter().zip(&m.target) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn prediction_is_a_pointwise_map() {
        let m = synthetic_regression(40, 3);
        let model = fit_random_forest(
            &m,
            &ForestParams {
                n_trees: 12,
                mtry: 7,
                min_n: 3,
                seed: 10,
            },
        )
        .unwrap();
        let forward = model.predict_matrix(&m).unwrap();
        // Reverse the row order through a rebuilt matrix.
        let names: Vec<&str> = m.names.iter().map(|s| s.as_str()).collect();
        let rows: Vec<Vec<f64>> = (0..m.n_rows()).rev().map(|i| m.row(i).to_vec()).collect();
        let target: Vec<f64> = m.target.iter().rev().copied().collect();
        let reversed = test_matrix(&names, rows, target);
        let backward = model.predict_matrix(&reversed).unwrap();
        let mut expected = forward.clone();
        expected.reverse();
        assert!(backward
            .iter()
            .zip(&expected)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn prediction_requires_all_training_columns() {
        let m = synthetic_regression(40, 3);
        let model = fit_random_forest(
            &m,
            &ForestParams {
                n_trees: 5,
                mtry: 7,
                min_n: 3,
                seed: 10,
            },
        )
        .unwrap();
        let names: Vec<String> = (0..23).map(|j| format!("g{j}")).collect();
        let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let rows: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64; 23]).collect();
        let other = test_matrix(&name_refs, rows, vec![0.0; 3]);
        assert!(matches!(
            model.predict_matrix(&other).unwrap_err(),
            ModelError::MissingColumn(name) if name == "f0"
        ));
    }

    #[test]
    fn parameter_validation_rejects_bad_inputs() {
        let m = synthetic_regression(20, 1);
        let bad_mtry = ForestParams {
            n_trees: 2,
            mtry: 24,
            min_n: 2,
            seed: 0,
        };
        assert!(matches!(
            fit_random_forest(&m, &bad_mtry).unwrap_err(),
            ModelError::InvalidParams(_)
        ));
        let bad_lr = BoostParams {
            learn_rate: 0.0,
            mtry: 4,
            ..BoostParams::default()
        };
        assert!(matches!(
            fit_gbt(&m, &bad_lr).unwrap_err(),
            ModelError::InvalidParams(_)
        ));
    }

    // --- Reference implementation used as a structural oracle. ---
    //
    // Same split rules, written as plain double loops with
    // definition-level statistics, sharing only the candidate-sampling
    // helper so both builders consume the random stream identically.

    fn naive_variance(y: &[f64], rows: &[usize]) -> f64 {
        let n = rows.len() as f64;
        let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / n;
        rows.iter().map(|&r| (y[r] - mean).powi(2)).sum::<f64>() / n
    }

    fn naive_gain(kind: GainKind, y: &[f64], parent: &[usize], left: &[usize], right: &[usize]) -> f64 {
        match kind {
            GainKind::VarianceReduction => {
                let n = parent.len() as f64;
                naive_variance(y, parent)
                    - (left.len() as f64 / n) * naive_variance(y, left)
                    - (right.len() as f64 / n) * naive_variance(y, right)
            }
            GainKind::SecondOrder { l2_reg } => {
                let s = |rows: &[usize]| rows.iter().map(|&r| y[r]).sum::<f64>();
                let half = |rows: &[usize]| s(rows).powi(2) / (rows.len() as f64 + l2_reg);
                0.5 * (half(left) + half(right) - half(parent))
            }
        }
    }

    fn naive_best_split(
        columns: &[Vec<f64>],
        y: &[f64],
        rows: &[usize],
        candidates: &[usize],
        min_n: usize,
        kind: GainKind,
        loss_reduction: f64,
    ) -> Option<SplitChoice> {
        let mut best: Option<SplitChoice> = None;
        for &feature in candidates {
            let mut values: Vec<f64> = rows.iter().map(|&r| columns[feature][r]).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            for pair in values.windows(2) {
                let threshold = 0.5 * (pair[0] + pair[1]);
                let left: Vec<usize> = rows
                    .iter()
                    .copied()
                    .filter(|&r| columns[feature][r] <= threshold)
                    .collect();
                let right: Vec<usize> = rows
                    .iter()
                    .copied()
                    .filter(|&r| columns[feature][r] > threshold)
                    .collect();
                if left.len() < min_n || right.len() < min_n {
                    continue;
                }
                let gain = naive_gain(kind, y, rows, &left, &right);
                if best.map_or(true, |b| gain > b.gain) {
                    best = Some(SplitChoice {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best.filter(|b| b.gain > loss_reduction)
    }

    fn naive_grow(
        columns: &[Vec<f64>],
        y: &[f64],
        rows: Vec<usize>,
        depth: usize,
        cfg: &GrowConfig,
        rng: &mut ChaCha8Rng,
    ) -> TreeNode {
        let depth_ok = cfg.max_depth.map_or(true, |d| depth < d);
        if depth_ok && rows.len() >= 2 * cfg.min_n {
            let candidates = sample_candidates(rng, columns.len(), cfg.mtry);
            if let Some(choice) = naive_best_split(
                columns,
                y,
                &rows,
                &candidates,
                cfg.min_n,
                cfg.kind,
                cfg.loss_reduction,
            ) {
                let mut left_rows = Vec::new();
                let mut right_rows = Vec::new();
                for r in rows {
                    if columns[choice.feature][r] <= choice.threshold {
                        left_rows.push(r);
                    } else {
                        right_rows.push(r);
                    }
                }
                let left = naive_grow(columns, y, left_rows, depth + 1, cfg, rng);
                let right = naive_grow(columns, y, right_rows, depth + 1, cfg, rng);
                return TreeNode::Split {
                    feature: choice.feature,
                    threshold: choice.threshold,
                    left: Box::new(left),
                    right: Box::new(right),
                };
            }
        }
        TreeNode::Leaf {
            value: leaf_value(cfg.kind, y, &rows),
        }
    }

    fn trees_structurally_equal(a: &TreeNode, b: &TreeNode) -> bool {
        match (a, b) {
            (TreeNode::Leaf { value: va }, TreeNode::Leaf { value: vb }) => {
                (va - vb).abs() <= 1e-9 * va.abs().max(vb.abs()).max(1.0)
            }
            (
                TreeNode::Split {
                    feature: fa,
                    threshold: ta,
                    left: la,
                    right: ra,
                },
                TreeNode::Split {
                    feature: fb,
                    threshold: tb,
                    left: lb,
                    right: rb,
                },
            ) => {
                fa == fb
                    && ta == tb
                    && trees_structurally_equal(la, lb)
                    && trees_structurally_equal(ra, rb)
            }
            _ => false,
        }
    }

    #[test]
    fn optimized_builder_matches_naive_reference_on_small_data() {
        for seed in 0..10u64 {
            let m = synthetic_regression(30, 100 + seed);
            let small: Vec<Vec<f64>> = (0..5).map(|j| m.column(j)).collect();
            for (kind, max_depth, loss_reduction) in [
                (GainKind::VarianceReduction, None, 0.0),
                (GainKind::SecondOrder { l2_reg: 1.0 }, Some(3), 0.01),
            ] {
                let cfg = GrowConfig {
                    min_n: 3,
                    mtry: 3,
                    max_depth,
                    kind,
                    loss_reduction,
                };
                let mut rng_a = ChaCha8Rng::seed_from_u64(seed);
                rng_a.set_stream(1);
                let fast = grow_tree(&small, &m.target, (0..30).collect(), 0, &cfg, &mut rng_a);
                let mut rng_b = ChaCha8Rng::seed_from_u64(seed);
                rng_b.set_stream(1);
                let slow = naive_grow(&small, &m.target, (0..30).collect(), 0, &cfg, &mut rng_b);
                assert!(
                    trees_structurally_equal(&fast, &slow),
                    "trees diverged for seed {seed} kind {kind:?}"
                );
            }
        }
    }

    #[test]
    fn both_learners_beat_the_mean_baseline_comfortably() {
        let train = synthetic_regression(400, 51);
        let test = synthetic_regression(200, 52);
        let train_mean = train.target.iter().sum::<f64>() / train.n_rows() as f64;
        let rmse = |pred: &[f64]| {
            (pred
                .iter()
                .zip(&test.target)
                .map(|(p, y)| (p - y).powi(2))
                .sum::<f64>()
                / test.n_rows() as f64)
                .sqrt()
        };
        let baseline = rmse(&vec![train_mean; test.n_rows()]);

        let forest = fit_random_forest(
            &train,
            &ForestParams {
                n_trees: 200,
                mtry: 8,
                min_n: 5,
                seed: 1,
            },
        )
        .unwrap();
        let forest_rmse = rmse(&forest.predict_matrix(&test).unwrap());
        assert!(
            forest_rmse < 0.7 * baseline,
            "forest {forest_rmse} vs baseline {baseline}"
        );

        let boosted = fit_gbt(
            &train,
            &BoostParams {
                n_trees: 200,
                mtry: 12,
                min_n: 5,
                tree_depth: 4,
                learn_rate: 0.1,
                loss_reduction: 0.0,
                sample_size: 0.9,
                l2_reg: 1.0,
                seed: 2,
            },
        )
        .unwrap();
        let boosted_rmse = rmse(&boosted.predict_matrix(&test).unwrap());
        assert!(
            boosted_rmse < 0.7 * baseline,
            "boosted {boosted_rmse} vs baseline {baseline}"
        );
    }
}
