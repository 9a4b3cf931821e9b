//! Gradient-boosted decision trees over shape-descriptor vectors: logistic
//! loss, exact greedy splits on sorted unique feature values, one Newton
//! step per leaf.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Leaf values are clamped to this magnitude to keep the sigmoid away from
/// saturation.
const LEAF_CLAMP: f64 = 4.0;

/// Hessian guard in the Newton leaf step.
const HESSIAN_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GbtError {
    #[error("training requires both classes; labels are single-class")]
    SingleClass,
    #[error("training requires at least 4 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite feature at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("feature row has {got} values, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("row {row} has {got} features, expected {expected}")]
    RaggedFeatures {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("label {0} is not binary")]
    BadLabel(u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Fraction of rows drawn (without replacement) per round; 1.0 = all.
    pub row_subsample: f64,
    /// Fraction of feature columns considered per round; 1.0 = all.
    pub col_subsample: f64,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            rounds: 200,
            learning_rate: 0.1,
            max_depth: 3,
            min_samples_leaf: 4,
            row_subsample: 1.0,
            col_subsample: 1.0,
            seed: 0,
        }
    }
}

impl GbtConfig {
    fn validate(&self) -> Result<(), GbtError> {
        if self.rounds < 1 {
            return Err(GbtError::BadConfig("rounds must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(GbtError::BadConfig(
                "learning rate must be in (0, 1]".into(),
            ));
        }
        if self.max_depth < 1 {
            return Err(GbtError::BadConfig("max depth must be >= 1".into()));
        }
        if !(self.row_subsample > 0.0 && self.row_subsample <= 1.0)
            || !(self.col_subsample > 0.0 && self.col_subsample <= 1.0)
        {
            return Err(GbtError::BadConfig(
                "subsample fractions must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Regression tree node with axis-aligned threshold splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
    },
}

impl TreeNode {
    pub fn evaluate(&self, row: &[f64]) -> f64 {
        match self {
            TreeNode::Leaf { value } => *value,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if row[*feature] < *threshold {
                    left.evaluate(row)
                } else {
                    right.evaluate(row)
                }
            }
        }
    }
}

/// Boosted logistic model: initial log-odds plus a sum of shrunken trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub initial_score: f64,
    pub trees: Vec<TreeNode>,
    pub learning_rate: f64,
    pub feature_dim: usize,
    pub config: GbtConfig,
    /// Training logistic loss after each round.
    pub train_loss: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logistic_loss(scores: &[f64], labels: &[u8]) -> f64 {
    let mut loss = 0.0;
    for (&s, &y) in scores.iter().zip(labels) {
        // -[y ln p + (1-y) ln(1-p)] in the numerically stable form.
        let z = if y == 1 { s } else { -s };
        loss += (1.0 + (-z).exp()).ln();
    }
    loss / scores.len() as f64
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Exact greedy search over midpoints of sorted unique feature values,
/// minimizing squared residual error; ties resolve to the lowest feature
/// index, then the lowest threshold.
fn best_split(
    features: &[Vec<f64>],
    residuals: &[f64],
    rows: &[usize],
    cols: &[usize],
    min_leaf: usize,
) -> Option<SplitChoice> {
    let n = rows.len();
    if n < 2 * min_leaf {
        return None;
    }
    let total_sum: f64 = rows.iter().map(|&r| residuals[r]).sum();
    let base = total_sum * total_sum / n as f64;
    let mut best: Option<SplitChoice> = None;
    let mut order: Vec<usize> = rows.to_vec();
    for &feature in cols {
        order.sort_by(|&a, &b| {
            features[a][feature]
                .total_cmp(&features[b][feature])
                .then(a.cmp(&b))
        });
        let mut left_sum = 0.0;
        for i in 0..n - 1 {
            left_sum += residuals[order[i]];
            let left_count = i + 1;
            let right_count = n - left_count;
            let (lo, hi) = (features[order[i]][feature], features[order[i + 1]][feature]);
            if lo == hi {
                continue;
            }
            if left_count < min_leaf || right_count < min_leaf {
                continue;
            }
            let right_sum = total_sum - left_sum;
            let gain = left_sum * left_sum / left_count as f64
                + right_sum * right_sum / right_count as f64
                - base;
            if gain <= 1e-12 {
                continue;
            }
            let threshold = 0.5 * (lo + hi);
            let better = match &best {
                None => true,
                Some(b) => gain > b.gain,
            };
            if better {
                best = Some(SplitChoice {
                    feature,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

fn newton_leaf(residuals: &[f64], hessians: &[f64], rows: &[usize]) -> f64 {
    let num: f64 = rows.iter().map(|&r| residuals[r]).sum();
    let den: f64 = rows.iter().map(|&r| hessians[r]).sum();
    (num / (den + HESSIAN_EPS)).clamp(-LEAF_CLAMP, LEAF_CLAMP)
}

fn build_tree(
    features: &[Vec<f64>],
    residuals: &[f64],
    hessians: &[f64],
    rows: &[usize],
    cols: &[usize],
    depth: usize,
    config: &GbtConfig,
) -> TreeNode {
    if depth >= config.max_depth {
        return TreeNode::Leaf {
            value: newton_leaf(residuals, hessians, rows),
        };
    }
    match best_split(features, residuals, rows, cols, config.min_samples_leaf) {
        None => TreeNode::Leaf {
            value: newton_leaf(residuals, hessians, rows),
        },
        Some(split) => {
            let (mut left, mut right) = (Vec::new(), Vec::new());
            for &r in rows {
                if features[r][split.feature] < split.threshold {
                    left.push(r);
                } else {
                    right.push(r);
                }
            }
            TreeNode::Split {
                feature: split.feature,
                threshold: split.threshold,
                left: Box::new(build_tree(
                    features, residuals, hessians, &left, cols, depth + 1, config,
                )),
                right: Box::new(build_tree(
                    features, residuals, hessians, &right, cols, depth + 1, config,
                )),
            }
        }
    }
}

/// Fit a boosted logistic-loss model: each round fits a depth-limited
/// regression tree to the residuals `y - p` with one Newton step per leaf.
pub fn train_gbt(
    features: &[Vec<f64>],
    labels: &[u8],
    config: GbtConfig,
) -> Result<GbtModel, GbtError> {
    config.validate()?;
    let m = features.len();
    if m < 4 {
        return Err(GbtError::TooFewSamples(m));
    }
    if labels.len() != m {
        return Err(GbtError::RaggedFeatures {
            row: labels.len().min(m),
            expected: m,
            got: labels.len(),
        });
    }
    let dim = features[0].len();
    for (row, f) in features.iter().enumerate() {
        if f.len() != dim {
            return Err(GbtError::RaggedFeatures {
                row,
                expected: dim,
                got: f.len(),
            });
        }
        for (col, &v) in f.iter().enumerate() {
            if !v.is_finite() {
                return Err(GbtError::NonFiniteFeature { row, col });
            }
        }
    }
    for &y in labels {
        if y > 1 {
            return Err(GbtError::BadLabel(y));
        }
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == m {
        return Err(GbtError::SingleClass);
    }

    let p_bar = positives as f64 / m as f64;
    let initial_score = (p_bar / (1.0 - p_bar)).ln();
    let mut scores = vec![initial_score; m];
    let mut trees = Vec::with_capacity(config.rounds);
    let mut train_loss = Vec::with_capacity(config.rounds);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    for _round in 0..config.rounds {
        let mut residuals = vec![0.0; m];
        let mut hessians = vec![0.0; m];
        for i in 0..m {
            let p = sigmoid(scores[i]);
            residuals[i] = labels[i] as f64 - p;
            hessians[i] = p * (1.0 - p);
        }
        let rows = subsample(m, config.row_subsample, &mut rng);
        let cols = subsample(dim, config.col_subsample, &mut rng);
        let tree = build_tree(features, &residuals, &hessians, &rows, &cols, 0, &config);
        for i in 0..m {
            scores[i] += config.learning_rate * tree.evaluate(&features[i]);
        }
        trees.push(tree);
        train_loss.push(logistic_loss(&scores, labels));
    }

    Ok(GbtModel {
        initial_score,
        trees,
        learning_rate: config.learning_rate,
        feature_dim: dim,
        config,
        train_loss,
    })
}

fn subsample(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..n).collect();
    }
    let keep = ((n as f64 * fraction).round() as usize).clamp(1, n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..keep {
        let j = i + (rng.random::<u64>() as usize) % (n - i);
        idx.swap(i, j);
    }
    idx.truncate(keep);
    idx.sort_unstable();
    idx
}

/// Probability of class 1 for one feature row.
pub fn predict_gbt(model: &GbtModel, row: &[f64]) -> Result<f64, GbtError> {
    if row.len() != model.feature_dim {
        return Err(GbtError::DimensionMismatch {
            expected: model.feature_dim,
            got: row.len(),
        });
    }
    let mut score = model.initial_score;
    for tree in &model.trees {
        score += model.learning_rate * tree.evaluate(row);
    }
    Ok(sigmoid(score))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable_1d() -> (Vec<Vec<f64>>, Vec<u8>) {
        let features: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64 - 19.5) / 4.0])
            .collect();
        let labels: Vec<u8> = features
            .iter()
            .map(|f| if f[0] < 0.0 { 0 } else { 1 })
            .collect();
        (features, labels)
    }

    fn xor_clusters(per_cluster: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (cx, cy, label) in [
            (-1.0, -1.0, 0u8),
            (1.0, 1.0, 0),
            (-1.0, 1.0, 1),
            (1.0, -1.0, 1),
        ] {
            for _ in 0..per_cluster {
                features.push(vec![
                    cx + 0.3 * (rng.random::<f64>() - 0.5),
                    cy + 0.3 * (rng.random::<f64>() - 0.5),
                ]);
                labels.push(label);
            }
        }
        (features, labels)
    }

    fn accuracy(model: &GbtModel, features: &[Vec<f64>], labels: &[u8]) -> f64 {
        let correct = features
            .iter()
            .zip(labels)
            .filter(|(f, y)| (predict_gbt(model, f).unwrap() >= 0.5) as u8 == **y)
            .count();
        correct as f64 / labels.len() as f64
    }

    #[test]
    fn separable_data_reaches_full_accuracy() {
        let (features, labels) = separable_1d();
        let config = GbtConfig {
            rounds: 50,
            max_depth: 1,
            min_samples_leaf: 1,
            ..Default::default()
        };
        let model = train_gbt(&features, &labels, config).unwrap();
        assert_eq!(accuracy(&model, &features, &labels), 1.0);
    }

    #[test]
    fn xor_needs_depth_two_and_gets_there() {
        let (features, labels) = xor_clusters(15);
        let config = GbtConfig {
            rounds: 100,
            max_depth: 2,
            min_samples_leaf: 2,
            ..Default::default()
        };
        let model = train_gbt(&features, &labels, config).unwrap();
        assert!(
            accuracy(&model, &features, &labels) >= 0.95,
            "XOR accuracy {}",
            accuracy(&model, &features, &labels)
        );
    }

    #[test]
    fn loss_is_non_increasing() {
        let (features, labels) = xor_clusters(10);
        let model = train_gbt(&features, &labels, GbtConfig::default()).unwrap();
        for w in model.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let features: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let labels = vec![1u8; 8];
        assert!(matches!(
            train_gbt(&features, &labels, GbtConfig::default()),
            Err(GbtError::SingleClass)
        ));
    }

    #[test]
    fn zero_tree_model_predicts_base_rate() {
        let model = GbtModel {
            initial_score: 0.0,
            trees: vec![],
            learning_rate: 0.1,
            feature_dim: 3,
            config: GbtConfig::default(),
            train_loss: vec![],
        };
        assert_eq!(predict_gbt(&model, &[1.0, 2.0, 3.0]).unwrap(), 0.5);
    }

    #[test]
    fn predictions_are_probabilities_and_monotone_on_1d() {
        let (features, labels) = separable_1d();
        let config = GbtConfig {
            rounds: 60,
            max_depth: 2,
            min_samples_leaf: 2,
            ..Default::default()
        };
        let model = train_gbt(&features, &labels, config).unwrap();
        let mut prev = 0.0;
        for i in -30..=30 {
            let x = i as f64 / 5.0;
            let p = predict_gbt(&model, &[x]).unwrap();
            assert!(p > 0.0 && p < 1.0);
            assert!(p >= prev - 1e-12, "not monotone at {x}: {p} < {prev}");
            prev = p;
        }
    }

    #[test]
    fn depth_one_stump_matches_exhaustive_oracle() {
        // One round, depth 1: the chosen stump must minimize squared
        // residual error over every (feature, threshold) pair.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let features: Vec<Vec<f64>> = (0..24)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let labels: Vec<u8> = (0..24).map(|_| (rng.random::<f64>() > 0.45) as u8).collect();
        let config = GbtConfig {
            rounds: 1,
            max_depth: 1,
            min_samples_leaf: 1,
            ..Default::default()
        };
        let model = train_gbt(&features, &labels, config).unwrap();
        let TreeNode::Split {
            feature, threshold, ..
        } = &model.trees[0]
        else {
            panic!("expected a split at the root");
        };

        // Brute-force oracle over all features and all midpoints.
        let p_bar = labels.iter().filter(|&&y| y == 1).count() as f64 / 24.0;
        let base_score = (p_bar / (1.0 - p_bar)).ln();
        let residuals: Vec<f64> = labels
            .iter()
            .map(|&y| y as f64 - sigmoid(base_score))
            .collect();
        let sse = |rows: &[usize]| -> f64 {
            if rows.is_empty() {
                return 0.0;
            }
            let mean = rows.iter().map(|&r| residuals[r]).sum::<f64>() / rows.len() as f64;
            rows.iter()
                .map(|&r| (residuals[r] - mean).powi(2))
                .sum::<f64>()
        };
        let mut best = f64::INFINITY;
        let mut best_pair = (0usize, 0.0f64);
        for f in 0..3 {
            let mut vals: Vec<f64> = features.iter().map(|r| r[f]).collect();
            vals.sort_by(f64::total_cmp);
            for w in vals.windows(2) {
                if w[0] == w[1] {
                    continue;
                }
                let thr = 0.5 * (w[0] + w[1]);
                let left: Vec<usize> =
                    (0..24).filter(|&r| features[r][f] < thr).collect();
                let right: Vec<usize> =
                    (0..24).filter(|&r| features[r][f] >= thr).collect();
                let err = sse(&left) + sse(&right);
                if err < best - 1e-15 {
                    best = err;
                    best_pair = (f, thr);
                }
            }
        }
        assert_eq!(*feature, best_pair.0);
        assert!((threshold - best_pair.1).abs() < 1e-12);
    }

    #[test]
    fn feature_permutation_equivariance() {
        let (features, labels) = xor_clusters(10);
        // Add a third informative-ish column so permutation is non-trivial.
        let features: Vec<Vec<f64>> = features
            .into_iter()
            .map(|mut f| {
                let extra = f[0] * 0.5 - f[1] * 0.25;
                f.push(extra);
                f
            })
            .collect();
        let config = GbtConfig {
            rounds: 40,
            max_depth: 2,
            min_samples_leaf: 2,
            ..Default::default()
        };
        let model = train_gbt(&features, &labels, config.clone()).unwrap();
        // Permute columns (2, 0, 1) and retrain.
        let permuted: Vec<Vec<f64>> = features
            .iter()
            .map(|f| vec![f[2], f[0], f[1]])
            .collect();
        let model_p = train_gbt(&permuted, &labels, config).unwrap();
        for (f, fp) in features.iter().zip(&permuted) {
            let a = predict_gbt(&model, f).unwrap();
            let b = predict_gbt(&model_p, fp).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (features, labels) = xor_clusters(8);
        let config = GbtConfig {
            rounds: 30,
            row_subsample: 0.8,
            col_subsample: 0.9,
            seed: 42,
            ..Default::default()
        };
        let a = train_gbt(&features, &labels, config.clone()).unwrap();
        let b = train_gbt(&features, &labels, config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_json_round_trip() {
        let (features, labels) = separable_1d();
        let config = GbtConfig {
            rounds: 5,
            ..Default::default()
        };
        let model = train_gbt(&features, &labels, config).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: GbtModel = serde_json::from_str(&json).unwrap();
        assert_eq!(model, back);
    }
}
