//! Evaluation protocol: stratified 50/50 splits, ROC curves with
//! Mann-Whitney AUC, t-SNE embedding of feature spaces, and the feature
//! dump consumed by the embedding step.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("both classes are required; labels are single-class")]
    SingleClass,
    #[error("stratified split needs at least 2 subjects per class; class {class} has {count}")]
    TooFewPerClass { class: u8, count: usize },
    #[error("scores and labels differ in length: {scores} vs {labels}")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
    #[error("perplexity {perplexity} infeasible for {rows} rows (need rows >= 3*perplexity)")]
    PerplexityInfeasible { perplexity: f64, rows: usize },
    #[error("feature matrix is empty or ragged at row {0}")]
    BadFeatureMatrix(usize),
}

/// Train/test partition of a cohort by subject id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub stratified: bool,
}

/// Shuffle-then-halve split; odd counts put the extra subject in training.
/// With stratification the halving happens per class, keeping per-class
/// train fractions within one subject of 50%.
pub fn split_50_50(
    subjects: &[(String, u8)],
    seed: u64,
    stratified: bool,
) -> Result<Split, AnalysisError> {
    if subjects.is_empty() {
        return Err(AnalysisError::EmptyCohort);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shuffle = |ids: &mut Vec<&str>, rng: &mut ChaCha8Rng| {
        let m = ids.len();
        for i in 0..m.saturating_sub(1) {
            let j = i + (rng.random::<u64>() as usize) % (m - i);
            ids.swap(i, j);
        }
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    if stratified {
        // Odd class counts alternate their extra subject toward whichever
        // half is currently smaller (training first), so the overall split
        // stays as close to 50/50 as stratification allows.
        for class in 0..=1u8 {
            let mut ids: Vec<&str> = subjects
                .iter()
                .filter(|(_, y)| *y == class)
                .map(|(id, _)| id.as_str())
                .collect();
            if ids.len() < 2 {
                return Err(AnalysisError::TooFewPerClass {
                    class,
                    count: ids.len(),
                });
            }
            shuffle(&mut ids, &mut rng);
            let cut = if ids.len() % 2 == 0 || train.len() <= test.len() {
                ids.len().div_ceil(2)
            } else {
                ids.len() / 2
            };
            train.extend(ids[..cut].iter().map(|s| s.to_string()));
            test.extend(ids[cut..].iter().map(|s| s.to_string()));
        }
    } else {
        let mut ids: Vec<&str> = subjects.iter().map(|(id, _)| id.as_str()).collect();
        shuffle(&mut ids, &mut rng);
        let cut = ids.len().div_ceil(2);
        train.extend(ids[..cut].iter().map(|s| s.to_string()));
        test.extend(ids[cut..].iter().map(|s| s.to_string()));
    }
    train.sort();
    test.sort();
    Ok(Split {
        train,
        test,
        seed,
        stratified,
    })
}

/// ROC curve plus its area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    /// Decision thresholds, descending; the first entry is +infinity
    /// (nothing predicted positive).
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
    pub auc: f64,
}

/// ROC curve and tie-aware Mann-Whitney AUC: the probability that a random
/// positive outranks a random negative, ties counted one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<RocResult, AnalysisError> {
    if scores.len() != labels.len() {
        return Err(AnalysisError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(AnalysisError::EmptyCohort);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(AnalysisError::NonFiniteScore(i));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(AnalysisError::SingleClass);
    }

    // Sort descending by score and sweep tie groups.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut thresholds = vec![f64::INFINITY];
    let mut tpr = vec![0.0];
    let mut fpr = vec![0.0];
    let mut tp = 0u64;
    let mut fp = 0u64;
    // Concordant pairs and ties accumulated exactly in integers.
    let mut concordant = 0u128;
    let mut tied = 0u128;
    let mut i = 0;
    while i < order.len() {
        let score = scores[order[i]];
        let mut group_pos = 0u64;
        let mut group_neg = 0u64;
        while i < order.len() && scores[order[i]] == score {
            if labels[order[i]] == 1 {
                group_pos += 1;
            } else {
                group_neg += 1;
            }
            i += 1;
        }
        // Negatives strictly below this group: negatives - fp - group_neg.
        let below = negatives - fp - group_neg;
        concordant += group_pos as u128 * below as u128;
        tied += group_pos as u128 * group_neg as u128;
        tp += group_pos;
        fp += group_neg;
        thresholds.push(score);
        tpr.push(tp as f64 / positives as f64);
        fpr.push(fp as f64 / negatives as f64);
    }
    let auc =
        (concordant as f64 + 0.5 * tied as f64) / (positives as f64 * negatives as f64);
    Ok(RocResult {
        thresholds,
        tpr,
        fpr,
        auc,
    })
}

impl RocResult {
    /// Trapezoidal area under the stored curve; equals `auc` to 1e-12.
    pub fn trapezoid_area(&self) -> f64 {
        let mut area = 0.0;
        for i in 1..self.fpr.len() {
            area += (self.fpr[i] - self.fpr[i - 1]) * 0.5 * (self.tpr[i] + self.tpr[i - 1]);
        }
        area
    }
}

/// 2-D t-SNE embedding with its KL diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    /// Row-major (m x 2) coordinates.
    pub coordinates: Vec<[f64; 2]>,
    /// KL divergence w.r.t. the unexaggerated similarities at the last
    /// iteration.
    pub kl_final: f64,
    /// Same KL measured when early exaggeration ends.
    pub kl_after_exaggeration: f64,
    pub perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
}

const EXAGGERATION_FACTOR: f64 = 12.0;
const EXAGGERATION_ITERS: usize = 250;
const TSNE_LEARNING_RATE: f64 = 200.0;
const MOMENTUM_EARLY: f64 = 0.5;
const MOMENTUM_LATE: f64 = 0.8;
const P_FLOOR: f64 = 1e-12;

/// Exact t-SNE: per-row Gaussian bandwidths found by bisection to match the
/// target perplexity within 1e-4 in entropy, symmetrized similarities,
/// early exaggeration, and momentum gradient descent. Deterministic per
/// seed.
pub fn tsne(
    features: &[Vec<f64>],
    perplexity: f64,
    iterations: usize,
    seed: u64,
) -> Result<Embedding2D, AnalysisError> {
    let m = features.len();
    if m == 0 {
        return Err(AnalysisError::EmptyCohort);
    }
    let dim = features[0].len();
    if dim == 0 {
        return Err(AnalysisError::BadFeatureMatrix(0));
    }
    if let Some(i) = features.iter().position(|f| f.len() != dim) {
        return Err(AnalysisError::BadFeatureMatrix(i));
    }
    if !(perplexity >= 1.0) || (m as f64) < 3.0 * perplexity {
        return Err(AnalysisError::PerplexityInfeasible {
            perplexity,
            rows: m,
        });
    }

    // Pairwise squared distances in the input space.
    let mut d2 = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let mut acc = 0.0;
            for k in 0..dim {
                let d = features[i][k] - features[j][k];
                acc += d * d;
            }
            d2[i * m + j] = acc;
            d2[j * m + i] = acc;
        }
    }

    // Conditional probabilities with per-row bandwidth bisection on entropy.
    let target_entropy = perplexity.ln();
    let mut p_cond = vec![0.0; m * m];
    for i in 0..m {
        let mut beta = 1.0;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        for _ in 0..100 {
            let mut sum = 0.0;
            for j in 0..m {
                if j == i {
                    p_cond[i * m + j] = 0.0;
                    continue;
                }
                let v = (-beta * d2[i * m + j]).exp();
                p_cond[i * m + j] = v;
                sum += v;
            }
            let mut entropy = 0.0;
            if sum > 0.0 {
                for j in 0..m {
                    if j == i {
                        continue;
                    }
                    let p = p_cond[i * m + j] / sum;
                    p_cond[i * m + j] = p;
                    if p > 1e-300 {
                        entropy -= p * p.ln();
                    }
                }
            }
            let diff = entropy - target_entropy;
            if diff.abs() < 1e-4 {
                break;
            }
            if diff > 0.0 {
                beta_min = beta;
                beta = if beta_max.is_finite() {
                    0.5 * (beta + beta_max)
                } else {
                    beta * 2.0
                };
            } else {
                beta_max = beta;
                beta = if beta_min.is_finite() {
                    0.5 * (beta + beta_min)
                } else {
                    beta * 0.5
                };
            }
        }
    }

    // Symmetrize and normalize.
    let mut p = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            p[i * m + j] = (p_cond[i * m + j] + p_cond[j * m + i]) / (2.0 * m as f64);
        }
    }
    for v in &mut p {
        *v = v.max(P_FLOOR);
    }
    for i in 0..m {
        p[i * m + i] = 0.0;
    }

    // Seeded small Gaussian initialization.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || {
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let mut y: Vec<[f64; 2]> = (0..m).map(|_| [1e-4 * normal(), 1e-4 * normal()]).collect();
    let mut velocity = vec![[0.0f64; 2]; m];
    // Per-coordinate adaptive gains keep the fixed learning rate stable
    // after the exaggeration phase.
    let mut gains = vec![[1.0f64; 2]; m];

    let mut q = vec![0.0; m * m];
    let mut kl_after_exaggeration = f64::NAN;
    let mut kl_final = f64::NAN;
    for iter in 0..iterations {
        let exaggeration = if iter < EXAGGERATION_ITERS {
            EXAGGERATION_FACTOR
        } else {
            1.0
        };
        let momentum = if iter < EXAGGERATION_ITERS {
            MOMENTUM_EARLY
        } else {
            MOMENTUM_LATE
        };

        // Student-t similarities in the embedding.
        let mut q_sum = 0.0;
        for i in 0..m {
            for j in i + 1..m {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let w = 1.0 / (1.0 + dx * dx + dy * dy);
                q[i * m + j] = w;
                q[j * m + i] = w;
                q_sum += 2.0 * w;
            }
            q[i * m + i] = 0.0;
        }

        // Gradient: 4 sum_j (exag*p_ij - q_ij) w_ij (y_i - y_j).
        let mut grad = vec![[0.0f64; 2]; m];
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                let w = q[i * m + j];
                let coeff = 4.0 * (exaggeration * p[i * m + j] - w / q_sum) * w;
                grad[i][0] += coeff * (y[i][0] - y[j][0]);
                grad[i][1] += coeff * (y[i][1] - y[j][1]);
            }
        }
        for i in 0..m {
            for c in 0..2 {
                let same_direction = grad[i][c].signum() == velocity[i][c].signum();
                gains[i][c] = if same_direction {
                    (gains[i][c] * 0.8).max(0.01)
                } else {
                    gains[i][c] + 0.2
                };
                velocity[i][c] =
                    momentum * velocity[i][c] - TSNE_LEARNING_RATE * gains[i][c] * grad[i][c];
                y[i][c] += velocity[i][c];
            }
        }
        // Re-center to remove the translational drift.
        let mut mean = [0.0f64; 2];
        for yi in &y {
            mean[0] += yi[0];
            mean[1] += yi[1];
        }
        mean[0] /= m as f64;
        mean[1] /= m as f64;
        for yi in &mut y {
            yi[0] -= mean[0];
            yi[1] -= mean[1];
        }

        // True-P KL for the convergence diagnostics.
        if iter + 1 == EXAGGERATION_ITERS.min(iterations) || iter + 1 == iterations {
            let mut kl = 0.0;
            for i in 0..m {
                for j in 0..m {
                    if i == j {
                        continue;
                    }
                    let pij = p[i * m + j];
                    let qij = (q[i * m + j] / q_sum).max(P_FLOOR);
                    if pij > 0.0 {
                        kl += pij * (pij / qij).ln();
                    }
                }
            }
            if iter + 1 == EXAGGERATION_ITERS.min(iterations) {
                kl_after_exaggeration = kl;
            }
            if iter + 1 == iterations {
                kl_final = kl;
            }
        }
    }

    Ok(Embedding2D {
        coordinates: y,
        kl_final,
        kl_after_exaggeration,
        perplexity,
        iterations,
        seed,
    })
}

/// Mean silhouette coefficient of a labeled 2-D embedding (or any feature
/// rows): (b - a) / max(a, b) averaged over points.
pub fn silhouette(points: &[Vec<f64>], labels: &[u8]) -> f64 {
    let m = points.len();
    assert_eq!(m, labels.len());
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..m {
        let mut intra = 0.0;
        let mut intra_n = 0usize;
        let mut inter = 0.0;
        let mut inter_n = 0usize;
        for j in 0..m {
            if i == j {
                continue;
            }
            let d = dist(&points[i], &points[j]);
            if labels[i] == labels[j] {
                intra += d;
                intra_n += 1;
            } else {
                inter += d;
                inter_n += 1;
            }
        }
        if intra_n == 0 || inter_n == 0 {
            continue;
        }
        let a = intra / intra_n as f64;
        let b = inter / inter_n as f64;
        total += (b - a) / a.max(b);
        counted += 1;
    }
    if counted == 0 { 0.0 } else { total / counted as f64 }
}

/// Per-subject feature matrix with true and predicted labels, the input to
/// the embedding and its CSV export.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDump {
    pub ids: Vec<String>,
    pub labels: Vec<u8>,
    pub predicted: Vec<u8>,
    pub features: Vec<Vec<f64>>,
}

impl FeatureDump {
    pub fn new(
        ids: Vec<String>,
        labels: Vec<u8>,
        predicted: Vec<u8>,
        features: Vec<Vec<f64>>,
    ) -> Result<Self, AnalysisError> {
        if ids.is_empty() {
            return Err(AnalysisError::EmptyCohort);
        }
        if ids.len() != labels.len() || ids.len() != predicted.len() || ids.len() != features.len()
        {
            return Err(AnalysisError::LengthMismatch {
                scores: ids.len(),
                labels: labels.len().min(predicted.len()).min(features.len()),
            });
        }
        let dim = features[0].len();
        if let Some(i) = features.iter().position(|f| f.len() != dim) {
            return Err(AnalysisError::BadFeatureMatrix(i));
        }
        Ok(Self {
            ids,
            labels,
            predicted,
            features,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, |f| f.len())
    }
}
