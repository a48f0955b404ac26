//! Exact t-SNE to two dimensions.
//!
//! O(n^2) time and memory per iteration. Row-wise work runs on the rayon
//! pool but every sum is accumulated in a fixed order, so the embedding is
//! bit-identical for any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

pub const MIN_POINTS: usize = 4;
const BINARY_SEARCH_STEPS: usize = 50;
const ENTROPY_TOLERANCE: f64 = 1e-5;
const P_FLOOR: f64 = 1e-12;
const INIT_SCALE: f64 = 1e-4;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TsneError {
    #[error("t-SNE needs at least {MIN_POINTS} points, got {0}")]
    TooFewPoints(usize),
    #[error("point {index} has a non-finite coordinate")]
    NonFiniteInput { index: usize },
    #[error("invalid t-SNE setting: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Iteration at which momentum switches to `final_momentum`.
    pub momentum_switch: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            seed: 0,
        }
    }
}

impl TsneConfig {
    /// Perplexity used for `n` points: the configured value, lowered to
    /// `(n - 1) / 3` when it would exceed that.
    pub fn effective_perplexity(&self, n: usize) -> f64 {
        self.perplexity.min((n as f64 - 1.0) / 3.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    pub embedding: Vec<[f64; 2]>,
    /// KL(P || Q) after each iteration, measured with the unexaggerated P.
    pub kl_history: Vec<f64>,
    pub perplexity: f64,
}

fn squared_distances<const D: usize>(points: &[[f64; D]]) -> Vec<Vec<f64>> {
    points
        .par_iter()
        .map(|a| {
            points.iter().map(|b| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()).collect()
        })
        .collect()
}

/// Conditional affinities of row `i` whose entropy (in nats) matches
/// `ln(perplexity)`, found by bisection on the Gaussian precision.
fn conditional_row(d: &[f64], i: usize, target_entropy: f64) -> Vec<f64> {
    let d_min = d.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).fold(f64::INFINITY, f64::min);
    let mut beta = 1.0;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let mut row = vec![0.0; d.len()];
    for _ in 0..BINARY_SEARCH_STEPS {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for (j, (&dj, r)) in d.iter().zip(row.iter_mut()).enumerate() {
            if j == i {
                *r = 0.0;
                continue;
            }
            let shifted = dj - d_min;
            *r = (-shifted * beta).exp();
            sum += *r;
            weighted += shifted * *r;
        }
        let entropy = sum.ln() + beta * weighted / sum;
        let diff = entropy - target_entropy;
        if diff.abs() < ENTROPY_TOLERANCE {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
        }
    }
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|r| *r /= sum);
    row
}

/// Symmetrized joint affinities `(P_j|i + P_i|j) / 2n`, floored at 1e-12.
pub fn joint_affinities<const D: usize>(points: &[[f64; D]], perplexity: f64) -> Vec<Vec<f64>> {
    let n = points.len();
    let d = squared_distances(points);
    let target = perplexity.ln();
    let cond: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| conditional_row(&d[i], i, target)).collect();
    (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 0.0 } else { ((cond[i][j] + cond[j][i]) / (2.0 * n as f64)).max(P_FLOOR) })
                .collect()
        })
        .collect()
}

fn center(y: &mut [[f64; 2]]) {
    let n = y.len() as f64;
    let mut mean = [0.0; 2];
    for p in y.iter() {
        mean[0] += p[0];
        mean[1] += p[1];
    }
    mean[0] /= n;
    mean[1] /= n;
    for p in y.iter_mut() {
        p[0] -= mean[0];
        p[1] -= mean[1];
    }
}

pub fn tsne<const D: usize>(points: &[[f64; D]], config: &TsneConfig) -> Result<TsneResult, TsneError> {
    let n = points.len();
    if n < MIN_POINTS {
        return Err(TsneError::TooFewPoints(n));
    }
    if let Some(index) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(TsneError::NonFiniteInput { index });
    }
    if !(config.perplexity > 0.0 && config.learning_rate > 0.0 && config.exaggeration > 0.0) {
        return Err(TsneError::InvalidConfig("perplexity, learning_rate and exaggeration must be positive".into()));
    }
    let perplexity = config.effective_perplexity(n);
    if perplexity < config.perplexity {
        log::warn!("perplexity {} too large for {n} points, using {perplexity}", config.perplexity);
    }
    if points.iter().all(|q| q == &points[0]) {
        // No structure to preserve: P and the collapsed Q are both uniform,
        // which is the global minimum (KL = 0).
        return Ok(TsneResult { embedding: vec![[0.0; 2]; n], kl_history: vec![0.0; config.iterations], perplexity });
    }
    let p = joint_affinities(points, perplexity);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut y: Vec<[f64; 2]> =
        (0..n).map(|_| [INIT_SCALE * rng.sample::<f64, _>(StandardNormal), INIT_SCALE * rng.sample::<f64, _>(StandardNormal)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_history = Vec::with_capacity(config.iterations);

    for iter in 0..config.iterations {
        let exaggeration = if iter < config.exaggeration_iterations { config.exaggeration } else { 1.0 };
        let momentum = if iter < config.momentum_switch { config.initial_momentum } else { config.final_momentum };

        // Student-t kernel rows and their (ordered) total.
        let num: Vec<Vec<f64>> = y
            .par_iter()
            .enumerate()
            .map(|(i, a)| {
                y.iter()
                    .enumerate()
                    .map(|(j, b)| {
                        if i == j {
                            0.0
                        } else {
                            let dx = a[0] - b[0];
                            let dy = a[1] - b[1];
                            1.0 / (1.0 + dx * dx + dy * dy)
                        }
                    })
                    .collect()
            })
            .collect();
        let row_sums: Vec<f64> = num.par_iter().map(|r| r.iter().sum()).collect();
        let z: f64 = row_sums.iter().sum();

        let grads: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let w = (exaggeration * p[i][j] - (num[i][j] / z).max(P_FLOOR)) * num[i][j];
                    g[0] += w * (y[i][0] - y[j][0]);
                    g[1] += w * (y[i][1] - y[j][1]);
                }
                [4.0 * g[0], 4.0 * g[1]]
            })
            .collect();

        for i in 0..n {
            for k in 0..2 {
                let same_sign = (grads[i][k] > 0.0) == (update[i][k] > 0.0);
                gains[i][k] = if same_sign { gains[i][k] * 0.8 } else { gains[i][k] + 0.2 };
                gains[i][k] = gains[i][k].max(MIN_GAIN);
                update[i][k] = momentum * update[i][k] - config.learning_rate * gains[i][k] * grads[i][k];
                y[i][k] += update[i][k];
            }
        }
        center(&mut y);

        kl_history.push(kl_divergence(&p, &y));
    }
    Ok(TsneResult { embedding: y, kl_history, perplexity })
}

/// `KL(P || Q)` for joint affinities `p` and an embedding.
pub fn kl_divergence(p: &[Vec<f64>], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let num: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    let dx = y[i][0] - y[j][0];
                    let dy = y[i][1] - y[j][1];
                    if i == j {
                        0.0
                    } else {
                        1.0 / (1.0 + dx * dx + dy * dy)
                    }
                })
                .collect()
        })
        .collect();
    let z: f64 = num.par_iter().map(|r| r.iter().sum::<f64>()).collect::<Vec<f64>>().iter().sum();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let q = (num[i][j] / z).max(P_FLOOR);
                    p[i][j] * (p[i][j] / q).ln()
                })
                .sum()
        })
        .collect();
    rows.iter().sum()
}

/// Fraction of points whose `k` nearest neighbours in the embedding mostly
/// share their label (majority vote, ties count as misses).
pub fn knn_purity(embedding: &[[f64; 2]], labels: &[usize], k: usize) -> f64 {
    let n = embedding.len();
    let mut pure = 0;
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let dx = embedding[i][0] - embedding[j][0];
                let dy = embedding[i][1] - embedding[j][1];
                (dx * dx + dy * dy, j)
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let same = d.iter().take(k).filter(|&&(_, j)| labels[j] == labels[i]).count();
        if 2 * same > k {
            pure += 1;
        }
    }
    pure as f64 / n as f64
}
