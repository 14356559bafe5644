//! Feature-group selection with a group-lasso penalised linear classifier.
//!
//! A logistic model `w·x + b` is fit by proximal gradient descent with the
//! penalty `mu Σ_g ||w_g||`. Groups are ranked by `||w_g||` at the first
//! penalty (halving from the data-dependent maximum) that leaves at least
//! `k` groups active.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GroupSparseConfig {
    /// Proximal gradient iterations per penalty level.
    pub iterations: usize,
    /// Starting penalty as a fraction of the smallest penalty that zeroes
    /// every group.
    pub initial_penalty_ratio: f64,
    /// Penalty levels tried before giving up on activating `k` groups.
    pub max_levels: usize,
    /// Samples beyond this count are subsampled (seeded).
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for GroupSparseConfig {
    fn default() -> Self {
        GroupSparseConfig {
            iterations: 200,
            initial_penalty_ratio: 0.5,
            max_levels: 12,
            max_samples: 4000,
            seed: 0,
        }
    }
}

/// Returns `k` distinct group indices, strongest first (ties to the lower
/// index). `features[i]` holds `n_groups * group_dim` values.
pub fn select_feature_groups(
    features: &[Vec<f64>],
    labels: &[f64],
    group_dim: usize,
    k: usize,
    cfg: &GroupSparseConfig,
) -> Result<Vec<usize>> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::input("features and labels must be non-empty and of equal length"));
    }
    let dim = features[0].len();
    if group_dim == 0 || !dim.is_multiple_of(group_dim) || features.iter().any(|f| f.len() != dim) {
        return Err(Error::input("feature vectors must all split into whole groups"));
    }
    let n_groups = dim / group_dim;
    if k == 0 || k > n_groups {
        return Err(Error::input(format!("cannot select {k} of {n_groups} groups")));
    }
    let positives = labels.iter().filter(|&&y| y >= 0.5).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::input("group selection needs both classes"));
    }

    let rows: Vec<usize> = if features.len() > cfg.max_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = sample(&mut rng, features.len(), cfg.max_samples).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..features.len()).collect()
    };
    let n = rows.len() as f64;
    let ys: Vec<f64> = rows.iter().map(|&i| if labels[i] >= 0.5 { 1.0 } else { 0.0 }).collect();

    // Lipschitz bound of the mean logistic loss: trace(X'X)/(4n) with the
    // bias column included.
    let mean_sq: f64 = rows
        .iter()
        .map(|&i| 1.0 + features[i].iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / n;
    let step = 4.0 / mean_sq;

    let mut w = vec![0.0; dim];
    let mut b = (ys.iter().sum::<f64>() / n).clamp(1e-6, 1.0 - 1e-6);
    b = (b / (1.0 - b)).ln();
    let mut grad = vec![0.0; dim];

    let gradient = |w: &[f64], b: f64, grad: &mut [f64]| -> f64 {
        grad.fill(0.0);
        let mut gb = 0.0;
        for (&i, &y) in rows.iter().zip(&ys) {
            let x = &features[i];
            let z = b + x.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
            let r = 1.0 / (1.0 + (-z).exp()) - y;
            gb += r;
            for (g, v) in grad.iter_mut().zip(x) {
                *g += r * v;
            }
        }
        for g in grad.iter_mut() {
            *g /= n;
        }
        gb / n
    };

    // Smallest penalty with w = 0 optimal (intercept fitted).
    gradient(&w, b, &mut grad);
    let mu_max = grad
        .chunks(group_dim)
        .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let mut mu = mu_max * cfg.initial_penalty_ratio;

    let group_norms = |w: &[f64]| -> Vec<f64> {
        w.chunks(group_dim)
            .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    };

    let mut norms = vec![0.0; n_groups];
    for _ in 0..cfg.max_levels.max(1) {
        for _ in 0..cfg.iterations {
            let gb = gradient(&w, b, &mut grad);
            b -= step * gb;
            for (wg, gg) in w.chunks_mut(group_dim).zip(grad.chunks(group_dim)) {
                for (a, g) in wg.iter_mut().zip(gg) {
                    *a -= step * g;
                }
                let norm = wg.iter().map(|v| v * v).sum::<f64>().sqrt();
                let shrink = if norm > step * mu { 1.0 - step * mu / norm } else { 0.0 };
                for a in wg.iter_mut() {
                    *a *= shrink;
                }
            }
        }
        norms = group_norms(&w);
        if norms.iter().filter(|&&v| v > 0.0).count() >= k {
            break;
        }
        mu *= 0.5;
    }

    let mut order: Vec<usize> = (0..n_groups).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}
