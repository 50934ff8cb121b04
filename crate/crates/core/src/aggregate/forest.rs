use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ZScore;
use crate::error::{Error, Result};
use crate::seed::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        counts: Vec<usize>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    /// Majority class of the leaf reached by `x`; ties go to the lowest
    /// class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        match self {
            Node::Leaf { counts } => argmax_lowest(counts),
            Node::Split { feature, threshold, left, right } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

fn argmax_lowest(v: &[usize]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_features: usize,
    pub seed: u64,
    /// Grow each tree on a bootstrap resample; off, every tree sees the
    /// training set once, in order.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_features: 2,
            seed: 0,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestModel {
    pub params: ForestParams,
    pub num_classes: usize,
    pub n_features: usize,
    /// Applied to raw features before the trees when present.
    pub normalization: Option<ZScore>,
    pub trees: Vec<Node>,
}

/// The best split of one node: lowest weighted Gini impurity, ties broken by
/// lowest feature index then lowest threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// `Σ_k l_k²·n_r + Σ_k r_k²·n_l` over `n_l·n_r`; the weighted child
    /// impurity is `1 − score / n`. Kept as an exact ratio for comparison.
    score_num: u128,
    score_den: u128,
    pub n: usize,
}

impl Split {
    /// `(n_l·G_l + n_r·G_r) / n`.
    pub fn weighted_gini(&self) -> f64 {
        1.0 - (self.score_num as f64 / self.score_den as f64) / self.n as f64
    }

    fn beats(&self, other: &Split) -> bool {
        (self.score_num * other.score_den).cmp(&(other.score_num * self.score_den)) == Ordering::Greater
    }
}

/// Gini impurity `1 − Σ p_k²` of a class-count vector.
pub fn gini(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Exhaustive scan of `features` (ascending) over midpoints between
/// consecutive distinct values of the rows in `sample`. `None` when every
/// candidate feature is constant on the sample.
pub fn best_split(
    x: &[Vec<f64>],
    y: &[usize],
    num_classes: usize,
    sample: &[usize],
    features: &[usize],
) -> Option<Split> {
    let n = sample.len();
    let mut total = vec![0usize; num_classes];
    for &i in sample {
        total[y[i]] += 1;
    }
    let mut best: Option<Split> = None;
    let mut order = sample.to_vec();
    for &f in features {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let mut left = vec![0usize; num_classes];
        for pos in 0..n - 1 {
            left[y[order[pos]]] += 1;
            let (lo, hi) = (x[order[pos]][f], x[order[pos + 1]][f]);
            if lo == hi {
                continue;
            }
            let nl = (pos + 1) as u128;
            let nr = (n - pos - 1) as u128;
            let sl: u128 = left.iter().map(|&c| (c * c) as u128).sum();
            let sr: u128 = left
                .iter()
                .zip(&total)
                .map(|(&l, &t)| ((t - l) * (t - l)) as u128)
                .sum();
            let cand = Split {
                feature: f,
                threshold: lo + (hi - lo) / 2.0,
                score_num: sl * nr + sr * nl,
                score_den: nl * nr,
                n,
            };
            if best.as_ref().is_none_or(|b| cand.beats(b)) {
                best = Some(cand);
            }
        }
    }
    best
}

fn grow(
    x: &[Vec<f64>],
    y: &[usize],
    num_classes: usize,
    sample: Vec<usize>,
    max_features: usize,
    rng: &mut ChaCha8Rng,
) -> Node {
    let mut counts = vec![0usize; num_classes];
    for &i in &sample {
        counts[y[i]] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() <= 1 {
        return Node::Leaf { counts };
    }
    let n_features = x[0].len();
    let mut pool: Vec<usize> = (0..n_features).collect();
    for i in 0..max_features {
        let j = rng.random_range(i..n_features);
        pool.swap(i, j);
    }
    let mut chosen = pool[..max_features].to_vec();
    chosen.sort_unstable();
    let Some(split) = best_split(x, y, num_classes, &sample, &chosen) else {
        return Node::Leaf { counts };
    };
    let (left, right): (Vec<usize>, Vec<usize>) =
        sample.into_iter().partition(|&i| x[i][split.feature] <= split.threshold);
    Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(grow(x, y, num_classes, left, max_features, rng)),
        right: Box::new(grow(x, y, num_classes, right, max_features, rng)),
    }
}

fn check_width(x: &[Vec<f64>], width: usize) -> Result<()> {
    if let Some(r) = x.iter().find(|r| r.len() != width) {
        return Err(Error::Validation(format!(
            "feature row has {} columns, expected {width}",
            r.len()
        )));
    }
    Ok(())
}

/// Grows `params.n_trees` unpruned CART trees (Gini, min leaf 1). Tree `t`
/// draws its bootstrap sample and feature subsets from its own generator
/// seeded by `mix_seed(params.seed, t)`, so the forest is the same for any
/// thread count.
pub fn rf_train(x: &[Vec<f64>], y: &[usize], num_classes: usize, params: ForestParams) -> Result<ForestModel> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Validation(format!(
            "{} feature rows and {} labels; need a non-empty, equal number",
            x.len(),
            y.len()
        )));
    }
    let n_features = x[0].len();
    check_width(x, n_features)?;
    if params.n_trees == 0 {
        return Err(Error::Validation("n_trees must be at least 1".into()));
    }
    if params.max_features == 0 || params.max_features > n_features {
        return Err(Error::Validation(format!(
            "max_features {} outside [1, {n_features}]",
            params.max_features
        )));
    }
    if let Some(&l) = y.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Validation(format!("label {l} outside [0, {num_classes})")));
    }
    if y.iter().all(|&l| l == y[0]) {
        log::warn!("random forest trained on a single class ({}); it will always predict it", y[0]);
    }
    let n = x.len();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(params.seed, t as u64));
            let sample: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow(x, y, num_classes, sample, params.max_features, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        params,
        num_classes,
        n_features,
        normalization: None,
        trees,
    })
}

/// Majority of the tree votes (ties to the lowest class) and the vote
/// fraction of every class. Features are raw: the model's stored
/// normalization, if any, is applied first.
pub fn rf_predict(model: &ForestModel, features: &[f64]) -> Result<(usize, Vec<f64>)> {
    if features.len() != model.n_features {
        return Err(Error::Validation(format!(
            "forest expects {} features, got {}",
            model.n_features,
            features.len()
        )));
    }
    let row = match &model.normalization {
        Some(z) => z.apply_row(features)?,
        None => features.to_vec(),
    };
    let mut votes = vec![0usize; model.num_classes];
    for t in &model.trees {
        votes[t.predict(&row)] += 1;
    }
    let total = model.trees.len() as f64;
    Ok((argmax_lowest(&votes), votes.iter().map(|&v| v as f64 / total).collect()))
}
