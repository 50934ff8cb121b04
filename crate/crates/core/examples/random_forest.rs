//! Gini random forest on a toy three-class problem, and determinism of the
//! trained forest.

use prorez::aggregate::{best_split, rf_predict, rf_train, ForestParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..150 {
        let class = i % 3;
        let centre = [class as f64, (2 - class) as f64, 1.0];
        x.push(centre.iter().map(|c| c + rng.random_range(-0.6..0.6)).collect::<Vec<f64>>());
        y.push(class);
    }
    let all: Vec<usize> = (0..x.len()).collect();
    let split = best_split(&x, &y, 3, &all, &[0, 1, 2]).expect("separable data has a split");
    println!("best root split: feature {} ≤ {:.4}, weighted Gini {:.4}", split.feature, split.threshold, split.weighted_gini());

    let params = ForestParams { n_trees: 50, max_features: 2, seed: 9, bootstrap: true };
    let forest = rf_train(&x, &y, 3, params)?;
    let correct = x.iter().zip(&y).filter(|(r, &l)| rf_predict(&forest, r).map(|p| p.0 == l).unwrap_or(false)).count();
    println!("training accuracy {}/{}", correct, x.len());
    let (label, votes) = rf_predict(&forest, &[1.0, 1.0, 1.0])?;
    println!("point (1,1,1) → class {label}, votes {votes:?}");
    assert_eq!(rf_train(&x, &y, 3, params)?, forest, "same seed, same forest");
    Ok(())
}
