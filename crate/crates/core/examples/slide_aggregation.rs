//! Patch predictions → per-slide label histograms → Z-score → random forest,
//! compared with a plain majority vote.

use std::collections::BTreeMap;

use prorez::aggregate::{majority_vote_aggregate, predict_slides, slide_histogram_features, train_slide_forest, ForestParams};
use prorez::trainer::PatchPrediction;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A noisy patch classifier that confuses class `c` with `c + 1` 40% of the
/// time.
fn fake_predictions(slide: &str, class: usize, rng: &mut ChaCha8Rng) -> Vec<PatchPrediction> {
    (0..30)
        .map(|i| {
            let label = if rng.random_bool(0.4) { (class + 1) % 4 } else { class };
            let mut probs = vec![0.1f32; 4];
            probs[label] = 0.7;
            PatchPrediction { slide_id: slide.into(), x: i * 128, y: 0, probs, label }
        })
        .collect()
}

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut labels = BTreeMap::new();
    let mut preds = Vec::new();
    for s in 0..40 {
        let id = format!("s{s:02}");
        labels.insert(id.clone(), s % 4);
        preds.extend(fake_predictions(&id, s % 4, &mut rng));
    }
    let m = slide_histogram_features(&preds, &labels, 4)?;
    println!("{} slides, first histogram {:?}", m.len(), m.features[0]);

    let (train, test): (Vec<usize>, Vec<usize>) = (0..m.len()).partition(|i| i % 4 != 3 || *i < 8);
    let pick = |idx: &[usize]| prorez::aggregate::SlideFeatureMatrix {
        slide_ids: idx.iter().map(|&i| m.slide_ids[i].clone()).collect(),
        features: idx.iter().map(|&i| m.features[i].clone()).collect(),
        labels: idx.iter().map(|&i| m.labels[i]).collect(),
    };
    let forest = train_slide_forest(&pick(&train), 4, ForestParams { n_trees: 100, max_features: 2, seed: 3, bootstrap: true })?;
    for p in predict_slides(&forest, &pick(&test))? {
        let patches: Vec<_> = preds.iter().filter(|q| q.slide_id == p.slide_id).cloned().collect();
        println!(
            "{}: true {}, forest {}, majority vote {}",
            p.slide_id,
            labels[&p.slide_id],
            p.label,
            majority_vote_aggregate(&patches)?
        );
    }
    Ok(())
}
