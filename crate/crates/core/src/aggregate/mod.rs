//! Patch → slide aggregation: per-slide label histograms, Z-score
//! normalization, a random forest over the histograms, and plain majority
//! vote for comparison.

mod forest;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::PatchPrediction;

pub use forest::{best_split, gini, rf_predict, rf_train, ForestModel, ForestParams, Node, Split};

/// One row per slide: counts of patches predicted as each class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideFeatureMatrix {
    pub slide_ids: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl SlideFeatureMatrix {
    pub fn len(&self) -> usize {
        self.slide_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slide_ids.is_empty()
    }
}

/// Builds the histogram matrix for the slides in `slide_labels` (slide id →
/// true class), sorted by slide id. Every listed slide needs at least one
/// prediction and every prediction must belong to a listed slide.
pub fn slide_histogram_features(
    preds: &[PatchPrediction],
    slide_labels: &BTreeMap<String, usize>,
    num_classes: usize,
) -> Result<SlideFeatureMatrix> {
    let mut hist: BTreeMap<&str, Vec<f64>> = slide_labels
        .keys()
        .map(|s| (s.as_str(), vec![0.0; num_classes]))
        .collect();
    for p in preds {
        let row = hist.get_mut(p.slide_id.as_str()).ok_or_else(|| {
            Error::Validation(format!("prediction for unlisted slide {}", p.slide_id))
        })?;
        if p.label >= num_classes {
            return Err(Error::Validation(format!(
                "patch label {} outside [0, {num_classes})",
                p.label
            )));
        }
        row[p.label] += 1.0;
    }
    if let Some((s, _)) = hist.iter().find(|(_, h)| h.iter().sum::<f64>() == 0.0) {
        return Err(Error::Validation(format!("slide {s} has no patch predictions")));
    }
    Ok(SlideFeatureMatrix {
        slide_ids: hist.keys().map(|s| s.to_string()).collect(),
        features: hist.into_values().collect(),
        labels: slide_labels.values().copied().collect(),
    })
}

/// Column means and population standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZScore {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl ZScore {
    /// `(x − mean) / sd`, or 0 for a column with zero spread.
    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.mean.len() {
            return Err(Error::Validation(format!(
                "row has {} columns, normalization was fit on {}",
                row.len(),
                self.mean.len()
            )));
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(&x, (&m, &s))| if s > 0.0 { (x - m) / s } else { 0.0 })
            .collect())
    }
}

pub fn zscore_fit(train: &[Vec<f64>]) -> Result<ZScore> {
    if train.len() < 2 {
        return Err(Error::Validation(format!(
            "Z-score fit needs at least 2 rows, got {}",
            train.len()
        )));
    }
    let c = train[0].len();
    if train.iter().any(|r| r.len() != c) {
        return Err(Error::Validation("rows differ in length".into()));
    }
    let n = train.len() as f64;
    let mean: Vec<f64> = (0..c).map(|j| train.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let sd = (0..c)
        .map(|j| (train.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    Ok(ZScore { mean, sd })
}

pub fn zscore_apply(rows: &[Vec<f64>], params: &ZScore) -> Result<Vec<Vec<f64>>> {
    rows.iter().map(|r| params.apply_row(r)).collect()
}

/// Fits the Z-score on `train` only, then a forest on the normalized rows;
/// the normalization travels inside the returned model.
pub fn train_slide_forest(train: &SlideFeatureMatrix, num_classes: usize, params: ForestParams) -> Result<ForestModel> {
    let z = zscore_fit(&train.features)?;
    let x = zscore_apply(&train.features, &z)?;
    let mut model = rf_train(&x, &train.labels, num_classes, params)?;
    model.normalization = Some(z);
    Ok(model)
}

/// Most frequent patch label; ties go to the tied class with the highest
/// mean probability, then to the lowest index.
pub fn majority_vote_aggregate(preds: &[PatchPrediction]) -> Result<usize> {
    let c = preds
        .first()
        .ok_or_else(|| Error::Validation("majority vote over zero patches".into()))?
        .probs
        .len();
    let mut counts = vec![0usize; c];
    let mut prob_sum = vec![0.0f64; c];
    for p in preds {
        if p.probs.len() != c || p.label >= c {
            return Err(Error::Validation("inconsistent class count in predictions".into()));
        }
        counts[p.label] += 1;
        for (s, &q) in prob_sum.iter_mut().zip(&p.probs) {
            *s += q as f64;
        }
    }
    let top = *counts.iter().max().expect("non-empty");
    let mut best: Option<usize> = None;
    for k in (0..c).filter(|&k| counts[k] == top) {
        if best.is_none_or(|b| prob_sum[k] > prob_sum[b]) {
            best = Some(k);
        }
    }
    Ok(best.expect("at least one class has the top count"))
}

/// Slide-level output of the forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlidePrediction {
    pub slide_id: String,
    pub label: usize,
    pub vote_fractions: Vec<f64>,
}

pub fn predict_slides(model: &ForestModel, m: &SlideFeatureMatrix) -> Result<Vec<SlidePrediction>> {
    m.slide_ids
        .iter()
        .zip(&m.features)
        .map(|(id, row)| {
            let (label, vote_fractions) = rf_predict(model, row)?;
            Ok(SlidePrediction {
                slide_id: id.clone(),
                label,
                vote_fractions,
            })
        })
        .collect()
}

pub fn save_forest(model: &ForestModel, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string(model).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_forest(path: &Path) -> Result<ForestModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn write_slide_predictions(preds: &[SlidePrediction], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut out = Vec::new();
    for p in preds {
        serde_json::to_writer(&mut out, p).map_err(|e| Error::json(path, e))?;
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn read_slide_predictions(path: &Path) -> Result<Vec<SlidePrediction>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(slide: &str, label: usize, probs: [f32; 5]) -> PatchPrediction {
        PatchPrediction {
            slide_id: slide.into(),
            x: 0,
            y: 0,
            probs: probs.to_vec(),
            label,
        }
    }

    fn onehot(slide: &str, label: usize) -> PatchPrediction {
        let mut p = [0.0; 5];
        p[label] = 1.0;
        pred(slide, label, p)
    }

    #[test]
    fn histogram_counts() {
        let preds: Vec<_> = [0, 0, 1, 4].iter().map(|&l| onehot("s", l)).collect();
        let labels = BTreeMap::from([("s".to_string(), 0)]);
        let m = slide_histogram_features(&preds, &labels, 5).unwrap();
        assert_eq!(m.features, vec![vec![2.0, 1.0, 0.0, 0.0, 1.0]]);
        let mut rev = preds.clone();
        rev.reverse();
        assert_eq!(slide_histogram_features(&rev, &labels, 5).unwrap(), m);

        let labels = BTreeMap::from([("s".to_string(), 0), ("empty".to_string(), 1)]);
        let err = slide_histogram_features(&preds, &labels, 5).unwrap_err();
        assert!(err.to_string().contains("empty"));
    }

    #[test]
    fn zscore_hand_values() {
        let rows = vec![vec![2.0, 7.0], vec![4.0, 7.0], vec![6.0, 7.0]];
        let z = zscore_fit(&rows).unwrap();
        assert_eq!(z.mean, vec![4.0, 7.0]);
        assert!((z.sd[0] - 1.632993161855452).abs() < 1e-12);
        let out = zscore_apply(&rows, &z).unwrap();
        let expect = [-1.224744871391589, 0.0, 1.224744871391589];
        for (r, e) in out.iter().zip(expect) {
            assert!((r[0] - e).abs() < 1e-12);
            assert_eq!(r[1], 0.0);
        }
        assert!(zscore_fit(&rows[..1]).is_err());
        assert!(zscore_apply(&[vec![1.0]], &z).is_err());
    }

    #[test]
    fn majority_vote_rules() {
        let preds: Vec<_> = [2, 2, 3].iter().map(|&l| onehot("s", l)).collect();
        assert_eq!(majority_vote_aggregate(&preds).unwrap(), 2);
        let tie = vec![
            pred("s", 1, [0.0, 0.6, 0.4, 0.0, 0.0]),
            pred("s", 1, [0.0, 0.6, 0.4, 0.0, 0.0]),
            pred("s", 2, [0.0, 0.6, 0.7, 0.0, 0.0]),
            pred("s", 2, [0.0, 0.6, 0.7, 0.0, 0.0]),
        ];
        // mean prob of class 1 = 0.6 > class 2 = 0.55
        assert_eq!(majority_vote_aggregate(&tie).unwrap(), 1);
        assert_eq!(majority_vote_aggregate(&[onehot("s", 4)]).unwrap(), 4);
        assert!(majority_vote_aggregate(&[]).is_err());
    }

    #[test]
    fn forest_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = SlideFeatureMatrix {
            slide_ids: (0..6).map(|i| i.to_string()).collect(),
            features: (0..6).map(|i| vec![i as f64, (6 - i) as f64]).collect(),
            labels: vec![0, 0, 0, 1, 1, 1],
        };
        let model = train_slide_forest(&m, 2, ForestParams { n_trees: 7, ..ForestParams::default() }).unwrap();
        let path = dir.path().join("forest.json");
        save_forest(&model, &path).unwrap();
        assert_eq!(load_forest(&path).unwrap(), model);
        let preds = predict_slides(&model, &m).unwrap();
        for p in &preds {
            assert!((p.vote_fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let ppath = dir.path().join("slides.jsonl");
        write_slide_predictions(&preds, &ppath).unwrap();
        assert_eq!(read_slide_predictions(&ppath).unwrap(), preds);
    }
}
