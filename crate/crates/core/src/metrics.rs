//! Confusion matrices, per-class recall, overall accuracy, Cohen's kappa,
//! macro-F1 and the Hand–Till multiclass AUC.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(c: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; c]; c],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes() != self.classes() {
            return Err(Error::Shape(format!(
                "cannot add {0}×{0} and {1}×{1} confusion matrices",
                self.classes(),
                other.classes()
            )));
        }
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
        Ok(())
    }

    /// CSV with a header row `true\pred,0,1,...` and one row per true class.
    pub fn to_csv(&self) -> String {
        let c = self.classes();
        let mut s = String::from("true\\pred");
        for j in 0..c {
            s.push_str(&format!(",{j}"));
        }
        s.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            s.push_str(&i.to_string());
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], c: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Validation(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(c);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= c || p >= c {
            return Err(Error::Validation(format!(
                "label pair ({t}, {p}) outside [0, {c})"
            )));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

/// Cohen's kappa `(p_o − p_e) / (1 − p_e)`.
pub fn kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::UndefinedMetric("kappa of an empty confusion matrix".into()));
    }
    let n = total as f64;
    let p_o = cm.trace() as f64 / n;
    let p_e: f64 = (0..cm.classes())
        .map(|c| cm.row_sum(c) as f64 * cm.col_sum(c) as f64)
        .sum::<f64>()
        / (n * n);
    if p_e >= 1.0 {
        return Err(Error::UndefinedMetric(
            "kappa: chance agreement is 1 (both marginals concentrate on one class)".into(),
        ));
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    /// Recall per class; 0 where the class has no true items.
    pub recall: Vec<f64>,
    /// False where the class has no true items (recall undefined).
    pub defined: Vec<bool>,
    pub overall: f64,
    pub macro_f1: f64,
}

/// Per-class recall, overall accuracy and macro-F1. Macro-F1 averages over
/// the classes that occur in truth or prediction; a class that occurs in
/// neither has no F1 and is left out.
pub fn per_class_and_overall(cm: &ConfusionMatrix) -> Result<ClassScores> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::UndefinedMetric("accuracy of an empty confusion matrix".into()));
    }
    let c = cm.classes();
    let mut recall = Vec::with_capacity(c);
    let mut defined = Vec::with_capacity(c);
    let mut f1_sum = 0.0;
    let mut present = 0usize;
    for k in 0..c {
        let tp = cm.counts[k][k] as f64;
        let row = cm.row_sum(k) as f64;
        let col = cm.col_sum(k) as f64;
        let r = if row > 0.0 { tp / row } else { 0.0 };
        let p = if col > 0.0 { tp / col } else { 0.0 };
        recall.push(r);
        defined.push(row > 0.0);
        if row + col > 0.0 {
            present += 1;
            f1_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        }
    }
    Ok(ClassScores {
        recall,
        defined,
        overall: cm.trace() as f64 / total as f64,
        macro_f1: f1_sum / present as f64,
    })
}

/// Mid-ranks (1-based) of `values`; tied values share the mean of their
/// positions.
fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// `A(i|j)`: probability that a random class-`i` item scores higher on
/// column `i` than a random class-`j` item, ties counting one half.
fn pairwise_auc(scores: &[Vec<f64>], labels: &[usize], i: usize, j: usize) -> f64 {
    let mut vals = Vec::new();
    let mut is_i = Vec::new();
    for (row, &l) in scores.iter().zip(labels) {
        if l == i || l == j {
            vals.push(row[i]);
            is_i.push(l == i);
        }
    }
    let ranks = mid_ranks(&vals);
    let n_i = is_i.iter().filter(|&&b| b).count() as f64;
    let n_j = vals.len() as f64 - n_i;
    let s_i: f64 = ranks.iter().zip(&is_i).filter(|(_, &b)| b).map(|(r, _)| r).sum();
    (s_i - n_i * (n_i + 1.0) / 2.0) / (n_i * n_j)
}

/// Hand–Till multiclass AUC averaged over the unordered pairs of classes
/// present in `labels`.
pub fn hand_till_auc(scores: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} score rows but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let c = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|r| r.len() != c) {
        return Err(Error::Validation("score rows differ in length".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Validation(format!("label {l} outside [0, {c})")));
    }
    let present: Vec<usize> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if present.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs at least 2 classes present, found {}",
            present.len()
        )));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (a, &i) in present.iter().enumerate() {
        for &j in &present[a + 1..] {
            sum += (pairwise_auc(scores, labels, i, j) + pairwise_auc(scores, labels, j, i)) / 2.0;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// One scored prediction: a patch or a slide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub id: String,
    pub label: usize,
    pub pred: usize,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class_accuracy: Vec<f64>,
    pub per_class_defined: Vec<bool>,
    pub overall_accuracy: f64,
    /// `None` where undefined (chance agreement of 1).
    pub kappa: Option<f64>,
    pub macro_f1: f64,
    /// `None` where undefined (fewer than two classes present).
    pub auc_hand_till: Option<f64>,
    pub n_items: usize,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Every metric for one set of scored items over `c` classes. Kappa and
/// AUC are `None` where the items do not define them.
pub fn evaluate(items: &[ScoredItem], c: usize) -> Result<MetricsReport> {
    let y_true: Vec<usize> = items.iter().map(|i| i.label).collect();
    let y_pred: Vec<usize> = items.iter().map(|i| i.pred).collect();
    let cm = confusion_matrix(&y_true, &y_pred, c)?;
    let scores = per_class_and_overall(&cm)?;
    let scores_matrix: Vec<Vec<f64>> = items.iter().map(|i| i.scores.clone()).collect();
    if scores_matrix.iter().any(|r| r.len() != c) {
        return Err(Error::Validation(format!("score vectors must have {c} entries")));
    }
    Ok(MetricsReport {
        per_class_accuracy: scores.recall,
        per_class_defined: scores.defined,
        overall_accuracy: scores.overall,
        kappa: defined(kappa(&cm))?,
        macro_f1: scores.macro_f1,
        auc_hand_till: defined(hand_till_auc(&scores_matrix, &y_true))?,
        n_items: items.len(),
        confusion: cm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregateMode {
    /// Average of the per-run scalars; per-class recall, kappa and AUC
    /// average only over runs where they are defined. The confusion matrix
    /// is the sum.
    MeanOverRuns,
    /// Metrics recomputed from the concatenated items of every run.
    Pooled,
}

pub fn aggregate_runs(runs: &[Vec<ScoredItem>], c: usize, mode: AggregateMode) -> Result<MetricsReport> {
    if runs.is_empty() {
        return Err(Error::Validation("no runs to aggregate".into()));
    }
    match mode {
        AggregateMode::Pooled => {
            let mut seen = BTreeSet::new();
            for item in runs.iter().flatten() {
                if !seen.insert(item.id.as_str()) {
                    return Err(Error::Validation(format!(
                        "item {} appears in more than one run",
                        item.id
                    )));
                }
            }
            let all: Vec<ScoredItem> = runs.iter().flatten().cloned().collect();
            evaluate(&all, c)
        }
        AggregateMode::MeanOverRuns => {
            let reports = runs.iter().map(|r| evaluate(r, c)).collect::<Result<Vec<_>>>()?;
            mean_of_reports(&reports)
        }
    }
}

pub fn mean_of_reports(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Validation("no reports to average".into()))?;
    let c = first.per_class_accuracy.len();
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mean_defined = |f: fn(&MetricsReport) -> Option<f64>| {
        let vals: Vec<f64> = reports.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let mut confusion = ConfusionMatrix::zeros(c);
    let mut recall = vec![0.0; c];
    let mut present = vec![0usize; c];
    for r in reports {
        confusion.add(&r.confusion)?;
        for k in 0..c {
            if r.per_class_defined[k] {
                recall[k] += r.per_class_accuracy[k];
                present[k] += 1;
            }
        }
    }
    for k in 0..c {
        if present[k] > 0 {
            recall[k] /= present[k] as f64;
        }
    }
    Ok(MetricsReport {
        per_class_accuracy: recall,
        per_class_defined: present.iter().map(|&p| p > 0).collect(),
        overall_accuracy: mean(|r| r.overall_accuracy),
        kappa: mean_defined(|r| r.kappa),
        macro_f1: mean(|r| r.macro_f1),
        auc_hand_till: mean_defined(|r| r.auc_hand_till),
        n_items: reports.iter().map(|r| r.n_items).sum(),
        confusion,
    })
}

/// One-vs-rest ROC curve for `class`: `(false positive rate, true positive
/// rate)` points at every distinct score threshold, from (0, 0) to (1, 1).
pub fn roc_points(items: &[ScoredItem], class: usize) -> Vec<(f64, f64)> {
    let mut scored: Vec<(f64, bool)> = items.iter().map(|i| (i.scores[class], i.label == class)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let pos = scored.iter().filter(|s| s.1).count() as f64;
    let neg = scored.len() as f64 - pos;
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < scored.len() {
        let threshold = scored[i].0;
        while i < scored.len() && scored[i].0 == threshold {
            if scored[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let fpr = if neg > 0.0 { fp / neg } else { 0.0 };
        let tpr = if pos > 0.0 { tp / pos } else { 0.0 };
        points.push((fpr, tpr));
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix {
            counts: rows.iter().map(|r| r.to_vec()).collect(),
        }
    }

    #[test]
    fn counting() {
        assert_eq!(confusion_matrix(&[0, 0, 1], &[0, 1, 1], 2).unwrap(), cm(&[&[1, 1], &[0, 1]]));
        let id = confusion_matrix(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(id.trace(), 3);
        assert!(confusion_matrix(&[3], &[0], 3).is_err());
        let empty = confusion_matrix(&[], &[], 3).unwrap();
        assert_eq!(empty.total(), 0);
        assert!(kappa(&empty).is_err());
        assert!(per_class_and_overall(&empty).is_err());
    }

    #[test]
    fn kappa_values() {
        assert_eq!(kappa(&cm(&[&[50, 0], &[0, 50]])).unwrap(), 1.0);
        assert_eq!(kappa(&cm(&[&[25, 25], &[25, 25]])).unwrap(), 0.0);
        assert!((kappa(&cm(&[&[30, 10], &[20, 40]])).unwrap() - 0.4).abs() < 1e-12);
        assert!(matches!(kappa(&cm(&[&[5, 0], &[0, 0]])), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn recall_and_f1() {
        let s = per_class_and_overall(&cm(&[&[30, 10], &[20, 40]])).unwrap();
        assert_eq!(s.recall[0], 0.75);
        assert!((s.recall[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.overall - 0.7).abs() < 1e-15);
        let f1a = 2.0 * 0.6 * 0.75 / 1.35;
        let f1b = 2.0 * 0.8 * (2.0 / 3.0) / (0.8 + 2.0 / 3.0);
        assert!((s.macro_f1 - (f1a + f1b) / 2.0).abs() < 1e-12);
        assert!((s.macro_f1 - 0.6970).abs() < 1e-4);

        let absent = per_class_and_overall(&cm(&[&[3, 0, 0], &[0, 0, 0], &[1, 0, 2]])).unwrap();
        assert_eq!(absent.recall[1], 0.0);
        assert_eq!(absent.defined, vec![true, false, true]);
    }

    #[test]
    fn auc_examples() {
        let s: Vec<Vec<f64>> = [0.1, 0.2, 0.8, 0.9].iter().map(|&p| vec![1.0 - p, p]).collect();
        assert_eq!(hand_till_auc(&s, &[0, 0, 1, 1]).unwrap(), 1.0);
        let same = vec![vec![0.2, 0.3, 0.5]; 6];
        assert_eq!(hand_till_auc(&same, &[0, 1, 2, 0, 1, 2]).unwrap(), 0.5);
        assert!(hand_till_auc(&same, &[1; 6]).is_err());
    }

    #[test]
    fn aggregation_modes() {
        let items = |pairs: &[(usize, usize)], tag: &str| -> Vec<ScoredItem> {
            pairs
                .iter()
                .enumerate()
                .map(|(i, &(l, p))| {
                    let mut scores = vec![0.1; 2];
                    scores[p] = 0.9;
                    ScoredItem { id: format!("{tag}{i}"), label: l, pred: p, scores }
                })
                .collect()
        };
        let run = items(&[(0, 0), (1, 1), (0, 1), (1, 1)], "a");
        let one = vec![run.clone()];
        let single = evaluate(&run, 2).unwrap();
        assert_eq!(aggregate_runs(&one, 2, AggregateMode::MeanOverRuns).unwrap(), single);
        assert_eq!(aggregate_runs(&one, 2, AggregateMode::Pooled).unwrap(), single);
        assert!(aggregate_runs(&[run.clone(), run], 2, AggregateMode::Pooled).is_err());
    }

    #[test]
    fn undefined_metrics_are_none_and_skipped_in_means() {
        let item = |i: usize, l: usize, p: usize| ScoredItem {
            id: i.to_string(),
            label: l,
            pred: p,
            scores: if p == 0 { vec![0.8, 0.2] } else { vec![0.3, 0.7] },
        };
        let single_class = vec![item(0, 0, 0), item(1, 0, 0)];
        let r = evaluate(&single_class, 2).unwrap();
        assert_eq!((r.kappa, r.auc_hand_till), (None, None));
        assert_eq!(r.macro_f1, 1.0);
        let mixed = vec![item(2, 0, 0), item(3, 1, 1)];
        let mean = aggregate_runs(&[single_class, mixed], 2, AggregateMode::MeanOverRuns).unwrap();
        assert_eq!((mean.kappa, mean.auc_hand_till), (Some(1.0), Some(1.0)));
    }

    #[test]
    fn macro_f1_skips_absent_classes() {
        let s = per_class_and_overall(&cm(&[&[4, 0, 0], &[0, 0, 0], &[0, 0, 6]])).unwrap();
        assert_eq!(s.macro_f1, 1.0);
        let s = per_class_and_overall(&cm(&[&[2, 2, 0], &[0, 0, 0], &[0, 0, 6]])).unwrap();
        let f0 = 2.0 * 2.0 / (4.0 + 2.0);
        assert!((s.macro_f1 - (f0 + 0.0 + 1.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn roc_endpoints() {
        let items: Vec<ScoredItem> = (0..6)
            .map(|i| ScoredItem { id: i.to_string(), label: i % 2, pred: 0, scores: vec![0.5, i as f64 / 10.0] })
            .collect();
        let pts = roc_points(&items, 1);
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
    }
}
