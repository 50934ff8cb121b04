use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use super::layout::RunLayout;
use crate::aggregate::{majority_vote_aggregate, read_slide_predictions};
use crate::error::{Error, Result};
use crate::folds::RunPlan;
use crate::metrics::{aggregate_runs, evaluate, roc_points, AggregateMode, MetricsReport, ScoredItem};
use crate::trainer::{read_predictions, PatchPrediction};
use crate::wsi::SlideManifest;

/// Summary reports of one evaluated classifier and the files written.
#[derive(Debug, Clone)]
pub struct StageEvaluation {
    pub patch_mean: MetricsReport,
    pub patch_pooled: MetricsReport,
    pub slide_mean: MetricsReport,
    pub slide_pooled: MetricsReport,
    /// Slide labels by patch majority vote, pooled; a comparator for the
    /// forest.
    pub majority_pooled: MetricsReport,
    pub files: Vec<PathBuf>,
}

fn write_items(items: &[ScoredItem], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for i in items {
        serde_json::to_writer(&mut out, i).map_err(|e| Error::json(path, e))?;
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

fn read_items(path: &Path) -> Result<Vec<ScoredItem>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Scored items of one run's test set at patch level, at slide level from
/// the forest, and at slide level by majority vote.
fn run_items(
    layout: &RunLayout,
    stage: &str,
    run: &RunPlan,
    slides: &BTreeMap<String, (String, usize)>,
) -> Result<[Vec<ScoredItem>; 3]> {
    let run_id = run.run_id();
    let is_test = |slide: &str| -> Result<bool> {
        let (patient, _) = slides
            .get(slide)
            .ok_or_else(|| Error::Validation(format!("prediction for unknown slide {slide}")))?;
        Ok(run.test_patients.contains(patient))
    };
    let mut by_slide: BTreeMap<String, Vec<PatchPrediction>> = BTreeMap::new();
    let mut patches = Vec::new();
    for p in read_predictions(&layout.patch_predictions(stage, &run_id))? {
        if !is_test(&p.slide_id)? {
            continue;
        }
        patches.push(ScoredItem {
            id: format!("{}@{},{}", p.slide_id, p.x, p.y),
            label: slides[&p.slide_id].1,
            pred: p.label,
            scores: p.probs.iter().map(|&q| q as f64).collect(),
        });
        by_slide.entry(p.slide_id.clone()).or_default().push(p);
    }
    let mut forest = Vec::new();
    for s in read_slide_predictions(&layout.slide_predictions(stage, &run_id))? {
        if !is_test(&s.slide_id)? {
            return Err(Error::Leakage(format!(
                "run {run_id}: slide {} scored by the forest is not a test slide",
                s.slide_id
            )));
        }
        forest.push(ScoredItem {
            label: slides[&s.slide_id].1,
            id: s.slide_id,
            pred: s.label,
            scores: s.vote_fractions,
        });
    }
    let mut majority = Vec::new();
    for (slide, preds) in &by_slide {
        let c = preds[0].probs.len();
        let mut counts = vec![0.0; c];
        for p in preds {
            counts[p.label] += 1.0 / preds.len() as f64;
        }
        majority.push(ScoredItem {
            id: slide.clone(),
            label: slides[slide].1,
            pred: majority_vote_aggregate(preds)?,
            scores: counts,
        });
    }
    Ok([patches, forest, majority])
}

/// Per-run, mean-over-runs and pooled metrics of one classifier, written
/// under `reports/<stage>/`.
pub fn evaluate_stage(
    layout: &RunLayout,
    stage: &str,
    manifest: &SlideManifest,
    runs: &[RunPlan],
    num_classes: usize,
) -> Result<StageEvaluation> {
    let slides = manifest.slides();
    let dir = layout.stage_reports(stage);
    let mut files = Vec::new();
    let mut per_level: [Vec<Vec<ScoredItem>>; 3] = Default::default();
    for run in runs {
        let items = run_items(layout, stage, run, &slides)?;
        for (name, set) in ["patch", "slide", "slide_majority"].iter().zip(&items) {
            let path = dir.join(format!("{}.{name}.json", run.run_id()));
            evaluate(set, num_classes)?.save(&path)?;
            files.push(path);
        }
        for (acc, set) in per_level.iter_mut().zip(items) {
            acc.push(set);
        }
    }
    let mut summaries = Vec::new();
    for (name, sets) in ["patch", "slide", "slide_majority"].iter().zip(&per_level) {
        let mean = aggregate_runs(sets, num_classes, AggregateMode::MeanOverRuns)?;
        let pooled = aggregate_runs(sets, num_classes, AggregateMode::Pooled)?;
        for (tag, r) in [("mean", &mean), ("pooled", &pooled)] {
            let json = dir.join(format!("{name}_{tag}.json"));
            let csv = dir.join(format!("{name}_{tag}_confusion.csv"));
            r.save(&json)?;
            write_text(&csv, &r.confusion.to_csv())?;
            files.extend([json, csv]);
        }
        let items_path = dir.join(format!("{name}_items.jsonl"));
        let all: Vec<ScoredItem> = sets.iter().flatten().cloned().collect();
        write_items(&all, &items_path)?;
        files.push(items_path);
        summaries.push((mean, pooled));
    }
    let mut it = summaries.into_iter();
    let (patch_mean, patch_pooled) = it.next().expect("three levels");
    let (slide_mean, slide_pooled) = it.next().expect("three levels");
    let (_, majority_pooled) = it.next().expect("three levels");
    Ok(StageEvaluation {
        patch_mean,
        patch_pooled,
        slide_mean,
        slide_pooled,
        majority_pooled,
        files,
    })
}

fn table_row(out: &mut String, classifier: &str, level: &str, r: Option<&MetricsReport>, c: usize) {
    let _ = write!(out, "{classifier},{level}");
    let num = |v: f64| format!("{v:.6}");
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), num);
    match r {
        Some(r) => {
            for k in 0..c {
                let cell = if r.per_class_defined[k] { num(r.per_class_accuracy[k]) } else { "NA".into() };
                let _ = write!(out, ",{cell}");
            }
            let _ = writeln!(
                out,
                ",{},{},{},{}",
                num(r.overall_accuracy),
                opt(r.kappa),
                opt(r.auc_hand_till),
                num(r.macro_f1)
            );
        }
        None => {
            for _ in 0..c + 4 {
                out.push_str(",NA");
            }
            out.push('\n');
        }
    }
}

/// Writes `reports/table_mean.csv`, `reports/table_pooled.csv` (one row per
/// classifier and level, `NA` where a classifier was not evaluated) and
/// one-vs-rest ROC points under `reports/roc/`.
pub fn write_report(layout: &RunLayout, evaluated: &[&str], num_classes: usize) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for tag in ["mean", "pooled"] {
        let mut out = String::from("classifier,level");
        for k in 0..num_classes {
            let _ = write!(out, ",class_{k}");
        }
        out.push_str(",accuracy,kappa,auc,f1\n");
        for stage in super::CLASSIFIERS {
            for level in ["patch", "slide"] {
                let report = if evaluated.contains(&stage) {
                    Some(MetricsReport::load(
                        &layout.stage_reports(stage).join(format!("{level}_{tag}.json")),
                    )?)
                } else {
                    None
                };
                table_row(&mut out, stage, level, report.as_ref(), num_classes);
            }
        }
        let path = layout.reports().join(format!("table_{tag}.csv"));
        write_text(&path, &out)?;
        files.push(path);
    }
    for stage in evaluated {
        for level in ["patch", "slide"] {
            let items = read_items(&layout.stage_reports(stage).join(format!("{level}_items.jsonl")))?;
            for k in 0..num_classes {
                let mut out = String::from("fpr,tpr\n");
                for (fpr, tpr) in roc_points(&items, k) {
                    let _ = writeln!(out, "{fpr:.6},{tpr:.6}");
                }
                let path = layout.reports().join("roc").join(format!("{stage}_{level}_class{k}.csv"));
                write_text(&path, &out)?;
                files.push(path);
            }
        }
    }
    Ok(files)
}
