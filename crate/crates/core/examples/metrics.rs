//! Classification metrics: per-class recall, accuracy, Cohen's kappa,
//! macro-F1 and the Hand–Till multiclass AUC, per run and across runs.

use prorez::metrics::{aggregate_runs, confusion_matrix, evaluate, kappa, per_class_and_overall, AggregateMode, ScoredItem};

fn item(id: &str, label: usize, scores: [f64; 3]) -> ScoredItem {
    let pred = (0..3).fold(0, |b, k| if scores[k] > scores[b] { k } else { b });
    ScoredItem { id: id.into(), label, pred, scores: scores.to_vec() }
}

fn main() -> anyhow::Result<()> {
    let y_true = [0, 0, 1, 1, 1, 2, 2, 2, 2];
    let y_pred = [0, 1, 1, 1, 2, 2, 2, 0, 2];
    let cm = confusion_matrix(&y_true, &y_pred, 3)?;
    print!("{}", cm.to_csv());
    let s = per_class_and_overall(&cm)?;
    println!("recall {:?}\naccuracy {:.4}  kappa {:.4}  macro-F1 {:.4}", s.recall, s.overall, kappa(&cm)?, s.macro_f1);

    let run_a = vec![
        item("a1", 0, [0.7, 0.2, 0.1]),
        item("a2", 1, [0.3, 0.5, 0.2]),
        item("a3", 2, [0.2, 0.3, 0.5]),
        item("a4", 2, [0.5, 0.1, 0.4]),
    ];
    let run_b = vec![
        item("b1", 0, [0.4, 0.4, 0.2]),
        item("b2", 1, [0.1, 0.8, 0.1]),
        item("b3", 2, [0.1, 0.2, 0.7]),
    ];
    let a = evaluate(&run_a, 3)?;
    println!("run a: accuracy {:.4}, Hand–Till AUC {:.4}", a.overall_accuracy, a.auc_hand_till.unwrap_or(f64::NAN));
    let runs = [run_a, run_b];
    let mean = aggregate_runs(&runs, 3, AggregateMode::MeanOverRuns)?;
    let pooled = aggregate_runs(&runs, 3, AggregateMode::Pooled)?;
    println!("mean over runs: accuracy {:.4}, AUC {:.4}", mean.overall_accuracy, mean.auc_hand_till.unwrap_or(f64::NAN));
    println!("pooled:         accuracy {:.4}, AUC {:.4}", pooled.overall_accuracy, pooled.auc_hand_till.unwrap_or(f64::NAN));
    Ok(())
}
