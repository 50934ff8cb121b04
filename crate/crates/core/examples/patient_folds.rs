//! Patient-grouped cross-validation: 3 folds, each held-out fold split into
//! validation and test halves that swap roles, giving 6 runs.

use std::collections::BTreeSet;

use prorez::folds::{assign_patient_folds, make_run_plans};

fn main() -> anyhow::Result<()> {
    let patients: Vec<String> = (0..25).map(|i| format!("p{i:03}")).collect();
    let plan = assign_patient_folds(&patients, 3, 42)?;
    println!("fold sizes: {:?}", plan.fold_sizes());
    let runs = make_run_plans(&plan)?;
    let mut tested = BTreeSet::new();
    for r in &runs {
        r.check_disjoint()?;
        println!(
            "{}: train {:>2}, val {:>2}, test {:>2}",
            r.run_id(),
            r.train_patients.len(),
            r.val_patients.len(),
            r.test_patients.len()
        );
        for p in &r.test_patients {
            assert!(tested.insert(p.clone()), "{p} tested twice");
        }
    }
    println!("every patient tested exactly once: {}", tested.len() == patients.len());
    Ok(())
}
