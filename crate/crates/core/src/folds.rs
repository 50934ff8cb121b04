//! Patient-grouped k-fold cross-validation where each held-out fold is split
//! into two halves that take turns as validation and test set.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldPlan {
    pub seed: u64,
    pub k: usize,
    pub fold_of_patient: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_members(&self, fold: usize) -> Vec<String> {
        self.fold_of_patient
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(p, _)| p.clone())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.fold_of_patient.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunPlan {
    /// Held-out fold.
    pub fold: usize,
    /// 0: first half validates, second half tests; 1: the reverse.
    pub swap: usize,
    pub train_patients: BTreeSet<String>,
    pub val_patients: BTreeSet<String>,
    pub test_patients: BTreeSet<String>,
}

impl RunPlan {
    /// `f<fold>s<swap>`, used for file names.
    pub fn run_id(&self) -> String {
        format!("f{}s{}", self.fold, self.swap)
    }

    /// Fails if any patient is in more than one of train/val/test.
    pub fn check_disjoint(&self) -> Result<()> {
        let pairs = [
            ("train", &self.train_patients, "val", &self.val_patients),
            ("train", &self.train_patients, "test", &self.test_patients),
            ("val", &self.val_patients, "test", &self.test_patients),
        ];
        for (an, a, bn, b) in pairs {
            if let Some(p) = a.intersection(b).next() {
                return Err(Error::Leakage(format!(
                    "run {}: patient {p} is in both {an} and {bn}",
                    self.run_id()
                )));
            }
        }
        Ok(())
    }
}

/// Shuffles the (sorted) patient ids with a seeded generator and deals them
/// round-robin into `k` folds, so fold sizes differ by at most one and the
/// result does not depend on the input order.
pub fn assign_patient_folds(patient_ids: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Validation(format!("need at least 2 folds, got {k}")));
    }
    let mut ids = patient_ids.to_vec();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Validation(format!("duplicate patient id {}", w[0])));
    }
    if ids.len() < k {
        return Err(Error::Validation(format!(
            "{} patients cannot fill {k} folds",
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let fold_of_patient = ids.into_iter().enumerate().map(|(i, p)| (p, i % k)).collect();
    Ok(FoldPlan {
        seed,
        k,
        fold_of_patient,
    })
}

/// Two runs per fold. The held-out fold is shuffled and cut into halves A
/// and B, A taking the extra patient when the count is odd; run `(f, 0)`
/// validates on A and tests on B, run `(f, 1)` the reverse. Every patient is
/// therefore tested exactly once over all runs.
pub fn make_run_plans(plan: &FoldPlan) -> Result<Vec<RunPlan>> {
    let mut runs = Vec::with_capacity(2 * plan.k);
    for fold in 0..plan.k {
        let mut held = plan.fold_members(fold);
        if held.len() < 2 {
            return Err(Error::Validation(format!(
                "fold {fold} has {} patient(s); cannot split into validation and test",
                held.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ (0xa076_1d64_78bd_642f_u64.wrapping_mul(fold as u64 + 1)));
        held.shuffle(&mut rng);
        let cut = held.len().div_ceil(2);
        let a: BTreeSet<String> = held[..cut].iter().cloned().collect();
        let b: BTreeSet<String> = held[cut..].iter().cloned().collect();
        let train: BTreeSet<String> = plan
            .fold_of_patient
            .iter()
            .filter(|(_, &f)| f != fold)
            .map(|(p, _)| p.clone())
            .collect();
        for (swap, (val, test)) in [(&a, &b), (&b, &a)].into_iter().enumerate() {
            runs.push(RunPlan {
                fold,
                swap,
                train_patients: train.clone(),
                val_patients: val.clone(),
                test_patients: test.clone(),
            });
        }
    }
    Ok(runs)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    plan: FoldPlan,
    runs: Vec<RunPlan>,
}

/// Writes the fold assignment and its run plans as one JSON document.
pub fn save_plans(plan: &FoldPlan, runs: &[RunPlan], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = PlanFile {
        plan: plan.clone(),
        runs: runs.to_vec(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_plans(path: &Path) -> Result<(FoldPlan, Vec<RunPlan>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: PlanFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    Ok((file.plan, file.runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:03}")).collect()
    }

    #[test]
    fn balanced_folds() {
        let plan = assign_patient_folds(&ids(159), 3, 1).unwrap();
        assert_eq!(plan.fold_sizes(), vec![53, 53, 53]);
        let plan = assign_patient_folds(&ids(50), 3, 1).unwrap();
        assert_eq!(plan.fold_sizes(), vec![17, 17, 16]);
    }

    #[test]
    fn deterministic_and_order_free() {
        let a = assign_patient_folds(&ids(20), 3, 7).unwrap();
        let mut rev = ids(20);
        rev.reverse();
        assert_eq!(a, assign_patient_folds(&rev, 3, 7).unwrap());
        assert_ne!(a, assign_patient_folds(&ids(20), 3, 8).unwrap());
    }

    #[test]
    fn twelve_patient_enumeration() {
        let plan = assign_patient_folds(&ids(12), 3, 3).unwrap();
        let runs = make_run_plans(&plan).unwrap();
        assert_eq!(runs.len(), 6);
        for p in ids(12) {
            let count = |f: fn(&RunPlan) -> &BTreeSet<String>| runs.iter().filter(|r| f(r).contains(&p)).count();
            assert_eq!(count(|r| &r.test_patients), 1);
            assert_eq!(count(|r| &r.val_patients), 1);
            assert_eq!(count(|r| &r.train_patients), 4);
        }
        for r in &runs {
            r.check_disjoint().unwrap();
            assert_eq!(r.val_patients.len(), 2);
        }
    }

    #[test]
    fn errors() {
        let mut dup = ids(5);
        dup.push("p001".into());
        assert!(assign_patient_folds(&dup, 3, 0).is_err());
        assert!(assign_patient_folds(&ids(2), 3, 0).is_err());
        let plan = assign_patient_folds(&ids(5), 3, 0).unwrap();
        assert!(make_run_plans(&plan).is_err());
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let plan = assign_patient_folds(&ids(9), 3, 2).unwrap();
        let runs = make_run_plans(&plan).unwrap();
        let path = dir.path().join("folds.json");
        save_plans(&plan, &runs, &path).unwrap();
        assert_eq!(load_plans(&path).unwrap(), (plan, runs));
    }
}
