//! Invariants over random inputs.

use std::collections::BTreeSet;

use proptest::prelude::*;
use prorez::aggregate::{rf_predict, rf_train, zscore_apply, zscore_fit, ForestParams};
use prorez::folds::{assign_patient_folds, make_run_plans};
use prorez::metrics::{confusion_matrix, hand_till_auc, kappa, per_class_and_overall};
use prorez::net::{build_network, Checkpoint, CheckpointMeta, NetworkSpec};
use prorez::tensor::{softmax_cross_entropy, Tensor4};
use prorez::trainer::standardize;
use prorez::wsi::{lanczos_resize, Plane};

fn patients(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("p{i:04}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition_patients(n in 6usize..150, k in 2usize..6, seed in any::<u64>()) {
        prop_assume!(n >= 2 * k);
        let ids = patients(n);
        let plan = assign_patient_folds(&ids, k, seed).unwrap();
        let sizes = plan.fold_sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);

        let runs = make_run_plans(&plan).unwrap();
        prop_assert_eq!(runs.len(), 2 * k);
        let mut tested = BTreeSet::new();
        for r in &runs {
            r.check_disjoint().unwrap();
            let all: BTreeSet<&String> =
                r.train_patients.iter().chain(&r.val_patients).chain(&r.test_patients).collect();
            prop_assert_eq!(all.len(), n);
            for p in &r.test_patients {
                prop_assert!(tested.insert(p.clone()), "{} tested twice", p);
            }
        }
        prop_assert_eq!(tested.len(), n);

        // input order does not matter
        let mut reversed = ids.clone();
        reversed.reverse();
        prop_assert_eq!(assign_patient_folds(&reversed, k, seed).unwrap(), plan);
    }

    #[test]
    fn lanczos_is_linear_and_keeps_constants(
        a in prop::collection::vec(0.0f64..1.0, 32 * 32),
        b in prop::collection::vec(0.0f64..1.0, 32 * 32),
        alpha in -2.0f64..2.0,
        c in 0.0f64..1.0,
        out in prop::sample::select(vec![16usize, 8, 4]),
    ) {
        let pa = lanczos_resize(&Plane::new(32, a.clone()).unwrap(), out, 3).unwrap();
        let pb = lanczos_resize(&Plane::new(32, b.clone()).unwrap(), out, 3).unwrap();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + y + c).collect();
        let pm = lanczos_resize(&Plane::new(32, mix).unwrap(), out, 3).unwrap();
        for i in 0..out * out {
            let want = alpha * pa.data()[i] + pb.data()[i] + c;
            prop_assert!((pm.data()[i] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn class_scores_stay_in_range(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200),
    ) {
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let cm = confusion_matrix(&t, &p, 4).unwrap();
        prop_assert_eq!(cm.total() as usize, t.len());
        let s = per_class_and_overall(&cm).unwrap();
        prop_assert!((0.0..=1.0).contains(&s.overall));
        prop_assert!((0.0..=1.0).contains(&s.macro_f1));
        if let Ok(k) = kappa(&cm) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&k));
        }
    }

    #[test]
    fn hand_till_ignores_monotone_rescaling(
        rows in prop::collection::vec((0usize..3, prop::collection::vec(0.0f64..1.0, 3)), 4..60),
    ) {
        let (labels, scores): (Vec<usize>, Vec<Vec<f64>>) = rows.into_iter().unzip();
        prop_assume!(labels.iter().collect::<BTreeSet<_>>().len() >= 2);
        let auc = hand_till_auc(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&auc));
        let warped: Vec<Vec<f64>> = scores.iter().map(|r| r.iter().map(|s| (3.0 * s).exp() - 7.0).collect()).collect();
        prop_assert!((hand_till_auc(&warped, &labels).unwrap() - auc).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_gradient_rows_sum_to_zero(
        logits in prop::collection::vec(-20.0f64..20.0, 12),
        labels in prop::collection::vec(0usize..4, 3),
    ) {
        let x = Tensor4::from_vec([3, 4, 1, 1], logits).unwrap();
        let (loss, grad) = softmax_cross_entropy(&x, &labels).unwrap();
        prop_assert!(loss >= 0.0 && loss.is_finite());
        for i in 0..3 {
            prop_assert!(grad.item(i).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn standardization_ignores_brightness_and_contrast(
        v in prop::collection::vec(0.0f64..1.0, 16..100),
        gain in 0.1f64..10.0,
        offset in -5.0f64..5.0,
    ) {
        let a = standardize(&v);
        let b = standardize(&v.iter().map(|x| gain * x + offset).collect::<Vec<_>>());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-3, "{} vs {}", x, y);
        }
    }

    #[test]
    fn zscore_centres_training_columns(rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 2..40)) {
        let z = zscore_fit(&rows).unwrap();
        let t = zscore_apply(&rows, &z).unwrap();
        for j in 0..3 {
            let mean = t.iter().map(|r| r[j]).sum::<f64>() / t.len() as f64;
            prop_assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn forests_are_seed_deterministic_and_vote_fractions_sum_to_one(
        rows in prop::collection::vec((0usize..3, prop::collection::vec(0.0f64..1.0, 4)), 6..60),
        seed in any::<u64>(),
    ) {
        let (y, x): (Vec<usize>, Vec<Vec<f64>>) = rows.into_iter().unzip();
        let params = ForestParams { n_trees: 7, max_features: 2, seed, bootstrap: true };
        let a = rf_train(&x, &y, 3, params).unwrap();
        prop_assert_eq!(&a, &rf_train(&x, &y, 3, params).unwrap());
        for row in &x {
            let (label, fractions) = rf_predict(&a, row).unwrap();
            prop_assert!((fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(fractions[label] >= *fractions.iter().max_by(|p, q| p.total_cmp(q)).unwrap());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoints_round_trip(
        widths in prop::collection::vec(1usize..6, 1..4),
        hidden in prop::collection::vec(1usize..5, 0..2),
        classes in 2usize..6,
        seed in any::<u64>(),
    ) {
        let side = 1 << widths.len();
        let spec = NetworkSpec::vgg(&widths, 1, hidden, classes, side, 1);
        let model = build_network::<f32>(&spec, seed).unwrap();
        let ckpt = Checkpoint::new(
            model,
            CheckpointMeta { stage: "stage1".into(), seed, config_digest: "d".into(), created_unix: None },
        );
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.meta.seed, seed);
        prop_assert_eq!(back.model.param_arrays(), ckpt.model.param_arrays());
    }
}
