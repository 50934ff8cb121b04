//! Training on small in-memory cohorts: capacity, patient isolation,
//! determinism and frozen transfer.

use prorez::folds::{assign_patient_folds, make_run_plans, RunPlan};
use prorez::net::{BlockSpec, NetworkSpec};
use prorez::trainer::{
    accuracy, fit, pretrain_backbone, train_stage1, train_stage2, PatchMeta, PatchSet, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CLASSES: usize = 3;

/// Oriented stripes (class 0 horizontal, 1 vertical, 2 checkerboard) plus
/// noise, at 16×16; `patients` per class, one slide each, six patches per
/// slide. Returns the 16-pixel set and its 2×2 mean-pooled 8-pixel copy.
fn cohort(patients: usize, seed: u64) -> (PatchSet, PatchSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut meta, mut hi, mut lo) = (Vec::new(), Vec::new(), Vec::new());
    for class in 0..CLASSES {
        for p in 0..patients {
            let patient = format!("c{class}p{p}");
            for k in 0..6 {
                meta.push(PatchMeta {
                    slide_id: format!("{patient}-s0"),
                    patient_id: patient.clone(),
                    class_label: class,
                    x: 16 * k,
                    y: 0,
                });
                let img: Vec<f32> = (0..256)
                    .map(|i| {
                        let (x, y) = (i % 16, i / 16);
                        let s = match class {
                            0 => (y / 2) % 2,
                            1 => (x / 2) % 2,
                            _ => (x / 2 + y / 2) % 2,
                        } as f32;
                        s - 0.5 + rng.random_range(-0.3..0.3)
                    })
                    .collect();
                for y in 0..8 {
                    for x in 0..8 {
                        let at = |dx: usize, dy: usize| img[(2 * y + dy) * 16 + 2 * x + dx];
                        lo.push((at(0, 0) + at(1, 0) + at(0, 1) + at(1, 1)) / 4.0);
                    }
                }
                hi.extend(img);
            }
        }
    }
    (
        PatchSet::from_parts(16, 2, meta.clone(), hi).unwrap(),
        PatchSet::from_parts(8, 4, meta, lo).unwrap(),
    )
}

fn first_run(data: &PatchSet) -> RunPlan {
    let mut patients: Vec<String> = data.meta().iter().map(|m| m.patient_id.clone()).collect();
    patients.dedup();
    let plan = assign_patient_folds(&patients, 3, 11).unwrap();
    make_run_plans(&plan).unwrap().remove(0)
}

fn cfg(epochs: usize, level: usize, seed: u64) -> TrainConfig {
    TrainConfig { epochs, seed, batch_size: 8, lr: 0.02, ..TrainConfig::desk(level) }
}

fn small_backbone(classes: usize) -> NetworkSpec {
    NetworkSpec::vgg(&[4, 8], 1, vec![], classes, 8, 1)
}

/// Copy of `data` with every pixel of the listed patients replaced by NaN.
fn poisoned(data: &PatchSet, patients: &std::collections::BTreeSet<String>) -> PatchSet {
    let side = data.side();
    let mut pixels = Vec::with_capacity(data.len() * side * side);
    for (i, m) in data.meta().iter().enumerate() {
        if patients.contains(&m.patient_id) {
            pixels.extend(std::iter::repeat_n(f32::NAN, side * side));
        } else {
            pixels.extend_from_slice(data.pixels(i));
        }
    }
    PatchSet::from_parts(side, data.level(), data.meta().to_vec(), pixels).unwrap()
}

#[test]
fn memorizes_ten_noise_patches() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let meta: Vec<PatchMeta> = (0..10)
        .map(|i| PatchMeta {
            slide_id: format!("s{i}"),
            patient_id: format!("p{i}"),
            class_label: i % 2,
            x: 0,
            y: 0,
        })
        .collect();
    let pixels: Vec<f32> = (0..10 * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
    let data = PatchSet::from_parts(8, 1, meta, pixels).unwrap();
    let model = prorez::net::build_network::<f32>(&NetworkSpec::vgg(&[8, 16], 1, vec![], 2, 8, 1), 3).unwrap();
    let all: Vec<usize> = (0..10).collect();
    let trainable = vec![true; model.layers().len()];
    let config = TrainConfig {
        epochs: 300,
        batch_size: 10,
        lr: 0.05,
        lr_decay_fraction: 1.0,
        select_on_val: false,
        ..TrainConfig::desk(1)
    };
    let (model, log) = fit(model, &data, &all, &[], &trainable, &config).unwrap();
    assert_eq!(accuracy(&model, &data, &all, 10).unwrap(), 1.0);
    assert!(*log.epoch_loss.last().unwrap() < 0.05, "{:?}", &log.epoch_loss[290..]);
}

#[test]
fn test_patients_never_reach_training() {
    let (_, lo) = cohort(4, 1);
    let run = first_run(&lo);
    let pre = pretrain_backbone(&small_backbone(CLASSES), &lo, &cfg(2, 4, 1)).unwrap();
    let clean = train_stage1(&pre.checkpoint, &lo, &run, CLASSES, &cfg(3, 4, 2)).unwrap();
    let blinded = train_stage1(&pre.checkpoint, &poisoned(&lo, &run.test_patients), &run, CLASSES, &cfg(3, 4, 2))
        .unwrap();
    assert_eq!(clean.checkpoint.to_bytes(), blinded.checkpoint.to_bytes());
    assert_eq!(clean.log, blinded.log);
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let (_, lo) = cohort(3, 2);
    let run = first_run(&lo);
    let train = || {
        let pre = pretrain_backbone(&small_backbone(CLASSES), &lo, &cfg(2, 4, 7)).unwrap();
        train_stage1(&pre.checkpoint, &lo, &run, CLASSES, &cfg(2, 4, 8)).unwrap().checkpoint.to_bytes()
    };
    let reference = train();
    for threads in [1, 3] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        assert_eq!(pool.install(train), reference, "{threads} threads");
    }
    let other = {
        let pre = pretrain_backbone(&small_backbone(CLASSES), &lo, &cfg(2, 4, 7)).unwrap();
        train_stage1(&pre.checkpoint, &lo, &run, CLASSES, &cfg(2, 4, 9)).unwrap().checkpoint.to_bytes()
    };
    assert_ne!(other, reference, "a different seed should change the weights");
}

#[test]
fn stage_two_learns_and_freezing_keeps_transferred_weights() {
    let (hi, lo) = cohort(4, 3);
    let run = first_run(&lo);
    let pre = pretrain_backbone(&small_backbone(CLASSES), &lo, &cfg(3, 4, 1)).unwrap();
    let s1 = train_stage1(&pre.checkpoint, &lo, &run, CLASSES, &cfg(6, 4, 2)).unwrap();
    let blocks = [BlockSpec::new(1, 4), BlockSpec::new(1, 4)];

    let s2 = train_stage2(&s1.checkpoint, &hi, &blocks, &run, &cfg(30, 2, 3)).unwrap();
    let test = hi.split(&run).unwrap().test;
    let acc = accuracy(&s2.checkpoint.model, &hi, &test, 64).unwrap();
    assert!(acc >= 0.9, "stage 2 test accuracy {acc}");

    let frozen = train_stage2(
        &s1.checkpoint,
        &hi,
        &blocks,
        &run,
        &TrainConfig { freeze_transferred: true, ..cfg(2, 2, 3) },
    )
    .unwrap();
    let before = s1.checkpoint.model.param_arrays();
    let after = frozen.checkpoint.model.param_arrays();
    // surgery drops stage 1's first block (one convolution: weight and bias)
    // and prepends two new one-convolution blocks
    let (removed, fresh) = (2, 2 * blocks.len());
    assert_eq!(after.len(), before.len() - removed + fresh);
    for (i, (a, b)) in after[fresh..].iter().zip(&before[removed..]).enumerate() {
        assert_eq!(a, b, "transferred array {i} changed while frozen");
    }
}
