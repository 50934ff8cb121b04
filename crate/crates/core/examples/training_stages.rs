//! The two-stage training flow on a small synthetic cohort: proxy
//! pretraining, stage 1 at low resolution, surgery and stage 2 at twice the
//! resolution, and a randomly initialized baseline of the stage-2 topology.

use prorez::folds::{assign_patient_folds, make_run_plans};
use prorez::net::{BlockSpec, NetworkSpec};
use prorez::trainer::{accuracy, pretrain_backbone, train_baseline, train_stage1, train_stage2, BaselineKind, PatchSet, TrainConfig};
use prorez::wsi::{generate_proxy_slide, generate_synthetic_slide, ManifestBuilder, NUM_CLASSES, PROXY_CLASSES};

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let dir = tempfile::tempdir()?;
    let mut target = ManifestBuilder::new(&dir.path().join("target"), 128, &[2, 4])?;
    for class in 0..NUM_CLASSES {
        for p in 0..4 {
            let (mut s, poly) = generate_synthetic_slide(class, (class * 10 + p) as u64, 1024, 128)?;
            s.patient_id = format!("p{class}{p}");
            s.slide_id = format!("{}-s0", s.patient_id);
            target.add_slide(&s, &poly)?;
        }
    }
    let target = target.finish(&dir.path().join("target.jsonl"))?;
    let mut proxy = ManifestBuilder::new(&dir.path().join("proxy"), 128, &[4])?;
    for class in 0..PROXY_CLASSES.len() {
        let (s, poly) = generate_proxy_slide(class, class as u64, 1024, 128)?;
        proxy.add_slide(&s, &poly)?;
    }
    let proxy = proxy.finish(&dir.path().join("proxy.jsonl"))?;

    let low = PatchSet::load(&target, &dir.path().join("target"), 4)?;
    let high = PatchSet::load(&target, &dir.path().join("target"), 2)?;
    let proxy = PatchSet::load(&proxy, &dir.path().join("proxy"), 4)?;
    let plan = assign_patient_folds(&target.patients().into_iter().collect::<Vec<_>>(), 3, 0)?;
    let run = &make_run_plans(&plan)?[0];
    let split = high.split(run)?;

    let backbone = NetworkSpec::vgg(&[16, 32, 64], 1, vec![], PROXY_CLASSES.len(), 32, 1);
    let new_blocks = [BlockSpec::new(1, 8), BlockSpec::new(1, 16)];
    let cfg = |epochs, level, seed| TrainConfig { epochs, seed, max_patches_per_slide: Some(16), ..TrainConfig::desk(level) };

    let pre = pretrain_backbone(&backbone, &proxy, &cfg(4, 4, 1))?;
    println!("pretrain loss per epoch: {:.3?}", pre.log.epoch_loss);
    let s1 = train_stage1(&pre.checkpoint, &low, run, NUM_CLASSES, &cfg(6, 4, 2))?;
    println!("stage 1 val accuracy per epoch: {:.3?}", s1.log.val_accuracy);
    let s2 = train_stage2(&s1.checkpoint, &high, &new_blocks, run, &cfg(6, 2, 3))?;
    println!("stage 2 val accuracy per epoch: {:.3?}", s2.log.val_accuracy);
    let mut five = backbone.clone();
    five.head.num_classes = NUM_CLASSES;
    let b2 = train_baseline(BaselineKind::Stage2Random, &five, &new_blocks, &high, run, &cfg(6, 2, 4))?;
    println!("baseline val accuracy per epoch: {:.3?}", b2.log.val_accuracy);
    println!(
        "test patch accuracy: stage 2 {:.3}, baseline {:.3}",
        accuracy(&s2.checkpoint.model, &high, &split.test, 64)?,
        accuracy(&b2.checkpoint.model, &high, &split.test, 64)?
    );
    Ok(())
}
