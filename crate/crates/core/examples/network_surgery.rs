//! Progressive-resizing surgery: drop the first block of a trained
//! low-resolution network, prepend two new blocks, and get a network that
//! takes inputs twice as large while keeping every transferred weight.

use prorez::net::{
    build_network, load_checkpoint, progressive_surgery, replace_head, save_checkpoint, BlockSpec,
    Checkpoint, CheckpointMeta, NetworkSpec,
};

fn main() -> anyhow::Result<()> {
    let stage1_spec = NetworkSpec::vgg(&[16, 32, 64], 1, vec![], 4, 32, 1);
    let pretrained = build_network::<f32>(&stage1_spec, 1)?;
    // New task with 5 classes: fresh classifier, everything else kept.
    let stage1 = replace_head(&pretrained, 5, 2)?;
    println!("stage 1: input {}², {} parameters", stage1.input_side(), stage1.param_count());
    for s in stage1.param_shapes() {
        println!("  {s:?}");
    }

    // The second new block must output as many channels as the removed
    // first block so the remaining blocks plug in unchanged.
    let new_blocks = [BlockSpec::new(1, 8), BlockSpec::new(1, 16)];
    let stage2 = progressive_surgery(&stage1, &new_blocks, 3)?;
    println!("stage 2: input {}², {} parameters", stage2.input_side(), stage2.param_count());
    for s in stage2.param_shapes() {
        println!("  {s:?}");
    }
    let kept = stage1.param_arrays()[2..].to_vec();
    let carried = stage2.param_arrays()[4..].to_vec();
    assert_eq!(kept, carried, "transferred weights are bit-identical");
    println!("transferred tensors identical: {}", kept.len());

    let mismatched = [BlockSpec::new(1, 8), BlockSpec::new(1, 24)];
    match progressive_surgery(&stage1, &mismatched, 3) {
        Err(e) => println!("channel mismatch rejected: {e}"),
        Ok(_) => anyhow::bail!("mismatched surgery was accepted"),
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("stage2.ckpt");
    let meta = CheckpointMeta {
        stage: "stage2".into(),
        seed: 3,
        config_digest: "example".into(),
        created_unix: None,
    };
    save_checkpoint(&Checkpoint::new(stage2.clone(), meta), &path)?;
    let back = load_checkpoint(&path)?;
    assert_eq!(back.model, stage2);
    println!("checkpoint round trip: {} bytes", std::fs::metadata(&path)?.len());
    Ok(())
}
