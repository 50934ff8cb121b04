use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::{fit, PatchSet, TrainConfig, TrainLog};
use crate::error::{Error, Result};
use crate::folds::RunPlan;
use crate::net::{
    build_network, progressive_surgery, replace_head, surgery_spec, BlockSpec, Checkpoint,
    CheckpointMeta, Network, NetworkSpec,
};
use crate::seed::mix_seed;

/// A trained checkpoint and its training record.
#[derive(Debug, Clone)]
pub struct StageOutput {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

fn digest(cfg: &TrainConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    let d = Sha256::digest(text.as_bytes());
    d.iter().map(|b| format!("{b:02x}")).collect()
}

fn output(stage: &str, model: Network<f32>, log: TrainLog, cfg: &TrainConfig) -> StageOutput {
    StageOutput {
        checkpoint: Checkpoint::new(
            model,
            CheckpointMeta {
                stage: stage.into(),
                seed: cfg.seed,
                config_digest: digest(cfg),
                created_unix: None,
            },
        ),
        log,
    }
}

fn expect_side(data: &PatchSet, side: usize, what: &str) -> Result<()> {
    if data.side() != side {
        return Err(Error::Validation(format!(
            "{what} needs {side}×{side} patches, got level {} patches of side {}",
            data.level(),
            data.side()
        )));
    }
    Ok(())
}

fn expect_stage(ckpt: &Checkpoint, stage: &str) -> Result<()> {
    if ckpt.meta.stage != stage {
        return Err(Error::Validation(format!(
            "expected a `{stage}` checkpoint, got `{}`",
            ckpt.meta.stage
        )));
    }
    Ok(())
}

/// Supervised training of a fresh network on the proxy task; stands in for
/// weights pretrained on an external corpus. Warns if the loss does not
/// strictly decrease over the first three epochs.
pub fn pretrain_backbone(spec: &NetworkSpec, proxy: &PatchSet, cfg: &TrainConfig) -> Result<StageOutput> {
    if proxy.is_empty() {
        return Err(Error::Validation("proxy manifest has no patches".into()));
    }
    expect_side(proxy, spec.input_side, "pretraining")?;
    let model = build_network(spec, mix_seed(cfg.seed, 0))?;
    let all: Vec<usize> = (0..proxy.len()).collect();
    let trainable = vec![true; model.layers().len()];
    let (model, log) = fit(model, proxy, &all, &[], &trainable, cfg)?;
    let head = &log.epoch_loss[..log.epoch_loss.len().min(3)];
    if head.windows(2).any(|w| w[1] >= w[0]) {
        log::warn!("pretraining loss did not strictly decrease over the first epochs: {head:?}");
    }
    Ok(output("pretrain", model, log, cfg))
}

/// Replaces the pretrained classifier with a `num_classes` head and trains
/// every layer on the run's training patients, selecting on its validation
/// patients. `data` must be at the pretrained network's input side.
pub fn train_stage1(
    pretrained: &Checkpoint,
    data: &PatchSet,
    run: &RunPlan,
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<StageOutput> {
    expect_stage(pretrained, "pretrain")?;
    expect_side(data, pretrained.model.input_side(), "stage 1")?;
    let split = data.split(run)?;
    let model = replace_head(&pretrained.model, num_classes, mix_seed(cfg.seed, 1))?;
    let n = model.layers().len();
    let trainable: Vec<bool> = (0..n).map(|i| !cfg.freeze_transferred || i == n - 1).collect();
    let (model, log) = fit(model, data, &split.train, &split.val, &trainable, cfg)?;
    Ok(output("stage1", model, log, cfg))
}

/// Network surgery on the stage-1 model, then training on patches twice as
/// large. With `freeze_transferred` only the two new blocks learn.
pub fn train_stage2(
    stage1: &Checkpoint,
    data: &PatchSet,
    new_blocks: &[BlockSpec],
    run: &RunPlan,
    cfg: &TrainConfig,
) -> Result<StageOutput> {
    expect_stage(stage1, "stage1")?;
    expect_side(data, 2 * stage1.model.input_side(), "stage 2")?;
    let split = data.split(run)?;
    let model = progressive_surgery(&stage1.model, new_blocks, mix_seed(cfg.seed, 2))?;
    let fresh: usize = new_blocks.iter().map(|b| 2 * b.convs + 1).sum();
    let trainable: Vec<bool> = (0..model.layers().len())
        .map(|i| !cfg.freeze_transferred || i < fresh)
        .collect();
    let (model, log) = fit(model, data, &split.train, &split.val, &trainable, cfg)?;
    Ok(output("stage2", model, log, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// The backbone topology, freshly initialized, on high-resolution patches.
    PlainHighres,
    /// The post-surgery topology with every parameter freshly initialized.
    Stage2Random,
}

impl BaselineKind {
    pub fn stage_tag(self) -> &'static str {
        match self {
            BaselineKind::PlainHighres => "baseline1",
            BaselineKind::Stage2Random => "baseline2",
        }
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain_highres" | "baseline1" => Ok(BaselineKind::PlainHighres),
            "stage2_random" | "baseline2" => Ok(BaselineKind::Stage2Random),
            other => Err(Error::Usage(format!(
                "unknown baseline `{other}` (expected plain_highres or stage2_random)"
            ))),
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::PlainHighres => "plain_highres",
            BaselineKind::Stage2Random => "stage2_random",
        })
    }
}

/// Trains a randomly initialized comparison model on high-resolution
/// patches. `backbone` is the stage-1 topology (its input side is the
/// low-resolution side).
pub fn train_baseline(
    kind: BaselineKind,
    backbone: &NetworkSpec,
    new_blocks: &[BlockSpec],
    data: &PatchSet,
    run: &RunPlan,
    cfg: &TrainConfig,
) -> Result<StageOutput> {
    let spec = match kind {
        BaselineKind::PlainHighres => NetworkSpec {
            input_side: 2 * backbone.input_side,
            ..backbone.clone()
        },
        BaselineKind::Stage2Random => surgery_spec(backbone, new_blocks)?,
    };
    expect_side(data, spec.input_side, kind.stage_tag())?;
    let split = data.split(run)?;
    let model = build_network(&spec, mix_seed(cfg.seed, 3))?;
    let trainable = vec![true; model.layers().len()];
    let (model, log) = fit(model, data, &split.train, &split.val, &trainable, cfg)?;
    Ok(output(kind.stage_tag(), model, log, cfg))
}
