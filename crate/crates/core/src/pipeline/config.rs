use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::ForestParams;
use crate::error::{Error, Result};
use crate::net::{BlockSpec, HeadSpec, NetworkSpec};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Run directory; relative paths resolve against the config file's
    /// directory.
    #[serde(default)]
    pub run_dir: Option<PathBuf>,
    /// Where slides and patch files go; defaults to `<run_dir>/data`.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub patients_per_class: usize,
    pub slides_per_patient: usize,
    pub slide_side: usize,
    pub tile: usize,
    pub levels: Vec<usize>,
    /// Slides per proxy class for pretraining.
    pub proxy_slides_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Output channels of the stage-1 backbone blocks.
    pub blocks: Vec<usize>,
    pub convs_per_block: usize,
    /// Output channels of the two blocks prepended by surgery.
    pub new_blocks: Vec<usize>,
    pub new_block_convs: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    /// Downscale level fed to stage 1 and pretraining (low resolution).
    pub low_level: usize,
    /// Downscale level fed to stage 2 and the baselines.
    pub high_level: usize,
}

/// Per-stage optimization settings; the level and seed are filled in by
/// the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default = "defaults::lr_decay_fraction")]
    pub lr_decay_fraction: f64,
    #[serde(default = "defaults::lr_decay_factor")]
    pub lr_decay_factor: f64,
    #[serde(default)]
    pub max_patches_per_slide: Option<usize>,
    #[serde(default)]
    pub weighted_sampling: bool,
    #[serde(default)]
    pub freeze_transferred: bool,
    #[serde(default = "defaults::select_on_val")]
    pub select_on_val: bool,
}

/// Omitted optimizer fields fall back to the desk-scale training defaults.
mod defaults {
    use crate::trainer::TrainConfig;

    pub fn momentum() -> f64 {
        TrainConfig::desk(1).momentum
    }

    pub fn lr_decay_fraction() -> f64 {
        TrainConfig::desk(1).lr_decay_fraction
    }

    pub fn lr_decay_factor() -> f64 {
        TrainConfig::desk(1).lr_decay_factor
    }

    pub fn select_on_val() -> bool {
        TrainConfig::desk(1).select_on_val
    }
}

impl StageSettings {
    pub fn desk(epochs: usize) -> Self {
        let d = TrainConfig::desk(1);
        StageSettings {
            epochs,
            batch_size: d.batch_size,
            lr: d.lr,
            momentum: d.momentum,
            lr_decay_fraction: d.lr_decay_fraction,
            lr_decay_factor: d.lr_decay_factor,
            max_patches_per_slide: None,
            weighted_sampling: false,
            freeze_transferred: false,
            select_on_val: true,
        }
    }

    pub fn to_train_config(&self, level: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            lr_decay_fraction: self.lr_decay_fraction,
            lr_decay_factor: self.lr_decay_factor,
            seed,
            level,
            max_patches_per_slide: self.max_patches_per_slide,
            weighted_sampling: self.weighted_sampling,
            freeze_transferred: self.freeze_transferred,
            select_on_val: self.select_on_val,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub pretrain: StageSettings,
    pub stage1: StageSettings,
    pub stage2: StageSettings,
    pub baseline1: StageSettings,
    pub baseline2: StageSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_features: usize,
    pub bootstrap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub folds: usize,
    /// Classifiers trained and evaluated by the full pipeline, out of
    /// `stage1`, `stage2`, `baseline1`, `baseline2`.
    pub classifiers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsConfig {
    pub master: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub paths: PathsConfig,
    pub seeds: SeedsConfig,
    pub generator: GeneratorConfig,
    pub network: NetworkConfig,
    pub train: TrainSection,
    pub forest: ForestConfig,
    pub experiment: ExperimentConfig,
}

pub const CLASSIFIERS: [&str; 4] = ["baseline1", "baseline2", "stage1", "stage2"];

/// Desk-scale default configuration.
pub const DESK_CONFIG: &str = include_str!("../../configs/desk.toml");

impl PipelineConfig {
    pub fn desk() -> Self {
        PipelineConfig::from_toml(DESK_CONFIG).expect("bundled config is valid")
    }

    /// Parses and validates; unknown keys are errors.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = PipelineConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.run_dir, &mut cfg.paths.data_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// TOML text of the configuration. Fails for seeds above `i64::MAX`,
    /// which TOML integers cannot hold.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.generator;
        let bad = |m: String| Err(Error::Config(m));
        if g.patients_per_class == 0 || g.slides_per_patient == 0 || g.proxy_slides_per_class == 0 {
            return bad("generator counts must be positive".into());
        }
        if g.tile == 0 || !g.slide_side.is_multiple_of(g.tile) || g.slide_side < 8 * g.tile {
            return bad(format!(
                "slide_side {} must be a multiple of tile {} and at least 8 tiles",
                g.slide_side, g.tile
            ));
        }
        let n = &self.network;
        for l in [n.low_level, n.high_level] {
            if !g.levels.contains(&l) {
                return bad(format!("network level {l} is not among generator levels {:?}", g.levels));
            }
        }
        if n.low_level != 2 * n.high_level {
            return bad(format!(
                "low_level ({}) must be twice high_level ({}): surgery doubles the input side",
                n.low_level, n.high_level
            ));
        }
        if n.new_blocks.len() != 2 {
            return bad(format!("new_blocks needs 2 entries, got {}", n.new_blocks.len()));
        }
        if n.num_classes != crate::wsi::NUM_CLASSES {
            return bad(format!(
                "the synthetic generator has {} classes, config says {}",
                crate::wsi::NUM_CLASSES,
                n.num_classes
            ));
        }
        self.backbone_spec().validate()?;
        crate::net::surgery_spec(&self.backbone_spec(), &self.new_block_specs())?;
        if self.experiment.folds < 2 {
            return bad("experiment.folds must be at least 2".into());
        }
        for c in &self.experiment.classifiers {
            if !CLASSIFIERS.contains(&c.as_str()) {
                return bad(format!("unknown classifier `{c}` (expected one of {CLASSIFIERS:?})"));
            }
        }
        if self.experiment.classifiers.iter().any(|c| c == "stage2")
            && !self.experiment.classifiers.iter().any(|c| c == "stage1")
        {
            return bad("stage2 requires stage1".into());
        }
        for (name, s) in self.stage_settings() {
            s.to_train_config(1, 0)
                .validate()
                .map_err(|e| Error::Config(format!("train.{name}: {e}")))?;
        }
        if self.forest.n_trees == 0 || self.forest.max_features == 0 || self.forest.max_features > n.num_classes {
            return bad("forest needs n_trees ≥ 1 and 1 ≤ max_features ≤ num_classes".into());
        }
        Ok(())
    }

    fn stage_settings(&self) -> [(&'static str, &StageSettings); 5] {
        let t = &self.train;
        [
            ("pretrain", &t.pretrain),
            ("stage1", &t.stage1),
            ("stage2", &t.stage2),
            ("baseline1", &t.baseline1),
            ("baseline2", &t.baseline2),
        ]
    }

    pub fn stage(&self, name: &str) -> Result<&StageSettings> {
        self.stage_settings()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Usage(format!("unknown stage `{name}`")))
    }

    /// Stage-1 topology at the low-resolution patch side.
    pub fn backbone_spec(&self) -> NetworkSpec {
        let n = &self.network;
        NetworkSpec {
            input_side: self.generator.tile / n.low_level,
            input_channels: 1,
            head: HeadSpec {
                hidden: n.hidden.clone(),
                num_classes: n.num_classes,
            },
            blocks: n.blocks.iter().map(|&c| BlockSpec::new(n.convs_per_block, c)).collect(),
        }
    }

    /// Backbone with a proxy-task head.
    pub fn pretrain_spec(&self) -> NetworkSpec {
        let mut s = self.backbone_spec();
        s.head.num_classes = crate::wsi::PROXY_CLASSES.len();
        s
    }

    pub fn new_block_specs(&self) -> Vec<BlockSpec> {
        let n = &self.network;
        n.new_blocks.iter().map(|&c| BlockSpec::new(n.new_block_convs, c)).collect()
    }

    pub fn forest_params(&self, seed: u64) -> ForestParams {
        ForestParams {
            n_trees: self.forest.n_trees,
            max_features: self.forest.max_features,
            seed,
            bootstrap: self.forest.bootstrap,
        }
    }

    /// SHA-256 (hex) of the canonical JSON of everything except `paths`, so
    /// moving a run directory does not invalidate it.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsConfig::default();
        let text = serde_json::to_string(&c).expect("config serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
