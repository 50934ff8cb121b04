use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::hex;
use crate::error::{Error, Result};

/// Fixed locations inside a run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub run_dir: PathBuf,
    pub data_dir: PathBuf,
}

impl RunLayout {
    pub fn new(run_dir: &Path, data_dir: Option<&Path>) -> Self {
        RunLayout {
            run_dir: run_dir.to_path_buf(),
            data_dir: data_dir.map_or_else(|| run_dir.join("data"), Path::to_path_buf),
        }
    }

    pub fn manifests(&self) -> PathBuf {
        self.run_dir.join("manifests")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.run_dir.join("checkpoints")
    }

    pub fn predictions(&self) -> PathBuf {
        self.run_dir.join("predictions")
    }

    pub fn reports(&self) -> PathBuf {
        self.run_dir.join("reports")
    }

    pub fn provenance(&self) -> PathBuf {
        self.run_dir.join("provenance")
    }

    pub fn slides_index(&self) -> PathBuf {
        self.manifests().join("slides.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.manifests().join("manifest.jsonl")
    }

    pub fn proxy_manifest(&self) -> PathBuf {
        self.manifests().join("proxy_manifest.jsonl")
    }

    pub fn folds(&self) -> PathBuf {
        self.manifests().join("folds.json")
    }

    pub fn pretrain_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("pretrain.ckpt")
    }

    pub fn checkpoint(&self, stage: &str, run: &str) -> PathBuf {
        self.checkpoints().join(stage).join(format!("{run}.ckpt"))
    }

    pub fn train_log(&self, stage: &str, run: &str) -> PathBuf {
        self.checkpoints().join(stage).join(format!("{run}.log.json"))
    }

    pub fn forest(&self, stage: &str, run: &str) -> PathBuf {
        self.checkpoints().join(stage).join(format!("{run}.forest.json"))
    }

    pub fn patch_predictions(&self, stage: &str, run: &str) -> PathBuf {
        self.predictions().join(stage).join(format!("{run}.patches.jsonl"))
    }

    pub fn slide_predictions(&self, stage: &str, run: &str) -> PathBuf {
        self.predictions().join(stage).join(format!("{run}.slides.jsonl"))
    }

    pub fn stage_reports(&self, stage: &str) -> PathBuf {
        self.reports().join(stage)
    }

    pub fn provenance_record(&self, step: &str) -> PathBuf {
        self.provenance().join(format!("{step}.json"))
    }

    /// Path as recorded in provenance: relative to the run directory, or to
    /// the data directory (prefixed `data:`), so records do not depend on
    /// where the run lives.
    pub fn display_path(&self, path: &Path) -> String {
        if let Ok(rel) = path.strip_prefix(&self.run_dir) {
            rel.to_string_lossy().replace('\\', "/")
        } else if let Ok(rel) = path.strip_prefix(&self.data_dir) {
            format!("data:{}", rel.to_string_lossy().replace('\\', "/"))
        } else {
            path.to_string_lossy().into_owned()
        }
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Digest over `(name, file digest)` pairs in the given order.
pub fn combined_digest(layout: &RunLayout, paths: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        h.update(layout.display_path(p).as_bytes());
        h.update([0]);
        h.update(file_digest(p)?.as_bytes());
        h.update(*b"\n");
    }
    Ok(hex(&h.finalize()))
}

/// What a pipeline step consumed and produced. Each record names the
/// digests of the upstream records it read, so the records form a hash
/// chain from the configuration to the report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub step: String,
    pub config_digest: String,
    pub master_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    /// Upstream step → SHA-256 of its provenance record.
    pub upstream: BTreeMap<String, String>,
    /// Output path → SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn save(&self, layout: &RunLayout) -> Result<PathBuf> {
        let path = layout.provenance_record(&self.step);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}
