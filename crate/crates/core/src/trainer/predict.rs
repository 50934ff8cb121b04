use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{argmax, PatchSet};
use crate::error::{Error, Result};
use crate::net::Network;

/// Softmax output for one patch; `label` is the first argmax of `probs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchPrediction {
    pub slide_id: String,
    pub x: usize,
    pub y: usize,
    pub probs: Vec<f32>,
    pub label: usize,
}

/// Predicts the patches at `indices` in batches of 64.
pub fn predict_patches(model: &Network<f32>, data: &PatchSet, indices: &[usize]) -> Result<Vec<PatchPrediction>> {
    if data.side() != model.input_side() {
        return Err(Error::Shape(format!(
            "patches are {0}×{0} (level {1}) but the network expects {2}×{2}",
            data.side(),
            data.level(),
            model.input_side()
        )));
    }
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(64) {
        let probs = model.predict_proba(&data.batch(chunk))?;
        for (&i, p) in chunk.iter().zip(probs) {
            let m = &data.meta()[i];
            out.push(PatchPrediction {
                slide_id: m.slide_id.clone(),
                x: m.x,
                y: m.y,
                label: argmax(&p),
                probs: p,
            });
        }
    }
    Ok(out)
}

/// JSON lines. `f32` values are written in shortest round-trip form, so a
/// reload reproduces the probabilities bit for bit.
pub fn write_predictions(preds: &[PatchPrediction], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut out = Vec::new();
    for p in preds {
        serde_json::to_writer(&mut out, p).map_err(|e| Error::json(path, e))?;
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PatchPrediction>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}
