use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::folds::RunPlan;
use crate::tensor::Tensor4;
use crate::wsi::{read_pgm, SlideManifest};

/// Identity and label of one loaded patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMeta {
    pub slide_id: String,
    pub patient_id: String,
    pub class_label: usize,
    pub x: usize,
    pub y: usize,
}

/// Decoded single-channel patches of one level, in manifest order. Loaded
/// patches are standardized one by one to zero mean and unit variance, which
/// removes slide-wide brightness and contrast differences.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    side: usize,
    level: usize,
    meta: Vec<PatchMeta>,
    pixels: Vec<f32>,
}

/// Zero mean, unit variance; a constant patch maps to zeros.
pub fn standardize(values: &[f64]) -> Vec<f32> {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = if var > 1e-12 { 1.0 / var.sqrt() } else { 0.0 };
    values.iter().map(|v| ((v - mean) * scale) as f32).collect()
}

impl PatchSet {
    /// Decodes every patch of `manifest` at `level` (files resolved against
    /// `data_dir`). Decoding runs in parallel; the order is the manifest's.
    pub fn load(manifest: &SlideManifest, data_dir: &Path, level: usize) -> Result<Self> {
        let planes = manifest
            .records()
            .par_iter()
            .map(|r| {
                let rel = r.path(level).ok_or_else(|| {
                    Error::Validation(format!(
                        "patch ({}, {}) of slide {} has no level-{level} file",
                        r.x, r.y, r.slide_id
                    ))
                })?;
                read_pgm(&data_dir.join(rel))
            })
            .collect::<Result<Vec<_>>>()?;
        let side = planes.first().map_or(0, |p| p.side());
        let mut pixels = Vec::with_capacity(planes.len() * side * side);
        for (p, r) in planes.iter().zip(manifest.records()) {
            if p.side() != side {
                return Err(Error::Shape(format!(
                    "patch ({}, {}) of slide {} is {}×{0} at level {level}, expected {side}",
                    r.x,
                    r.y,
                    r.slide_id,
                    p.side()
                )));
            }
            pixels.extend(standardize(p.data()));
        }
        let meta = manifest
            .records()
            .iter()
            .map(|r| PatchMeta {
                slide_id: r.slide_id.clone(),
                patient_id: r.patient_id.clone(),
                class_label: r.class_label,
                x: r.x,
                y: r.y,
            })
            .collect();
        Ok(PatchSet { side, level, meta, pixels })
    }

    /// Builds a set from in-memory patches, taken as they are.
    pub fn from_parts(side: usize, level: usize, meta: Vec<PatchMeta>, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != meta.len() * side * side {
            return Err(Error::Shape(format!(
                "{} patches of side {side} need {} pixels, got {}",
                meta.len(),
                meta.len() * side * side,
                pixels.len()
            )));
        }
        Ok(PatchSet { side, level, meta, pixels })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn meta(&self) -> &[PatchMeta] {
        &self.meta
    }

    pub fn pixels(&self, i: usize) -> &[f32] {
        let n = self.side * self.side;
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Stacks the given patches into an `(n, 1, side, side)` batch.
    pub fn batch(&self, indices: &[usize]) -> Tensor4<f32> {
        let n = self.side * self.side;
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.pixels(i));
        }
        Tensor4::from_vec([indices.len(), 1, self.side, self.side], data).expect("sizes agree")
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.meta[i].class_label).collect()
    }

    /// Indices of the patches whose patient is in `patients`, in set order.
    pub fn indices_of(&self, patients: &BTreeSet<String>) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| patients.contains(&self.meta[i].patient_id))
            .collect()
    }

    /// A new set holding only the given patches.
    pub fn subset(&self, indices: &[usize]) -> PatchSet {
        let n = self.side * self.side;
        let mut pixels = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            pixels.extend_from_slice(self.pixels(i));
        }
        PatchSet {
            side: self.side,
            level: self.level,
            meta: indices.iter().map(|&i| self.meta[i].clone()).collect(),
            pixels,
        }
    }

    /// Splits the set by a run plan after checking that the plan is
    /// patient-disjoint and that no slide is shared by two patients that
    /// fall in different partitions.
    pub fn split(&self, run: &RunPlan) -> Result<RunSplit> {
        run.check_disjoint()?;
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for m in &self.meta {
            if let Some(prev) = owner.insert(&m.slide_id, &m.patient_id) {
                if prev != m.patient_id {
                    return Err(Error::Leakage(format!(
                        "slide {} has patches from patients {prev} and {}",
                        m.slide_id, m.patient_id
                    )));
                }
            }
        }
        Ok(RunSplit {
            train: self.indices_of(&run.train_patients),
            val: self.indices_of(&run.val_patients),
            test: self.indices_of(&run.test_patients),
        })
    }
}

/// Patch indices of one run's partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_patches_have_zero_mean_unit_variance() {
        let v: Vec<f64> = (0..64).map(|i| 0.3 + 0.01 * ((i * 7) % 13) as f64).collect();
        let z = standardize(&v);
        let n = z.len() as f64;
        let mean = z.iter().map(|&x| x as f64).sum::<f64>() / n;
        let var = z.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-5, "{mean} {var}");
        // brightness and contrast changes cancel out
        let shifted: Vec<f64> = v.iter().map(|x| 0.1 + 1.5 * x).collect();
        for (a, b) in z.iter().zip(standardize(&shifted)) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!(standardize(&[0.4; 16]).iter().all(|&x| x == 0.0));
    }
}
