use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{lanczos_resize, tile_annotated_region, write_pgm, AnnotationPolygon, SlideImage};
use crate::error::{Error, Result};

/// One tile and the files holding it at each downscale level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchRecord {
    pub slide_id: String,
    pub patient_id: String,
    pub class_label: usize,
    pub x: usize,
    pub y: usize,
    /// Level (as a decimal string, `"1"`, `"2"`, `"4"`) → path relative to
    /// the data directory.
    pub paths: BTreeMap<String, String>,
}

impl PatchRecord {
    pub fn path(&self, level: usize) -> Option<&str> {
        self.paths.get(&level.to_string()).map(String::as_str)
    }
}

/// Patch inventory, sorted by `(patient_id, slide_id, y, x)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SlideManifest {
    records: Vec<PatchRecord>,
}

impl SlideManifest {
    /// Sorts the records and rejects duplicate `(slide, origin)` pairs and
    /// slides claimed by two patients.
    pub fn new(mut records: Vec<PatchRecord>) -> Result<Self> {
        records.sort_by(|a, b| {
            (&a.patient_id, &a.slide_id, a.y, a.x).cmp(&(&b.patient_id, &b.slide_id, b.y, b.x))
        });
        for w in records.windows(2) {
            if w[0].slide_id == w[1].slide_id && (w[0].x, w[0].y) == (w[1].x, w[1].y) {
                return Err(Error::Validation(format!(
                    "duplicate patch ({}, {}) in slide {}",
                    w[0].x, w[0].y, w[0].slide_id
                )));
            }
        }
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for r in &records {
            if let Some(p) = owner.insert(&r.slide_id, &r.patient_id) {
                if p != r.patient_id {
                    return Err(Error::Validation(format!(
                        "slide {} belongs to patients {p} and {}",
                        r.slide_id, r.patient_id
                    )));
                }
            }
        }
        Ok(SlideManifest { records })
    }

    pub fn records(&self) -> &[PatchRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn patients(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.patient_id.clone()).collect()
    }

    /// Slide id → (patient id, class label).
    pub fn slides(&self) -> BTreeMap<String, (String, usize)> {
        self.records
            .iter()
            .map(|r| (r.slide_id.clone(), (r.patient_id.clone(), r.class_label)))
            .collect()
    }

    /// Records of the given patients only.
    pub fn restrict_to(&self, patients: &BTreeSet<String>) -> SlideManifest {
        SlideManifest {
            records: self
                .records
                .iter()
                .filter(|r| patients.contains(&r.patient_id))
                .cloned()
                .collect(),
        }
    }
}

/// Writes one JSON object per line.
pub fn write_manifest(manifest: &SlideManifest, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut out = Vec::new();
    for r in manifest.records() {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::json(path, e))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<SlideManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect::<Result<Vec<PatchRecord>>>()?;
    SlideManifest::new(records)
}

/// Tiles slides one at a time, writing every tile at every level under
/// `data_dir/patches/<slide_id>/`. Slides can be fed incrementally so only
/// one full-resolution slide needs to be in memory.
#[derive(Debug)]
pub struct ManifestBuilder {
    data_dir: PathBuf,
    tile: usize,
    levels: Vec<usize>,
    records: Vec<PatchRecord>,
}

impl ManifestBuilder {
    pub fn new(data_dir: &Path, tile: usize, levels: &[usize]) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Validation("at least one level is required".into()));
        }
        for &l in levels {
            if l == 0 || !tile.is_multiple_of(l) {
                return Err(Error::Validation(format!(
                    "level {l} does not divide the tile size {tile}"
                )));
            }
        }
        let mut levels = levels.to_vec();
        levels.sort_unstable();
        levels.dedup();
        Ok(ManifestBuilder {
            data_dir: data_dir.to_path_buf(),
            tile,
            levels,
            records: Vec::new(),
        })
    }

    /// Tiles one slide and returns the number of tiles kept.
    pub fn add_slide(&mut self, slide: &SlideImage, polygon: &AnnotationPolygon) -> Result<usize> {
        let records = tile_slide(&self.data_dir, slide, polygon, self.tile, &self.levels)?;
        let n = records.len();
        self.records.extend(records);
        Ok(n)
    }

    /// Sorts the records and writes the manifest to `path`.
    pub fn finish(self, path: &Path) -> Result<SlideManifest> {
        let manifest = SlideManifest::new(self.records)?;
        write_manifest(&manifest, path)?;
        Ok(manifest)
    }
}

/// Cuts one slide into non-overlapping tiles with at least 50% annotation
/// coverage, writes each tile at every level (Lanczos-3 downscaled) under
/// `data_dir/patches/<slide_id>/`, and returns the records in row-major
/// origin order. `levels` must divide `tile`.
pub fn tile_slide(
    data_dir: &Path,
    slide: &SlideImage,
    polygon: &AnnotationPolygon,
    tile: usize,
    levels: &[usize],
) -> Result<Vec<PatchRecord>> {
    for &l in levels {
        if l == 0 || !tile.is_multiple_of(l) {
            return Err(Error::Validation(format!(
                "level {l} does not divide the tile size {tile}"
            )));
        }
    }
    let tiles = tile_annotated_region(slide, polygon, tile, tile, 0.5)?;
    let mut records = Vec::with_capacity(tiles.len());
    for t in &tiles {
        let mut paths = BTreeMap::new();
        for &level in levels {
            let rel = format!("patches/{}/x{:05}_y{:05}_l{level}.pgm", slide.slide_id, t.x, t.y);
            let plane = if level == 1 {
                t.pixels.clone()
            } else {
                lanczos_resize(&t.pixels, tile / level, 3)?
            };
            write_pgm(&plane, &data_dir.join(&rel))?;
            paths.insert(level.to_string(), rel);
        }
        records.push(PatchRecord {
            slide_id: slide.slide_id.clone(),
            patient_id: slide.patient_id.clone(),
            class_label: slide.class_label,
            x: t.x,
            y: t.y,
            paths,
        });
    }
    Ok(records)
}

/// Tiles every slide into `out_dir/patches/` and writes
/// `out_dir/manifest.jsonl`.
pub fn build_manifest(
    slides: &[(SlideImage, AnnotationPolygon)],
    tile: usize,
    levels: &[usize],
    out_dir: &Path,
) -> Result<SlideManifest> {
    let mut builder = ManifestBuilder::new(out_dir, tile, levels)?;
    for (slide, polygon) in slides {
        builder.add_slide(slide, polygon)?;
    }
    builder.finish(&out_dir.join("manifest.jsonl"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wsi::{read_pgm, Plane};

    fn slide(id: &str, patient: &str) -> SlideImage {
        let data = (0..64 * 64).map(|i| ((i * 7) % 255) as f64 / 255.0).collect();
        SlideImage {
            pixels: Plane::new(64, data).unwrap(),
            slide_id: id.into(),
            patient_id: patient.into(),
            class_label: 2,
        }
    }

    #[test]
    fn counts_files_and_lines() {
        let dir = tempfile::tempdir().unwrap();
        let poly = AnnotationPolygon::rect(0.0, 0.0, 64.0, 64.0).unwrap();
        let m = build_manifest(&[(slide("s1", "p1"), poly)], 16, &[1, 2, 4], dir.path()).unwrap();
        assert_eq!(m.len(), 16);
        let text = fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 16);
        let mut files = 0;
        for r in m.records() {
            for p in r.paths.values() {
                assert!(dir.path().join(p).exists());
                files += 1;
            }
        }
        assert_eq!(files, 48);
        let half = read_pgm(&dir.path().join(m.records()[0].path(2).unwrap())).unwrap();
        assert_eq!(half.side(), 8);
        assert_eq!(read_manifest(&dir.path().join("manifest.jsonl")).unwrap(), m);
    }

    #[test]
    fn sorted_by_patient_then_slide_then_origin() {
        let dir = tempfile::tempdir().unwrap();
        let poly = AnnotationPolygon::rect(0.0, 0.0, 64.0, 32.0).unwrap();
        let slides = vec![(slide("b", "p2"), poly.clone()), (slide("a", "p1"), poly)];
        let m = build_manifest(&slides, 32, &[1], dir.path()).unwrap();
        let keys: Vec<_> = m.records().iter().map(|r| (r.slide_id.as_str(), r.x, r.y)).collect();
        assert_eq!(keys, vec![("a", 0, 0), ("a", 32, 0), ("b", 0, 0), ("b", 32, 0)]);
    }

    #[test]
    fn rejects_duplicates_and_bad_levels() {
        let r = PatchRecord {
            slide_id: "s".into(),
            patient_id: "p".into(),
            class_label: 0,
            x: 0,
            y: 0,
            paths: BTreeMap::new(),
        };
        assert!(SlideManifest::new(vec![r.clone(), r]).is_err());
        assert!(ManifestBuilder::new(Path::new("."), 16, &[3]).is_err());
    }
}
