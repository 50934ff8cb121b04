//! Slide synthesis, annotation-driven tiling, Lanczos downsampling and the
//! patch manifest.

mod lanczos;
mod manifest;
mod pgm;
mod polygon;
mod synth;
mod tiling;

pub use lanczos::{lanczos_kernel, lanczos_resize, resample_weights};
pub use manifest::{
    build_manifest, read_manifest, tile_slide, write_manifest, ManifestBuilder, PatchRecord,
    SlideManifest,
};
pub use pgm::{read_pgm, write_pgm};
pub use polygon::AnnotationPolygon;
pub use synth::{generate_proxy_slide, generate_synthetic_slide, ClassPattern, CLASS_PATTERNS, NUM_CLASSES, PROXY_CLASSES};
pub use tiling::{coverage_integral, tile_annotated_region, Tile};

use crate::error::{Error, Result};

/// Square single-channel image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    side: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(side: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != side * side {
            return Err(Error::Shape(format!(
                "plane of side {side} needs {} values, got {}",
                side * side,
                data.len()
            )));
        }
        Ok(Plane { side, data })
    }

    pub fn filled(side: usize, value: f64) -> Self {
        Plane {
            side,
            data: vec![value; side * side],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.side + x]
    }

    /// Square window with top-left corner `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, size: usize) -> Plane {
        let mut data = Vec::with_capacity(size * size);
        for row in y..y + size {
            data.extend_from_slice(&self.data[row * self.side + x..row * self.side + x + size]);
        }
        Plane { side: size, data }
    }
}

/// A whole slide. Synthetic slides are grayscale; the pixel plane is the
/// single channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideImage {
    pub pixels: Plane,
    pub slide_id: String,
    pub patient_id: String,
    pub class_label: usize,
}

impl SlideImage {
    pub fn side(&self) -> usize {
        self.pixels.side()
    }
}
