//! Synthetic slide generator.
//!
//! Every class combines a low-frequency *macro* pattern with a
//! high-frequency *micro* grating. The macro pattern survives heavy
//! downsampling; the micro grating (about 0.18 cycles/pixel per axis) survives
//! a ×2 Lanczos downscale but is filtered out by ×4. Classes 0 and 1 share a
//! macro pattern and differ only in grating orientation, classes 0, 2 and 3
//! share a grating and differ only in macro period, so a classifier that
//! sees only quarter-resolution patches cannot separate 0 from 1.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{AnnotationPolygon, Plane, SlideImage};
use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 5;

/// Spatial frequency of the micro grating along its normal, cycles/pixel.
const MICRO_FREQ: f64 = 0.2546;
const NOISE_SD: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassPattern {
    /// Period of the macro pattern in full-resolution pixels.
    pub macro_period: f64,
    /// `None` for a checkerboard-like `cos·cos` pattern, otherwise the
    /// direction (radians) of a stripe pattern's normal.
    pub macro_angle: Option<f64>,
    /// Direction of the micro grating's normal, if the class has one.
    pub micro_angle: Option<f64>,
    /// Phase offset of the macro pattern, as a fraction of its period.
    pub macro_phase: f64,
}

const DIAG_A: f64 = PI / 4.0;
const DIAG_B: f64 = -PI / 4.0;

/// Target classes: (macro period, grating) =
/// (64, A), (64, B), (32, A), (21⅓, A), (128, B).
pub const CLASS_PATTERNS: [ClassPattern; NUM_CLASSES] = [
    ClassPattern { macro_period: 64.0, macro_angle: None, micro_angle: Some(DIAG_A), macro_phase: 0.10 },
    ClassPattern { macro_period: 64.0, macro_angle: None, micro_angle: Some(DIAG_B), macro_phase: 0.10 },
    ClassPattern { macro_period: 32.0, macro_angle: None, micro_angle: Some(DIAG_A), macro_phase: 0.30 },
    ClassPattern { macro_period: 128.0 / 6.0, macro_angle: None, micro_angle: Some(DIAG_A), macro_phase: 0.55 },
    ClassPattern { macro_period: 128.0, macro_angle: None, micro_angle: Some(DIAG_B), macro_phase: 0.80 },
];

/// Proxy pretraining classes: oriented stripes with no micro texture, a task
/// disjoint from the target classes but exercising the same kind of filters.
pub const PROXY_CLASSES: [ClassPattern; 4] = [
    ClassPattern { macro_period: 48.0, macro_angle: Some(0.0), micro_angle: None, macro_phase: 0.0 },
    ClassPattern { macro_period: 48.0, macro_angle: Some(PI / 2.0), micro_angle: None, macro_phase: 0.0 },
    ClassPattern { macro_period: 24.0, macro_angle: Some(0.0), micro_angle: None, macro_phase: 0.0 },
    ClassPattern { macro_period: 24.0, macro_angle: Some(PI / 2.0), micro_angle: None, macro_phase: 0.0 },
];

/// Slide for target class `class_id`, fully determined by
/// `(class_id, patient_seed, side)`. `side` must be a multiple of `tile` and
/// at least `8 · tile`. The ids are placeholders for the caller to replace.
pub fn generate_synthetic_slide(
    class_id: usize,
    patient_seed: u64,
    side: usize,
    tile: usize,
) -> Result<(SlideImage, AnnotationPolygon)> {
    let pattern = CLASS_PATTERNS.get(class_id).ok_or_else(|| {
        Error::Validation(format!("class {class_id} outside [0, {NUM_CLASSES})"))
    })?;
    render(pattern, class_id, patient_seed, side, tile)
}

/// Slide for proxy class `class_id` (see [`PROXY_CLASSES`]).
pub fn generate_proxy_slide(
    class_id: usize,
    seed: u64,
    side: usize,
    tile: usize,
) -> Result<(SlideImage, AnnotationPolygon)> {
    let pattern = PROXY_CLASSES.get(class_id).ok_or_else(|| {
        Error::Validation(format!(
            "proxy class {class_id} outside [0, {})",
            PROXY_CLASSES.len()
        ))
    })?;
    render(pattern, class_id, seed ^ 0x9e37_79b9_7f4a_7c15, side, tile)
}

fn render(
    p: &ClassPattern,
    class_id: usize,
    seed: u64,
    side: usize,
    tile: usize,
) -> Result<(SlideImage, AnnotationPolygon)> {
    if tile == 0 || !side.is_multiple_of(tile) || side < 8 * tile {
        return Err(Error::Validation(format!(
            "slide side {side} must be a multiple of the tile size {tile} and at least 8 tiles"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = 0.5 + rng.random_range(-0.05..0.05);
    let macro_amp = 0.2 * rng.random_range(0.85..1.15);
    let micro_amp = 0.15 * rng.random_range(0.85..1.15);
    let jitter = p.macro_period / 16.0;
    let phase_x = p.macro_phase * p.macro_period + rng.random_range(-jitter..jitter);
    let phase_y = p.macro_phase * p.macro_period + rng.random_range(-jitter..jitter);
    let micro_phase = rng.random_range(0.0..2.0 * PI);
    let polygon = random_polygon(&mut rng, side as f64)?;

    let w = 2.0 * PI / p.macro_period;
    let noise = Normal::new(0.0, NOISE_SD).expect("valid sd");
    let mut data = Vec::with_capacity(side * side);
    let col_macro: Vec<f64> = (0..side).map(|x| (w * (x as f64 + phase_x)).cos()).collect();
    for y in 0..side {
        let row_macro = (w * (y as f64 + phase_y)).cos();
        for x in 0..side {
            let (xf, yf) = (x as f64, y as f64);
            let m = match p.macro_angle {
                None => col_macro[x] * row_macro,
                Some(a) => (w * (xf * a.cos() + yf * a.sin() + phase_x)).cos(),
            };
            let t = match p.micro_angle {
                Some(a) => (2.0 * PI * MICRO_FREQ * (xf * a.cos() + yf * a.sin()) + micro_phase).cos(),
                None => 0.0,
            };
            let v = base + macro_amp * m + micro_amp * t + noise.sample(&mut rng);
            data.push(v.clamp(0.0, 1.0));
        }
    }
    let slide = SlideImage {
        pixels: Plane::new(side, data)?,
        slide_id: format!("c{class_id}-{seed:016x}"),
        patient_id: format!("c{class_id}-{seed:016x}"),
        class_label: class_id,
    };
    Ok((slide, polygon))
}

/// Star-shaped 12-gon around a jittered centre, scaled to cover 45–72% of
/// the slide and clamped to its bounds; resampled until it is simple and its
/// area fraction lies in [0.4, 0.8].
fn random_polygon(rng: &mut ChaCha8Rng, side: f64) -> Result<AnnotationPolygon> {
    const N: usize = 12;
    loop {
        let cx = side * (0.5 + rng.random_range(-0.04..0.04));
        let cy = side * (0.5 + rng.random_range(-0.04..0.04));
        let target = rng.random_range(0.45..0.72) * side * side;
        let step = 2.0 * PI / N as f64;
        let dirs: Vec<(f64, f64, f64)> = (0..N)
            .map(|i| {
                let theta = i as f64 * step + rng.random_range(-0.2..0.2) * step;
                let r = 1.0 + rng.random_range(-0.12..0.12);
                (theta.cos(), theta.sin(), r)
            })
            .collect();
        let unit = AnnotationPolygon::new(dirs.iter().map(|&(c, s, r)| (r * c, r * s)).collect())?;
        let scale = (target / unit.area()).sqrt();
        let verts = dirs
            .iter()
            .map(|&(c, s, r)| {
                (
                    (cx + scale * r * c).clamp(0.0, side),
                    (cy + scale * r * s).clamp(0.0, side),
                )
            })
            .collect();
        if let Ok(poly) = AnnotationPolygon::new(verts) {
            let frac = poly.area() / (side * side);
            if (0.4..=0.8).contains(&frac) {
                return Ok(poly);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let (a, pa) = generate_synthetic_slide(3, 42, 256, 32).unwrap();
        let (b, pb) = generate_synthetic_slide(3, 42, 256, 32).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        let (c, _) = generate_synthetic_slide(3, 43, 256, 32).unwrap();
        assert_ne!(a.pixels, c.pixels);
    }

    #[test]
    fn polygon_area_contract() {
        for seed in 0..40 {
            let (_, poly) = generate_synthetic_slide((seed % 5) as usize, seed, 256, 32).unwrap();
            let frac = poly.area() / (256.0 * 256.0);
            assert!((0.4..=0.8).contains(&frac), "{frac}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(generate_synthetic_slide(5, 0, 256, 32), Err(Error::Validation(_))));
        assert!(generate_synthetic_slide(0, 0, 128, 32).is_err());
        assert!(generate_proxy_slide(4, 0, 256, 32).is_err());
    }

    #[test]
    fn pixels_in_unit_range() {
        let (s, _) = generate_proxy_slide(1, 5, 256, 32).unwrap();
        assert!(s.pixels.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
