use std::f64::consts::PI;

use super::Plane;
use crate::error::{Error, Result};

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// `sinc(x) · sinc(x / a)` on `|x| < a`, zero outside.
pub fn lanczos_kernel(x: f64, a: usize) -> f64 {
    let a = a as f64;
    if x.abs() >= a {
        0.0
    } else {
        sinc(x) * sinc(x / a)
    }
}

/// Per-output-sample taps `(source index, weight)` for a 1-D downscale of
/// `in_len` samples to `in_len / factor`.
///
/// Output sample `i` is centred at `(i + 0.5)·factor − 0.5` in source
/// coordinates; the kernel is stretched by `factor` so it also acts as the
/// anti-aliasing low-pass. Out-of-range taps are clamped to the edge and the
/// weights are renormalized to sum to one.
pub fn resample_weights(in_len: usize, factor: usize, a: usize) -> Vec<Vec<(usize, f64)>> {
    let out_len = in_len / factor;
    let f = factor as f64;
    let support = a as f64 * f;
    (0..out_len)
        .map(|i| {
            let centre = (i as f64 + 0.5) * f - 0.5;
            let lo = (centre - support).floor() as i64;
            let hi = (centre + support).ceil() as i64;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for j in lo..=hi {
                let w = lanczos_kernel((j as f64 - centre) / f, a);
                if w == 0.0 {
                    continue;
                }
                let src = j.clamp(0, in_len as i64 - 1) as usize;
                match taps.iter_mut().find(|(s, _)| *s == src) {
                    Some(t) => t.1 += w,
                    None => taps.push((src, w)),
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Separable Lanczos downscale of a square plane by an integer factor.
pub fn lanczos_resize(img: &Plane, out_side: usize, a: usize) -> Result<Plane> {
    let side = img.side();
    if out_side == 0 || a == 0 {
        return Err(Error::Validation(format!(
            "output side and kernel lobes must be positive (got {out_side}, {a})"
        )));
    }
    if out_side > side {
        return Err(Error::UnsupportedDirection(format!(
            "cannot upscale {side} to {out_side}"
        )));
    }
    if !side.is_multiple_of(out_side) {
        return Err(Error::Validation(format!(
            "{side} is not an integer multiple of {out_side}"
        )));
    }
    let taps = resample_weights(side, side / out_side, a);
    let src = img.data();

    // rows: side × out_side
    let mut tmp = vec![0.0; side * out_side];
    for y in 0..side {
        let row = &src[y * side..(y + 1) * side];
        for (i, t) in taps.iter().enumerate() {
            tmp[y * out_side + i] = t.iter().map(|&(j, w)| w * row[j]).sum();
        }
    }
    // columns
    let mut out = vec![0.0; out_side * out_side];
    for (k, t) in taps.iter().enumerate() {
        for &(j, w) in t {
            let src_row = &tmp[j * out_side..(j + 1) * out_side];
            let dst = &mut out[k * out_side..(k + 1) * out_side];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += w * s;
            }
        }
    }
    Plane::new(out_side, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_shape() {
        assert_eq!(lanczos_kernel(0.0, 3), 1.0);
        for k in 1..3 {
            assert!(lanczos_kernel(k as f64, 3).abs() < 1e-15);
        }
        assert_eq!(lanczos_kernel(3.0, 3), 0.0);
        assert_eq!(lanczos_kernel(-4.2, 3), 0.0);
        assert!((lanczos_kernel(0.5, 3) - lanczos_kernel(-0.5, 3)).abs() < 1e-15);
    }

    #[test]
    fn weights_sum_to_one() {
        for t in resample_weights(40, 4, 3) {
            let s: f64 = t.iter().map(|x| x.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_is_preserved() {
        let img = Plane::filled(32, 0.37);
        let out = lanczos_resize(&img, 8, 3).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn unit_factor_is_identity() {
        let data: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let img = Plane::new(8, data).unwrap();
        let out = lanczos_resize(&img, 8, 3).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn direction_and_factor_checks() {
        let img = Plane::filled(12, 0.0);
        assert!(matches!(lanczos_resize(&img, 24, 3), Err(Error::UnsupportedDirection(_))));
        assert!(matches!(lanczos_resize(&img, 5, 3), Err(Error::Validation(_))));
    }
}
