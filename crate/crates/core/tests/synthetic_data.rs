//! Synthetic slides and tiling checked against independent oracles: a
//! brute-force pixel-centre rasterizer, a naive 2-D DFT, a nearest-centroid
//! classifier and a direct kernel summation.

use std::f64::consts::PI;

use prorez::wsi::{
    generate_synthetic_slide, lanczos_resize, tile_annotated_region, AnnotationPolygon, Plane, SlideImage,
    CLASS_PATTERNS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Even-odd ray casting for one point.
fn inside(vertices: &[(f64, f64)], px: f64, py: f64) -> bool {
    let n = vertices.len();
    let mut c = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = vertices[i];
        let (xj, yj) = vertices[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            c = !c;
        }
        j = i;
    }
    c
}

fn random_star(rng: &mut ChaCha8Rng, side: f64) -> Option<AnnotationPolygon> {
    let n = rng.random_range(3..14);
    let cx = side * rng.random_range(0.3..0.7);
    let cy = side * rng.random_range(0.3..0.7);
    let verts = (0..n)
        .map(|i| {
            let theta = 2.0 * PI * (i as f64 + rng.random_range(-0.3..0.3)) / n as f64;
            let r = side * rng.random_range(0.1..0.6);
            (cx + r * theta.cos(), cy + r * theta.sin())
        })
        .collect();
    AnnotationPolygon::new(verts).ok()
}

#[test]
fn tiling_matches_brute_force_rasterization() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let side = 128;
    let slide = SlideImage {
        pixels: Plane::filled(side, 0.5),
        slide_id: "s".into(),
        patient_id: "p".into(),
        class_label: 0,
    };
    let mut checked = 0;
    while checked < 40 {
        let Some(poly) = random_star(&mut rng, side as f64) else { continue };
        let tile = [8, 16, 32][checked % 3];
        let stride = if checked % 2 == 0 { tile } else { tile / 2 };
        let threshold = rng.random_range(0.0..1.0);
        let got: Vec<(usize, usize)> = tile_annotated_region(&slide, &poly, tile, stride, threshold)
            .unwrap()
            .iter()
            .map(|t| (t.x, t.y))
            .collect();
        let mut want = Vec::new();
        for y in (0..=side - tile).step_by(stride) {
            for x in (0..=side - tile).step_by(stride) {
                let mut covered = 0usize;
                for py in y..y + tile {
                    for px in x..x + tile {
                        covered += inside(poly.vertices(), px as f64 + 0.5, py as f64 + 0.5) as usize;
                    }
                }
                if covered as f64 >= threshold * (tile * tile) as f64 {
                    want.push((x, y));
                }
            }
        }
        assert_eq!(got, want, "polygon {:?}, tile {tile}, stride {stride}", poly.vertices());
        checked += 1;
    }
}

#[test]
fn extracted_tiles_hold_slide_pixels() {
    let (slide, poly) = generate_synthetic_slide(2, 5, 256, 32).unwrap();
    let tiles = tile_annotated_region(&slide, &poly, 32, 32, 0.5).unwrap();
    assert!(!tiles.is_empty());
    for t in tiles {
        for dy in 0..32 {
            for dx in 0..32 {
                assert_eq!(t.pixels.get(dx, dy), slide.pixels.get(t.x + dx, t.y + dy));
            }
        }
    }
}

/// Power spectrum `|F(u, v)|²` of a square image, indices `0..n` (negative
/// frequencies wrap to `n - k`).
fn power_spectrum(img: &[f64], n: usize) -> Vec<f64> {
    let twiddle = |k: usize, x: usize| {
        let a = -2.0 * PI * ((k * x) % n) as f64 / n as f64;
        (a.cos(), a.sin())
    };
    // rows, then columns
    let mut rows = vec![(0.0, 0.0); n * n];
    for y in 0..n {
        for u in 0..n {
            let (mut re, mut im) = (0.0, 0.0);
            for x in 0..n {
                let (c, s) = twiddle(u, x);
                re += img[y * n + x] * c;
                im += img[y * n + x] * s;
            }
            rows[y * n + u] = (re, im);
        }
    }
    let mut out = vec![0.0; n * n];
    for v in 0..n {
        for u in 0..n {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..n {
                let (c, s) = twiddle(v, y);
                let (a, b) = rows[y * n + u];
                re += a * c - b * s;
                im += a * s + b * c;
            }
            out[v * n + u] = re * re + im * im;
        }
    }
    out
}

fn signed(k: usize, n: usize) -> i64 {
    if k > n / 2 {
        k as i64 - n as i64
    } else {
        k as i64
    }
}

/// Strongest bin (as signed frequencies) whose per-axis magnitudes lie in
/// `lo..=hi`.
fn peak(power: &[f64], n: usize, lo: i64, hi: i64) -> (i64, i64) {
    let mut best = (0, 0, f64::MIN);
    for v in 0..n {
        for u in 0..n {
            let (su, sv) = (signed(u, n), signed(v, n));
            if (lo..=hi).contains(&su.abs()) && (lo..=hi).contains(&sv.abs()) && power[v * n + u] > best.2 {
                best = (su, sv, power[v * n + u]);
            }
        }
    }
    (best.0, best.1)
}

fn crop(p: &Plane, x: usize, y: usize, n: usize) -> Vec<f64> {
    (0..n).flat_map(|dy| (0..n).map(move |dx| p.get(x + dx, y + dy))).collect()
}

#[test]
fn spectral_peaks_follow_class_patterns() {
    let n = 128;
    for (class, pattern) in CLASS_PATTERNS.iter().enumerate() {
        for seed in 0..3 {
            let (slide, _) = generate_synthetic_slide(class, seed, 256, 32).unwrap();
            let power = power_spectrum(&crop(&slide.pixels, 64, 64, n), n);
            let (u, v) = peak(&power, n, 1, 10);
            let expected = (n as f64 / pattern.macro_period).round() as i64;
            assert_eq!((u.abs(), v.abs()), (expected, expected), "class {class} seed {seed} macro peak");
            let (u, v) = peak(&power, n, 15, 40);
            let diagonal_sign = (u * v).signum() as f64;
            let normal = pattern.micro_angle.expect("target classes carry a grating");
            assert_eq!(diagonal_sign, (normal.cos() * normal.sin()).signum(), "class {class} seed {seed} grating");
        }
    }
}

fn rms_difference(a: &Plane, b: &Plane) -> f64 {
    let d: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    (d / a.data().len() as f64).sqrt()
}

#[test]
fn grating_survives_half_resolution_but_not_quarter() {
    // Under one seed, classes 0 and 1 draw identical nuisances and differ
    // only in grating orientation.
    for seed in 0..3 {
        let (a, _) = generate_synthetic_slide(0, seed, 256, 32).unwrap();
        let (b, _) = generate_synthetic_slide(1, seed, 256, 32).unwrap();
        let full = rms_difference(&a.pixels, &b.pixels);
        let half = rms_difference(
            &lanczos_resize(&a.pixels, 128, 3).unwrap(),
            &lanczos_resize(&b.pixels, 128, 3).unwrap(),
        );
        let quarter = rms_difference(
            &lanczos_resize(&a.pixels, 64, 3).unwrap(),
            &lanczos_resize(&b.pixels, 64, 3).unwrap(),
        );
        assert!(full > 0.1, "seed {seed}: full-resolution difference {full}");
        assert!(half > 0.5 * full, "seed {seed}: ×2 keeps {half} of {full}");
        assert!(quarter < 0.05 * full, "seed {seed}: ×4 leaves {quarter} of {full}");
    }
}

/// Magnitude spectrum of the ×8 downscale, normalized to unit length.
fn low_res_features(class: usize, seed: u64) -> Vec<f64> {
    let (slide, _) = generate_synthetic_slide(class, seed, 512, 64).unwrap();
    let small = lanczos_resize(&slide.pixels, 64, 3).unwrap();
    let mut f: Vec<f64> = power_spectrum(small.data(), 64).iter().map(|p| p.sqrt()).collect();
    f[0] = 0.0;
    let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    f.iter().map(|x| x / norm).collect()
}

#[test]
fn macro_classes_separate_at_eighth_resolution() {
    // Classes 0 and 1 share a macro pattern, so they form one group here.
    let group = |c: usize| if c == 1 { 0 } else { c };
    let groups = [0usize, 2, 3, 4];
    let centroids: Vec<Vec<f64>> = groups
        .iter()
        .map(|&g| {
            let feats: Vec<Vec<f64>> = (0..3).map(|s| low_res_features(g, s)).collect();
            (0..feats[0].len()).map(|i| feats.iter().map(|f| f[i]).sum::<f64>() / 3.0).collect()
        })
        .collect();
    for class in 0..CLASS_PATTERNS.len() {
        for seed in 100..103 {
            let f = low_res_features(class, seed);
            let nearest = centroids
                .iter()
                .map(|c| c.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| groups[i])
                .unwrap();
            assert_eq!(nearest, group(class), "class {class} seed {seed}");
        }
    }
}

fn lanczos3(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.abs() >= 3.0 {
        0.0
    } else {
        let p = PI * x;
        3.0 * p.sin() * (p / 3.0).sin() / (p * p)
    }
}

#[test]
fn checkerboard_halving_matches_direct_summation() {
    let side = 8;
    let board: Vec<f64> = (0..side * side).map(|i| ((i / side + i % side) % 2) as f64).collect();
    let got = lanczos_resize(&Plane::new(side, board.clone()).unwrap(), 4, 3).unwrap();
    for oy in 0..4 {
        for ox in 0..4 {
            let (cx, cy) = (2.0 * ox as f64 + 0.5, 2.0 * oy as f64 + 0.5);
            let (mut acc, mut wsum) = (0.0, 0.0);
            for sy in -8i64..16 {
                for sx in -8i64..16 {
                    let w = lanczos3((sx as f64 - cx) / 2.0) * lanczos3((sy as f64 - cy) / 2.0);
                    let px = sx.clamp(0, 7) as usize;
                    let py = sy.clamp(0, 7) as usize;
                    acc += w * board[py * side + px];
                    wsum += w;
                }
            }
            let want = acc / wsum;
            assert!((got.get(ox, oy) - want).abs() < 1e-12, "({ox}, {oy}): {} vs {want}", got.get(ox, oy));
        }
    }
}
