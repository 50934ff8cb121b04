use super::{AnnotationPolygon, Plane, SlideImage};
use crate::error::{Error, Result};

/// One extracted tile at full resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    /// Top-left corner in slide pixels.
    pub x: usize,
    pub y: usize,
    pub pixels: Plane,
}

/// Summed-area table of the annotation mask, `(side + 1)²` entries.
///
/// A pixel belongs to the mask when its centre `(px + 0.5, py + 0.5)` lies
/// inside the polygon under the even-odd rule; each row is rasterized from
/// the sorted edge crossings of its centre line.
pub fn coverage_integral(polygon: &AnnotationPolygon, side: usize) -> Vec<u32> {
    let stride = side + 1;
    let mut table = vec![0u32; stride * stride];
    let mut row_mask = vec![0u32; side];
    for py in 0..side {
        row_mask.iter_mut().for_each(|v| *v = 0);
        let xs = polygon.crossings(py as f64 + 0.5);
        for span in xs.chunks_exact(2) {
            // centres c = px + 0.5 with span[0] <= c < span[1]
            let first = (span[0] - 0.5).ceil().max(0.0);
            let end = (span[1] - 0.5).ceil().min(side as f64);
            if end > first {
                for v in &mut row_mask[first as usize..end as usize] {
                    *v = 1;
                }
            }
        }
        let mut running = 0u32;
        for px in 0..side {
            running += row_mask[px];
            table[(py + 1) * stride + px + 1] = table[py * stride + px + 1] + running;
        }
    }
    table
}

fn window_sum(table: &[u32], side: usize, x: usize, y: usize, size: usize) -> u32 {
    let s = side + 1;
    table[(y + size) * s + x + size] + table[y * s + x] - table[y * s + x + size] - table[(y + size) * s + x]
}

/// Cuts the slide into `tile × tile` windows on a grid of step `stride` and
/// keeps those whose pixel-centre coverage by the annotation is at least
/// `min_coverage`. Tiles are returned in row-major order of their origins.
pub fn tile_annotated_region(
    slide: &SlideImage,
    polygon: &AnnotationPolygon,
    tile: usize,
    stride: usize,
    min_coverage: f64,
) -> Result<Vec<Tile>> {
    let side = slide.side();
    if tile == 0 || stride == 0 {
        return Err(Error::Validation("tile size and stride must be positive".into()));
    }
    if tile > side {
        return Err(Error::Validation(format!(
            "tile {tile} is larger than the slide ({side})"
        )));
    }
    if !(0.0..=1.0).contains(&min_coverage) {
        return Err(Error::Validation(format!(
            "coverage threshold {min_coverage} outside [0, 1]"
        )));
    }
    // Re-validate: the polygon may have been deserialized without checks.
    let polygon = AnnotationPolygon::new(polygon.vertices().to_vec())?;
    let table = coverage_integral(&polygon, side);
    let needed = min_coverage * (tile * tile) as f64;
    let mut out = Vec::new();
    let mut y = 0;
    while y + tile <= side {
        let mut x = 0;
        while x + tile <= side {
            let covered = window_sum(&table, side, x, y, tile) as f64;
            if covered >= needed && covered > 0.0 {
                out.push(Tile {
                    x,
                    y,
                    pixels: slide.pixels.crop(x, y, tile),
                });
            }
            x += stride;
        }
        y += stride;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slide(side: usize) -> SlideImage {
        let data = (0..side * side).map(|i| (i % 97) as f64 / 97.0).collect();
        SlideImage {
            pixels: Plane::new(side, data).unwrap(),
            slide_id: "s".into(),
            patient_id: "p".into(),
            class_label: 0,
        }
    }

    #[test]
    fn half_covered_tile_is_kept() {
        // covers exactly the left half of the first tile
        let poly = AnnotationPolygon::rect(0.0, 0.0, 64.0, 128.0).unwrap();
        let tiles = tile_annotated_region(&slide(256), &poly, 128, 128, 0.5).unwrap();
        assert_eq!(tiles.len(), 1);
        assert_eq!((tiles[0].x, tiles[0].y), (0, 0));
        // one column short of half
        let poly = AnnotationPolygon::rect(0.0, 0.0, 63.0, 128.0).unwrap();
        assert!(tile_annotated_region(&slide(256), &poly, 128, 128, 0.5).unwrap().is_empty());
    }

    #[test]
    fn tile_pixels_are_crops() {
        let s = slide(64);
        let poly = AnnotationPolygon::rect(0.0, 0.0, 64.0, 64.0).unwrap();
        let tiles = tile_annotated_region(&s, &poly, 16, 16, 0.5).unwrap();
        assert_eq!(tiles.len(), 16);
        let t = &tiles[5];
        assert_eq!((t.x, t.y), (16, 16));
        assert_eq!(t.pixels.get(3, 2), s.pixels.get(19, 18));
    }

    #[test]
    fn outside_annotation_yields_nothing() {
        let poly = AnnotationPolygon::rect(1000.0, 1000.0, 1100.0, 1100.0).unwrap();
        assert!(tile_annotated_region(&slide(64), &poly, 16, 16, 0.5).unwrap().is_empty());
    }

    #[test]
    fn bad_arguments() {
        let poly = AnnotationPolygon::rect(0.0, 0.0, 8.0, 8.0).unwrap();
        assert!(tile_annotated_region(&slide(16), &poly, 32, 32, 0.5).is_err());
        assert!(tile_annotated_region(&slide(16), &poly, 8, 0, 0.5).is_err());
        assert!(tile_annotated_region(&slide(16), &poly, 8, 8, 1.5).is_err());
    }
}
