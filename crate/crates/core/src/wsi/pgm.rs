use std::fs;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use super::Plane;
use crate::error::{Error, Result};

/// Writes the plane as binary 8-bit PGM (P5); values are clamped to `[0, 1]`
/// and rounded to the nearest of 256 levels.
pub fn write_pgm(plane: &Plane, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let bytes: Vec<u8> = plane
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let side = plane.side() as u32;
    let mut encoded = Vec::with_capacity(bytes.len() + 32);
    PnmEncoder::new(&mut encoded)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&bytes, side, side, ExtendedColorType::L8)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    fs::write(path, encoded).map_err(|e| Error::io(path, e))
}

/// Reads a square 8-bit grayscale image and scales it to `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<Plane> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    if w != h {
        return Err(Error::Shape(format!(
            "{}: expected a square image, got {w}×{h}",
            path.display()
        )));
    }
    let data = gray.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Plane::new(w as usize, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_on_the_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b.pgm");
        let data: Vec<f64> = (0..256).map(|i| i as f64 / 255.0).collect();
        let p = Plane::new(16, data).unwrap();
        write_pgm(&p, &path).unwrap();
        assert_eq!(&fs::read(&path).unwrap()[..2], b"P5");
        assert_eq!(read_pgm(&path).unwrap(), p);
    }
}
