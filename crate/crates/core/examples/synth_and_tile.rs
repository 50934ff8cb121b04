//! Generates a few synthetic slides, tiles their annotated regions at three
//! resolutions and writes the patch manifest.
//!
//! `cargo run --example synth_and_tile -- [out_dir]`

use std::path::PathBuf;

use prorez::wsi::{build_manifest, generate_synthetic_slide, write_pgm, CLASS_PATTERNS};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    let tmp = tempfile::tempdir()?;
    let dir = out.unwrap_or_else(|| tmp.path().to_path_buf());

    let mut slides = Vec::new();
    for (class, pattern) in CLASS_PATTERNS.iter().enumerate() {
        let (mut slide, polygon) = generate_synthetic_slide(class, 100 + class as u64, 1024, 128)?;
        slide.slide_id = format!("demo-c{class}");
        slide.patient_id = format!("patient-{class}");
        println!(
            "class {class}: macro period {:.1}, annotation covers {:.0}% of the slide",
            pattern.macro_period,
            100.0 * polygon.area() / (1024.0 * 1024.0)
        );
        write_pgm(&slide.pixels, &dir.join(format!("{}.pgm", slide.slide_id)))?;
        slides.push((slide, polygon));
    }
    let manifest = build_manifest(&slides, 128, &[1, 2, 4], &dir)?;
    for (slide, (patient, label)) in manifest.slides() {
        let n = manifest.records().iter().filter(|r| r.slide_id == slide).count();
        println!("{slide} ({patient}, class {label}): {n} tiles");
    }
    println!("{} patches written under {}", manifest.len(), dir.display());
    Ok(())
}
