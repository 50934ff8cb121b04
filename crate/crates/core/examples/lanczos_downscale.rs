//! Lanczos-3 downscaling of a synthetic slide region by integer factors.

use prorez::wsi::{generate_synthetic_slide, lanczos_kernel, lanczos_resize, resample_weights, Plane};

fn stats(p: &Plane) -> (f64, f64, f64) {
    let d = p.data();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let (lo, hi) = d.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    (mean, lo, hi)
}

fn main() -> anyhow::Result<()> {
    println!("kernel: L(0)={:.3} L(0.5)={:.4} L(1)={:.1e} L(3)={}", lanczos_kernel(0.0, 3), lanczos_kernel(0.5, 3), lanczos_kernel(1.0, 3), lanczos_kernel(3.0, 3));
    let w = resample_weights(8, 2, 3);
    println!("factor 2, output pixel 1 taps: {:?}", w[1].iter().map(|(i, v)| format!("{i}:{v:.4}")).collect::<Vec<_>>());

    let (slide, _) = generate_synthetic_slide(2, 11, 1024, 128)?;
    let region = slide.pixels.crop(256, 256, 128);
    for factor in [1, 2, 4, 8] {
        let out = lanczos_resize(&region, 128 / factor, 3)?;
        let (mean, lo, hi) = stats(&out);
        println!("×{factor}: side {:>3}, mean {mean:.4}, range [{lo:.3}, {hi:.3}]", out.side());
    }

    let flat = Plane::filled(64, 0.37);
    let out = lanczos_resize(&flat, 16, 3)?;
    let worst = out.data().iter().map(|v| (v - 0.37).abs()).fold(0.0, f64::max);
    println!("constant image preserved to {worst:.1e}");
    match lanczos_resize(&flat, 128, 3) {
        Err(e) => println!("upscaling rejected: {e}"),
        Ok(_) => anyhow::bail!("upscaling was accepted"),
    }
    Ok(())
}
