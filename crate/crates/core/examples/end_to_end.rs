//! The whole workflow on the bundled desk-scale configuration, from slide
//! synthesis to the comparison table. Takes several minutes.
//!
//! `cargo run --release --example end_to_end -- [run_dir]`

use std::path::PathBuf;

use prorez::pipeline::{Pipeline, PipelineConfig};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let run_dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("prorez-desk"));
    let pipeline = Pipeline::new(PipelineConfig::desk(), Some(&run_dir), None)?;
    pipeline.run_all()?;
    let table = std::fs::read_to_string(pipeline.layout.reports().join("table_mean.csv"))?;
    println!("{table}");
    println!("artifacts in {}", run_dir.display());
    Ok(())
}
