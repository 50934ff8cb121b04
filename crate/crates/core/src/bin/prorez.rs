use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use prorez::pipeline::{Pipeline, PipelineConfig};
use prorez::Error;

#[derive(Parser)]
#[command(name = "prorez", version, about = "Progressive-resizing slide classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory; overrides `paths.run_dir`.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Master seed; overrides `seeds.master`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic slides and annotations.
    Synth,
    /// Tile slides into multi-level patches and write the manifests.
    Tile,
    /// Assign patients to folds and write the run plans.
    Folds,
    /// Pretrain the backbone on the proxy task.
    Pretrain,
    /// Train a classifier (stage1, stage2, baseline1, baseline2) for every run.
    Train { stage: String },
    /// Predict patches; without a stage, every trained classifier.
    Predict { stage: Option<String> },
    /// Slide-level forest aggregation; without a stage, every trained classifier.
    Aggregate { stage: Option<String> },
    /// Compute metrics; without a stage, every trained classifier.
    Evaluate { stage: Option<String> },
    /// Write the comparison tables and ROC points.
    Report,
    /// Run every step for the configured classifiers.
    RunAll,
    /// Print the bundled desk-scale configuration.
    DefaultConfig,
}

fn stages(p: &Pipeline, stage: &Option<String>) -> Vec<String> {
    match stage {
        Some(s) => vec![s.clone()],
        None => p.trained_stages().into_iter().map(String::from).collect(),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Command::DefaultConfig = cli.command {
        print!("{}", prorez::pipeline::DESK_CONFIG);
        return Ok(());
    }
    let config = cli
        .config
        .ok_or_else(|| Error::Usage("--config <path> is required".into()))?;
    let p = Pipeline::new(PipelineConfig::load(&config)?, cli.run_dir.as_deref(), cli.seed)?;
    let each = |stage: &Option<String>, f: &dyn Fn(&str) -> Result<(), Error>| -> Result<(), Error> {
        let list = stages(&p, stage);
        if list.is_empty() {
            return Err(Error::MissingArtifact {
                path: p.layout.provenance(),
                hint: "train <stage>".into(),
            });
        }
        list.iter().try_for_each(|s| f(s))
    };
    match &cli.command {
        Command::Synth => p.synth(),
        Command::Tile => p.tile(),
        Command::Folds => p.folds(),
        Command::Pretrain => p.pretrain(),
        Command::Train { stage } => p.train(stage),
        Command::Predict { stage } => each(stage, &|s| p.predict(s)),
        Command::Aggregate { stage } => each(stage, &|s| p.aggregate(s)),
        Command::Evaluate { stage } => each(stage, &|s| p.evaluate(s)),
        Command::Report => p.report(),
        Command::RunAll => p.run_all(),
        Command::DefaultConfig => unreachable!("handled above"),
    }
}

fn main() -> anyhow::Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            e.print()?;
            return Ok(ExitCode::from(code));
        }
    };
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    match run(cli) {
        Ok(()) => Ok(ExitCode::SUCCESS),
        Err(e) => {
            eprintln!("error: {e}");
            Ok(ExitCode::from(e.exit_code() as u8))
        }
    }
}
