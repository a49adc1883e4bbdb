//! Command-line front end: experiment configuration, training and
//! evaluation runs, Grad-CAM panels, result tables and the review service.

pub mod commands;
pub mod config;
pub mod review;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "attnbench", version, about = "Attention modules on ResNet-18: training, evaluation, Grad-CAM and blinded review")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Key-value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Same as `--set output.dir=...`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the configured attention kinds, one run per seed.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Kinds to train (`none`, `se`, `cbam`, `gc`, comma-separated, or `all`).
        #[arg(long)]
        attention: Option<String>,
    },
    /// Score a checkpoint on the validation split.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write per-image scores as CSV.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Render Grad-CAM comparison panels from trained checkpoints.
    Gradcam {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory holding `runs/`; defaults to `output.dir`.
        #[arg(long)]
        runs: Option<PathBuf>,
    },
    /// Serve panels for blinded review under /v1.
    ReviewServe {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        panels: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Merge persisted runs into the results table.
    Report {
        /// Training output directory (or its `runs/` subdirectory).
        #[arg(long)]
        runs: PathBuf,
        /// Where to write report.csv and report.json; defaults to `--runs`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(args: &ConfigArgs, mut extra: Vec<String>) -> Result<config::ExperimentConfig, CliError> {
    let mut overrides = args.set.clone();
    if let Some(o) = &args.output {
        overrides.push(format!("output.dir={}", o.display()));
    }
    overrides.append(&mut extra);
    Ok(config::load(args.config.as_deref(), &overrides)?)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, attention } => {
            let extra = attention.map(|a| format!("model.attention={a}")).into_iter().collect();
            commands::train(&resolve(&config, extra)?)?;
        }
        Command::Eval { config, checkpoint, scores } => {
            commands::eval(&resolve(&config, Vec::new())?, &checkpoint, scores.as_deref())?;
        }
        Command::Gradcam { config, runs } => {
            let cfg = resolve(&config, Vec::new())?;
            let runs = runs.unwrap_or_else(|| cfg.output.clone());
            commands::gradcam(&cfg, &runs)?;
        }
        Command::ReviewServe { config, panels, store, port } => {
            let mut extra = Vec::new();
            if let Some(p) = panels {
                extra.push(format!("review.panels={}", p.display()));
            }
            if let Some(s) = store {
                extra.push(format!("review.store={}", s.display()));
            }
            if let Some(p) = port {
                extra.push(format!("review.port={p}"));
            }
            let cfg = resolve(&config, extra)?;
            cfg.validate(false)?;
            let state = review::ReviewState::open(
                &cfg.panels_path(),
                &cfg.store_path(),
                cfg.review.seed,
                cfg.review.visible_probabilities,
            )?;
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().map_err(anyhow::Error::from)?;
            rt.block_on(review::serve(state, cfg.review.port))?;
        }
        Command::Report { runs, out } => {
            let out = out.unwrap_or_else(|| runs.clone());
            commands::report(&runs, &out)?;
        }
    }
    Ok(())
}
