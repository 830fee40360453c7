use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use tfmd::config::{load_run_config, RunConfig};
use tfmd::pipeline::{self, CvOptions};
use tfmd::{Error, Result};
use tfmd_core::eval;
use tfmd_core::tfr::Method;

/// Synthetic motor-current fault diagnosis with STFT-family images and a CNN.
#[derive(Parser)]
#[command(name = "tfmd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labelled current-signal dataset.
    Gen {
        /// Run configuration (JSON or TOML); its `motor` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Segments per (class, load) cell.
        #[arg(long)]
        per_cell: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a generated dataset to spectrogram images.
    Render {
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Transform and image settings (JSON or TOML).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Stratified k-fold cross-validation of the CNN on one image corpus.
    Cv {
        #[arg(long)]
        images: PathBuf,
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Training settings (JSON or TOML).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Rank methods from a directory of evaluation reports.
    Compare {
        #[arg(long)]
        reports: PathBuf,
        /// `.json` or `.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate, render, cross-validate and compare every method.
    RunAll {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: tfmd_core::Error| e.to_string())
}

fn config(path: Option<&Path>) -> Result<RunConfig> {
    path.map(load_run_config)
        .transpose()
        .map(Option::unwrap_or_default)
}

fn execute(cmd: Command) -> Result<serde_json::Value> {
    match cmd {
        Command::Gen {
            config: c,
            per_cell,
            seed,
            out,
        } => {
            let cfg = config(c.as_deref())?;
            let per_cell = per_cell.unwrap_or(cfg.per_cell);
            let seed = seed.unwrap_or(cfg.seed);
            let m = pipeline::generate_dataset(&cfg.motor, per_cell, seed, &out)?;
            Ok(json!({ "segments": m.entries.len(), "out": out }))
        }
        Command::Render {
            method,
            input,
            out,
            config: c,
        } => {
            let cfg = config(c.as_deref())?;
            let m = pipeline::render_corpus(&input, method, &cfg.tfr, &cfg.image, &out)?;
            Ok(json!({ "method": method, "images": m.entries.len(), "out": out }))
        }
        Command::Cv {
            images,
            method,
            k,
            seed,
            epochs,
            out,
            config: c,
        } => {
            let cfg = config(c.as_deref())?;
            let mut train = cfg.train.clone();
            if let Some(e) = epochs {
                train.epochs = e;
            }
            let run = RunConfig {
                k: k.unwrap_or(cfg.k),
                seed: seed.unwrap_or(cfg.seed),
                train,
                ..cfg
            };
            run.validate()?;
            let opts = CvOptions::new(run.k, run.seed, run.train);
            let r = pipeline::cross_validate_corpus(&images, method, &opts, &out)?;
            Ok(json!({
                "method": r.method,
                "mean_accuracy": r.mean_accuracy,
                "std_accuracy": r.std_accuracy,
                "failed_folds": r.failed_folds,
                "out": out,
            }))
        }
        Command::Compare { reports, out } => {
            let table = eval::compare_methods(&pipeline::load_reports(&reports)?)?;
            pipeline::write_comparison(&out, &table)?;
            print!("{}", table.to_text());
            Ok(json!({ "methods": table.rows.len(), "out": out }))
        }
        Command::RunAll { config: c, out } => {
            let cfg = config(c.as_deref())?;
            let outcome = pipeline::run_all(&cfg, &out)?;
            if let Some(t) = &outcome.comparison {
                print!("{}", t.to_text());
            }
            let failed = outcome.log.failures();
            if failed > 0 {
                return Err(Error::Stages {
                    failed,
                    total: outcome.log.stages.len(),
                });
            }
            Ok(json!({ "methods": outcome.reports.len(), "out": out }))
        }
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&Error::Usage(e.render().to_string().trim().to_owned())),
    };
    let pool = match pipeline::thread_pool() {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    match pool.install(|| execute(cli.command)) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
