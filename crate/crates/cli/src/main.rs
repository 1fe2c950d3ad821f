//! `truthprobe`: command-line driver for the probing pipeline.
//!
//! generate → validate → train-eval → calibrate → report, all driven by one
//! TOML configuration with flag overrides. Exit codes: 0 success,
//! 2 validation failure, 3 protocol error, 4 I/O error. Failures also print
//! one JSON line on stderr.

mod commands;
mod config;
mod error;
mod synth;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::Output;
use crate::config::{parse_seeds, Overrides, PipelineConfig};
use crate::error::CliError;
use crate::synth::{SynthKind, SynthOptions};

#[derive(Parser)]
#[command(name = "truthprobe", version, about = "Truthfulness probes over language-model hidden states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

/// A comma-separated seed list, parsed as one flag value.
#[derive(Clone, Debug)]
struct SeedList(Vec<u64>);

fn parse_seed_list(text: &str) -> Result<SeedList, String> {
    parse_seeds(text).map(SeedList)
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Layer to use; repeat for several. Replaces model.layers.
    #[arg(long = "layer", value_name = "N")]
    layers: Vec<u32>,
    /// Evaluate only this held-out topic.
    #[arg(long, value_name = "TOPIC")]
    held_out: Option<String>,
    /// Comma-separated seeds, e.g. 0,1,2. Replaces every seed list.
    #[arg(long, value_name = "CSV", value_parser = parse_seed_list)]
    seeds: Option<SeedList>,
    /// Output directory (reports, or datasets for `generate`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Generate true/false statement datasets from a recipe of property tables.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Recipe file; overrides paths.recipe.
        #[arg(long, value_name = "PATH")]
        recipe: Option<PathBuf>,
    },
    /// Check the store: counts, dims, finiteness, few-shot ids and the manifest.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Train probes and evaluate them (leave-one-topic-out, generated set, baselines).
    TrainEval {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate on the held-aside set with thresholds calibrated on 30% of it.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
    /// Render every report in a directory as tables.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic store and matching configuration (no model needed).
    Synth {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "shared")]
        kind: SynthKind,
        #[arg(long, default_value_t = 6)]
        topics: usize,
        #[arg(long, default_value_t = 100)]
        rows_per_topic: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 32)]
        depth: u32,
        /// Layers to write; defaults to the last, -4, -8, -12 and middle layers.
        #[arg(long = "layer", value_name = "N")]
        layers: Vec<u32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply(&Overrides {
        layers: common.layers.clone(),
        held_out: common.held_out.clone(),
        seeds: common.seeds.as_ref().map(|s| s.0.clone()),
        out: common.out.clone(),
    });
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: Command) -> Result<(Output, Format, bool), CliError> {
    Ok(match command {
        Command::Generate { common, recipe } => {
            let cfg = load_config(&common)?;
            (commands::generate(&cfg, recipe.as_deref())?, common.format, true)
        }
        Command::Validate { common } => {
            let cfg = load_config(&common)?;
            let out = commands::validate(&cfg)?;
            let ok = out.json["ok"].as_bool().unwrap_or(false);
            (out, common.format, ok)
        }
        Command::TrainEval { common } => {
            let cfg = load_config(&common)?;
            (commands::train_eval(&cfg)?, common.format, true)
        }
        Command::Calibrate { common } => {
            let cfg = load_config(&common)?;
            (commands::calibrate(&cfg)?, common.format, true)
        }
        Command::Report { common } => {
            let cfg = load_config(&common)?;
            let dir = cfg.require(&cfg.paths.reports, "reports (or --out)")?;
            (commands::report(dir)?, common.format, true)
        }
        Command::Synth {
            out,
            kind,
            topics,
            rows_per_topic,
            dim,
            depth,
            layers,
            seed,
            format,
        } => {
            let layers = if layers.is_empty() {
                truthprobe::store::LayerSet::standard(depth)
                    .map_err(|e| CliError::Config(e.to_string()))?
                    .layers()
                    .to_vec()
            } else {
                layers
            };
            let opts = SynthOptions {
                out,
                kind,
                topics,
                rows_per_topic,
                dim,
                depth,
                layers,
                seed,
            };
            (synth::synth(&opts)?, format, true)
        }
    })
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Generate { .. } => "generate",
        Command::Validate { .. } => "validate",
        Command::TrainEval { .. } => "train-eval",
        Command::Calibrate { .. } => "calibrate",
        Command::Report { .. } => "report",
        Command::Synth { .. } => "synth",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let name = command_name(&cli.command);
    match run(cli.command) {
        Ok((out, format, ok)) => {
            let text = match format {
                Format::Table => out.text.clone(),
                Format::Json => serde_json::to_string_pretty(&out.json).expect("json output") + "\n",
            };
            // A closed pipe (e.g. `| head`) is not an error worth a panic.
            let _ = std::io::stdout().lock().write_all(text.as_bytes());
            if ok {
                ExitCode::SUCCESS
            } else {
                let err = CliError::ValidationFailed(out.json["violations"].as_array().map_or(0, Vec::len));
                eprintln!("{}", err.to_json_line(name));
                ExitCode::from(err.exit_code() as u8)
            }
        }
        Err(err) => {
            eprintln!("{}", err.to_json_line(name));
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
