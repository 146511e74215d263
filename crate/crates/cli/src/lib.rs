//! `escape` command-line front end.

pub mod commands;
pub mod config;
pub mod presets;

use clap::{Args, Parser, Subcommand};
use commands::{Artifacts, Outcome};
use config::{ConfigError, RunConfig};
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "escape", version, about = "Escape rates and induced schemes for interval maps with holes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Spectral and Monte Carlo escape rate for one hole.
    Escape(Common),
    /// Ratio of escape rate to hole measure along a shrinking family.
    Scaling(Common),
    /// Escape rate over a fine ε grid with plateau detection.
    Staircase(Common),
    /// Extension, trimmed base and first-return scheme with structural checks.
    Hofbauer(Common),
    /// Tent/logistic comparison through conjugate holes at the fixed point 0.
    Counterexample(Common),
    /// Accim density and conditioned evolution towards it.
    Accim(Common),
    /// List built-in presets.
    Presets,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in preset; a config file, if given, is layered on top.
    #[arg(long)]
    pub preset: Option<String>,
    /// Output directory for CSV/JSON artifacts.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Preset, then config file, then flags.
pub fn resolve(common: &Common) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &common.preset {
        Some(p) => presets::preset(p)?,
        None => RunConfig::default(),
    };
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        cfg = merge(&cfg, &text)?;
    }
    if let Some(s) = common.seed {
        cfg.experiment.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output.dir = Some(o.display().to_string());
    }
    Ok(cfg)
}

/// Overlay a TOML document on `base`, table by table.
fn merge(base: &RunConfig, text: &str) -> Result<RunConfig, ConfigError> {
    let overlay: toml::Table = toml::from_str(text)?;
    let mut merged: toml::Table = toml::from_str(&base.to_toml()).expect("config round-trips");
    for (k, v) in overlay {
        match (merged.get_mut(&k), v) {
            // Tagged enums replace wholesale; plain tables merge key by key.
            (Some(toml::Value::Table(dst)), toml::Value::Table(src)) if !src.contains_key("kind") => {
                for (kk, vv) in src {
                    dst.insert(kk, vv);
                }
            }
            (_, v) => {
                merged.insert(k, v);
            }
        }
    }
    Ok(RunConfig::deserialize(toml::Value::Table(merged))?)
}


/// Exit status for an error: 2 for configuration and precondition
/// problems, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<escape_core::Error>() {
        Some(
            escape_core::Error::Config(_)
            | escape_core::Error::Domain { .. }
            | escape_core::Error::Unsupported(_)
            | escape_core::Error::Alignment { .. }
            | escape_core::Error::Kink { .. }
            | escape_core::Error::TruncationTooSmall(_),
        ) => 2,
        _ => 1,
    }
}

fn install_threads(threads: Option<usize>) -> usize {
    let k = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    // A second install in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    rayon::current_num_threads()
}

pub fn run_command(command: &Command) -> anyhow::Result<Option<Outcome>> {
    let common = match command {
        Command::Presets => {
            for (name, what) in presets::PRESETS {
                println!("{name:20} {what}");
            }
            return Ok(None);
        }
        Command::Escape(c)
        | Command::Scaling(c)
        | Command::Staircase(c)
        | Command::Hofbauer(c)
        | Command::Counterexample(c)
        | Command::Accim(c) => c,
    };
    let cfg = resolve(common)?;
    let threads = install_threads(common.threads);
    let dir = cfg.output.dir.as_ref().map(PathBuf::from);
    let art = Artifacts::new(dir.as_deref(), &cfg, threads)?;
    let out = match command {
        Command::Escape(_) => commands::cmd_escape(&cfg, &art),
        Command::Scaling(_) => commands::cmd_scaling(&cfg, &art),
        Command::Staircase(_) => commands::cmd_staircase(&cfg, &art),
        Command::Hofbauer(_) => commands::cmd_hofbauer(&cfg, &art),
        Command::Counterexample(_) => commands::cmd_counterexample(&cfg, &art),
        Command::Accim(_) => commands::cmd_accim(&cfg, &art),
        Command::Presets => unreachable!(),
    }?;
    Ok(Some(out))
}

/// Runs the parsed command and maps the outcome to an exit status.
pub fn run(cli: Cli) -> i32 {
    match run_command(&cli.command) {
        Ok(None) => 0,
        Ok(Some(out)) => {
            println!("{}", serde_json::to_string_pretty(&out.summary).expect("summary serializes"));
            if out.pass {
                0
            } else {
                eprintln!("gate failed");
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
