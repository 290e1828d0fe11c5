//! `scadavae` command line: generate, train, score, threshold, eval, rules.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scadavae::vae::Sampling;
use scadavae::{Error, ErrorKind};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "scadavae", version, about = "VAE-based cyberattack detection for SCADA time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; `SCADAVAE_*` variables and flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Input dataset CSV.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Model file (written by train, read by score and train --online).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// LRP CSV written by score.
    #[arg(long, global = true)]
    lrp: Option<PathBuf>,
    /// Network metadata JSON for rule checks.
    #[arg(long, global = true)]
    meta: Option<PathBuf>,
    /// Scenario JSON for gen.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Comma-separated LRP thresholds.
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    thresholds: Option<Vec<f64>>,
    /// Pick the threshold as this lower quantile of the LRP values (no labels needed).
    #[arg(long, global = true)]
    quantile: Option<f64>,
    /// Also write an SVG plot of the LRP trace.
    #[arg(long, global = true)]
    svg: bool,
    /// Monte-Carlo LRP with this many latent samples instead of the posterior mean.
    #[arg(long, global = true)]
    mc_samples: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a training run and an attack run of the synthetic network.
    Gen,
    /// Train a model on --data, or update --model in place with --online.
    Train {
        #[arg(long)]
        online: bool,
    },
    /// Score every window of --data with --model.
    Score,
    /// Choose a threshold for an LRP file: F1-optimal against --data labels, or --quantile.
    Threshold,
    /// Evaluate an LRP file against --data labels.
    Eval,
    /// Run the physical rule checks on --data with --meta.
    Rules,
}

impl Cli {
    fn run_config(&self) -> scadavae::Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref(), std::env::vars())?;
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                slot.clone_from(v);
            }
        };
        set(&mut cfg.data, &self.data);
        set(&mut cfg.model, &self.model);
        set(&mut cfg.lrp, &self.lrp);
        set(&mut cfg.network_meta, &self.meta);
        set(&mut cfg.scenario, &self.scenario);
        if let Some(out) = &self.out {
            cfg.out.clone_from(out);
        }
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if let Some(t) = &self.thresholds {
            cfg.thresholds.clone_from(t);
        }
        if self.quantile.is_some() {
            cfg.quantile = self.quantile;
        }
        cfg.svg |= self.svg;
        if let Some(samples) = self.mc_samples {
            let seed = match cfg.sampling {
                Sampling::Mc { seed, .. } => seed,
                Sampling::Mode => 0,
            };
            cfg.sampling = Sampling::Mc { samples, seed };
        }
        cfg.apply_seed();
        Ok(cfg)
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
        ErrorKind::Io => 5,
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = cli.run_config()?;
    match cli.command {
        Command::Gen => commands::gen(&cfg),
        Command::Train { online } => commands::train(&cfg, online),
        Command::Score => commands::score(&cfg),
        Command::Threshold => commands::threshold(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Rules => commands::rules(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            eprintln!("error ({}): {e}", format!("{kind:?}").to_lowercase());
            ExitCode::from(exit_code(kind))
        }
    }
}
