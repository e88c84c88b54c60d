//! `subaru`: capture simulation, training, enhancement, streaming emulation,
//! evaluation and reports.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{split_overrides, RunConfig};

/// Exit status of a failed run, as opposed to a usage error (2).
const RUNTIME_ERROR: u8 = 1;
const USAGE_ERROR: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "subaru",
    version,
    about = "Sub-Nyquist capture and multimodal speech reconstruction",
    after_help = "Any setting can be overridden with --section.key value, e.g. --train.lr 0.001.\n\
                  The default config file is taken from SUBARU_CONFIG when --config is absent."
)]
pub struct Cli {
    /// Sectioned TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory for outputs and the resolved config.
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a low-rate, low-resolution capture of a WAV file.
    Degrade {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        rate: Option<u32>,
        #[arg(long)]
        bits: Option<u32>,
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long)]
        noise: Option<PathBuf>,
    },
    /// Train a network on a corpus manifest or a freshly synthesised corpus.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Continue from a checkpoint of the same network.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Reconstruct a 16 kHz signal from a capture and optional vibration channel.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        acm: PathBuf,
        output: PathBuf,
        #[arg(long)]
        bcm: Option<PathBuf>,
    },
    /// Enhance a capture frame by frame and report latencies.
    StreamSim {
        acm: PathBuf,
        #[arg(long)]
        bcm: Option<PathBuf>,
        /// Untrained network when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Inject this inference latency instead of measuring it.
        #[arg(long)]
        inference_ms: Option<f64>,
        #[arg(long)]
        transport_ms: Option<f64>,
        #[arg(long)]
        frame_s: Option<f64>,
    },
    /// Compare estimates with references matched by file name.
    Evaluate {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        est: PathBuf,
    },
    /// ADC power table, savings ratio and ideal-model fit.
    PowerReport {
        /// High setting as rate:bits.
        #[arg(long, default_value = "24000:12")]
        from: String,
        /// Low setting as rate:bits.
        #[arg(long, default_value = "4000:8")]
        to: String,
    },
    /// LSD of degraded-then-upsampled audio over a rate x bits grid.
    Sweep {
        /// Directory of WAV files; synthetic speech when absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Draw sweep and training curves as SVG files.
    Plot {
        /// Records written by `sweep`.
        #[arg(long)]
        sweep: Option<PathBuf>,
        /// metrics.csv written by `train`.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Write a synthetic corpus with vibration channel, noise and manifest.
    SynthCorpus {
        out: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Degrade { .. } => "degrade",
            Command::Train { .. } => "train",
            Command::Enhance { .. } => "enhance",
            Command::StreamSim { .. } => "stream-sim",
            Command::Evaluate { .. } => "evaluate",
            Command::PowerReport { .. } => "power-report",
            Command::Sweep { .. } => "sweep",
            Command::Plot { .. } => "plot",
            Command::SynthCorpus { .. } => "synth-corpus",
        }
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let (args, overrides) = match split_overrides(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(USAGE_ERROR);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let mut cfg = match RunConfig::resolve(cli.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(USAGE_ERROR);
        }
    };
    if let Some(d) = &cli.run_dir {
        cfg.run.dir = Some(d.clone());
    }
    match commands::run(cli.command, cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<commands::UsageError>().is_some();
            ExitCode::from(if usage { USAGE_ERROR } else { RUNTIME_ERROR })
        }
    }
}
