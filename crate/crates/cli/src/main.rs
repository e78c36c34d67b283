//! Experiment runner. Every subcommand reads an optional TOML config, applies
//! command-line overrides and writes CSV files into the output directory.

use std::path::PathBuf;
use std::process::ExitCode;

use beamcode::harness::{self, files, ExperimentConfig};
use beamcode::protocols::Scheme;
use clap::{Args, Parser, Subcommand};
use log::info;

#[derive(Parser)]
#[command(name = "beamcode", version, about = "Beam-coded beamforming training experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Monte-Carlo runs per cell
    #[arg(long, global = true)]
    runs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Array-factor pattern of a single or coded beam
    Pattern {
        #[arg(long)]
        beam: Option<usize>,
        /// Number of coded beams (0 for a single beam)
        #[arg(long)]
        coded: Option<usize>,
        #[arg(long)]
        field: Option<usize>,
        /// Phase quantization bits
        #[arg(long)]
        bits: Option<u32>,
        /// Constant-modulus projection before quantizing
        #[arg(long)]
        uniform: bool,
    },
    /// Power-ratio samples and CDFs for both packet layouts
    PowerVar,
    /// Aggregate SNR against phase-shifter resolution
    QuantSweep,
    /// Training bits per beam for both packet layouts
    Overhead,
    /// Run training schemes and dump the full outcome of the first run
    Train {
        #[arg(long, value_delimiter = ',')]
        scheme: Vec<String>,
        /// Use the four-beam toy channel with this NLOS attenuation
        #[arg(long)]
        toy: Option<f64>,
    },
}

fn build_config(cli: &Cli) -> beamcode::Result<ExperimentConfig> {
    let mut cfg = match &cli.common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.common.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &cli.common.out {
        cfg.output = o.clone();
    }
    if let Some(r) = cli.common.runs {
        cfg.runs = r;
    }
    match &cli.command {
        Command::Pattern { beam, coded, field, bits, uniform } => {
            let p = &mut cfg.pattern;
            p.beam = beam.unwrap_or(p.beam);
            p.coded_beams = coded.unwrap_or(p.coded_beams);
            p.field = field.unwrap_or(p.field);
            p.quantization_bits = bits.or(p.quantization_bits);
            p.uniform |= *uniform;
        }
        Command::Train { scheme, toy } => {
            if !scheme.is_empty() {
                cfg.schemes = scheme.iter().map(|s| s.parse::<Scheme>()).collect::<beamcode::Result<_>>()?;
            }
            if toy.is_some() {
                cfg.toy_attenuation = *toy;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli, cfg: &ExperimentConfig) -> beamcode::Result<Vec<&'static str>> {
    let dir = &cfg.output;
    std::fs::create_dir_all(dir)?;
    Ok(match cli.command {
        Command::Pattern { .. } => {
            harness::write_pattern(cfg, dir)?;
            vec![files::PATTERN]
        }
        Command::PowerVar => {
            harness::write_power_var(cfg, dir)?;
            vec![files::GAMMA, files::CDF]
        }
        Command::QuantSweep => {
            harness::write_quant_sweep(cfg, dir)?;
            vec![files::QUANT]
        }
        Command::Overhead => {
            harness::write_overhead(cfg, dir)?;
            vec![files::OVERHEAD]
        }
        Command::Train { .. } => {
            harness::write_train(cfg, dir)?;
            vec![files::TRAIN, files::TRAIN_TRACE]
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BEAMCODE_LOG", "warn")).init();
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("beamcode: {e}");
            return ExitCode::from(2);
        }
    };
    info!("master seed {}, {} runs, output {}", cfg.master_seed, cfg.runs, cfg.output.display());
    match execute(&cli, &cfg) {
        Ok(written) => {
            for f in written {
                println!("{}", cfg.output.join(f).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("beamcode: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
