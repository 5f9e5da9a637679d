use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mtjlab::harness::{execute, Command, RunConfig, MANIFEST_FILE};

/// Stochastic MTJ neurons, stochastic arithmetic and polar decoding experiments.
///
/// Config keys can be overridden from the environment as
/// MTJLAB_<SECTION>__<KEY> (for example MTJLAB_SWEEP__TRIALS_PER_POINT=500).
#[derive(Debug, Parser)]
#[command(name = "mtjlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; overrides the config.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Directory for data files and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Cmd {
    /// Switching-probability sweep and logistic fit.
    DeviceSweep,
    /// Concentration of stochastic AND products and MUX sums.
    ScArithBench,
    /// Train the neural polar decoder.
    TrainDecoder,
    /// Bit and frame error rates of the SC and/or neural decoder.
    Ber,
    /// Backprop against finite differences on random networks.
    Gradcheck,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::DeviceSweep => Command::DeviceSweep,
            Cmd::ScArithBench => Command::ScArithBench,
            Cmd::TrainDecoder => Command::TrainDecoder,
            Cmd::Ber => Command::Ber,
            Cmd::Gradcheck => Command::Gradcheck,
        }
    }
}

fn resolve(cli: &Cli) -> mtjlab::Result<RunConfig> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.with_env_overrides(std::env::vars())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = Command::from(cli.command);
    let result = resolve(&cli).and_then(|cfg| execute(command, &cfg, &cli.out_dir));
    match result {
        Ok(manifest) => {
            for out in &manifest.outputs {
                println!("{}", cli.out_dir.join(out).display());
            }
            println!("{}", cli.out_dir.join(MANIFEST_FILE).display());
            eprintln!("{} finished in {:.1} s", command.name(), manifest.duration_s);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}: {e}", command.name());
            ExitCode::FAILURE
        }
    }
}
