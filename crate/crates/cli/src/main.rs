use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use reram_puf::experiment::{self, Command, ExperimentConfig};
use reram_puf::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;

/// ReRAM PUF simulation experiments.
#[derive(Debug, Parser)]
#[command(name = "reram-puf", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Sorted V_set readings with their cumulative fraction.
    Distribution(Common),
    /// Per-state error vectors under population drift.
    Drift(Common),
    /// Mean state error over a grid of population/cell sigma pairs.
    SigmaRatio(Common),
    /// Ternary 0/1/X error against the X margin.
    Ternary(Common),
    /// Run a network scenario of the authentication protocol.
    Protocol {
        #[command(flatten)]
        common: Common,
        /// Start from a bundled scenario instead of the defaults.
        #[arg(long, value_enum, conflicts_with = "config")]
        scenario: Option<Bundled>,
    },
    /// Print the effective configuration.
    Config {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, conflicts_with = "config")]
        scenario: Option<Bundled>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Bundled {
    Benign,
    StolenServerKeys,
    StolenKeysPlusC1,
}

impl Bundled {
    fn text(self) -> &'static str {
        match self {
            Bundled::Benign => include_str!("../scenarios/benign.conf"),
            Bundled::StolenServerKeys => include_str!("../scenarios/stolen-server-keys.conf"),
            Bundled::StolenKeysPlusC1 => include_str!("../scenarios/stolen-keys-plus-c1.conf"),
        }
    }
}

fn load(common: &Common, bundled: Option<Bundled>) -> Result<ExperimentConfig, Error> {
    let mut config = match (&common.config, bundled) {
        (Some(path), _) => ExperimentConfig::parse(&fs::read_to_string(path)?)?,
        (None, Some(b)) => ExperimentConfig::parse(b.text())?,
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn execute(cli: Cli) -> Result<(), Error> {
    let (command, common, bundled) = match &cli.command {
        Cmd::Distribution(c) => (Command::Distribution, c, None),
        Cmd::Drift(c) => (Command::Drift, c, None),
        Cmd::SigmaRatio(c) => (Command::SigmaRatio, c, None),
        Cmd::Ternary(c) => (Command::Ternary, c, None),
        Cmd::Protocol { common, scenario } => (Command::Protocol, common, *scenario),
        Cmd::Config { common, scenario } => {
            let config = load(common, *scenario)?;
            return emit(common.out.as_ref(), config.to_text().as_bytes());
        }
    };
    let config = load(common, bundled)?;
    let output = experiment::run(command, &config)?;
    let out = common.out.clone().or_else(|| config.output.as_ref().map(PathBuf::from));
    match out {
        Some(path) => {
            for written in output.write(&path)? {
                eprintln!("wrote {}", written.display());
            }
            Ok(())
        }
        None => emit(None, output.primary()),
    }
}

fn emit(out: Option<&PathBuf>, bytes: &[u8]) -> Result<(), Error> {
    match out {
        Some(path) => fs::write(path, bytes)?,
        None => io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::Param(_) => EXIT_CONFIG,
                Error::Io(_) => EXIT_IO,
                _ => EXIT_FAILURE,
            })
        }
    }
}
