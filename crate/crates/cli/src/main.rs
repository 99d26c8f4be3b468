use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use sbl_doa_cli::{load_config, run_command, CliError, Mode};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Single,
    Sweep,
}

/// Off-grid sparse Bayesian DOA estimation on coprime arrays.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// Experiment config (`key = value` lines); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "single")]
    mode: ModeArg,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed, overriding `scenario.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(args: Args) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let mode = match args.mode {
        ModeArg::Single => Mode::Single,
        ModeArg::Sweep => Mode::Sweep,
    };
    run_command(mode, &cfg)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(args) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
