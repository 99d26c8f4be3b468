//! Batch front end: single estimation runs and Monte Carlo sweeps written as
//! CSV for external plotting.

pub mod config;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use sbl_doa::harness::write_sweep_csv;
use sbl_doa::{estimate_doa, match_estimates, run_sweep, simulate_snapshots, DoaError};

pub use config::{parse_config, ConfigError, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Single,
    Sweep,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("cannot read {path}: {source}")]
    ReadConfig { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: io::Error },
    #[error("estimation failed: {0}")]
    Estimation(#[from] DoaError),
}

impl CliError {
    /// 1 for configuration problems, 2 for anything that fails at run time.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::ReadConfig { .. } | CliError::Usage(_) => 1,
            CliError::Output { .. } | CliError::Estimation(_) => 2,
        }
    }
}

/// Reads and parses a config file; `None` means all defaults.
pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    let text = match path {
        None => String::new(),
        Some(p) => fs::read_to_string(p).map_err(|source| CliError::ReadConfig {
            path: p.to_path_buf(),
            source,
        })?,
    };
    Ok(parse_config(&text)?)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| CliError::Output {
            path: path.to_path_buf(),
            source,
        })
}

fn write_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    }
}

/// Runs one mode and returns the files it wrote.
pub fn run_command(mode: Mode, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(write_err(out))?;
    match mode {
        Mode::Single => run_single(cfg, out),
        Mode::Sweep => run_sweep_mode(cfg, out),
    }
}

fn run_single(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let setup = cfg.setup()?;
    let scenario = setup.scenario(cfg.seed, cfg.seed)?;
    let data = simulate_snapshots(&scenario, &setup.geometry)?;
    let dict = setup.dictionary()?;
    let est = estimate_doa(&data.y, &dict, setup.num_sources, &setup.estimator)?;

    let spectrum_path = out.join("spectrum.csv");
    let mut w = create(&spectrum_path)?;
    let db = est.normalized_spectrum_db();
    let mut marks = vec![None; est.grid.len()];
    for (c, r) in est.peaks.iter().zip(&est.refined) {
        marks[c.index] = Some(r.theta);
    }
    (|| -> io::Result<()> {
        writeln!(w, "angle_deg,power_db,peak,refined_deg")?;
        for ((theta, p), m) in est.grid.iter().zip(&db).zip(&marks) {
            match m {
                Some(r) => writeln!(w, "{theta:.6},{p:.6},1,{r:.6}")?,
                None => writeln!(w, "{theta:.6},{p:.6},0,")?,
            }
        }
        w.flush()
    })()
    .map_err(write_err(&spectrum_path))?;

    if est.shortfall {
        return Err(DoaError::PeakShortfall {
            found: est.angles.len(),
            expected: setup.num_sources,
        }
        .into());
    }
    let pairs = match_estimates(&scenario.source_angles, &est.angles)?;
    let estimates_path = out.join("estimates.csv");
    let mut w = create(&estimates_path)?;
    (|| -> io::Result<()> {
        writeln!(w, "true_deg,estimated_deg,abs_error_deg")?;
        for (t, e) in &pairs {
            writeln!(w, "{t:.6},{e:.6},{:.6}", (e - t).abs())?;
        }
        w.flush()
    })()
    .map_err(write_err(&estimates_path))?;
    Ok(vec![spectrum_path, estimates_path])
}

fn run_sweep_mode(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let spec = cfg
        .sweep_spec()
        .ok_or_else(|| CliError::Usage("sweep mode needs `sweep.variable` and `sweep.values`".into()))?;
    let rows = run_sweep(&spec, &cfg.setup()?)?;
    let path = out.join("sweep.csv");
    let mut w = create(&path)?;
    write_sweep_csv(&rows, &mut w)
        .and_then(|_| w.flush())
        .map_err(write_err(&path))?;
    Ok(vec![path])
}
