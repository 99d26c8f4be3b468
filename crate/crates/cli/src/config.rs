//! Flat `key = value` experiment configuration.
//!
//! One assignment per line, `#` starts a comment, keys are dotted
//! (`estimator.sigma`). Omitted keys take their defaults; unknown or repeated
//! keys are rejected.

use std::collections::HashMap;
use std::path::PathBuf;

use sbl_doa::harness::{SweepSpec, SweepVariable};
use sbl_doa::{ArrayGeometry, EstimatorConfig, ExperimentSetup, GdpConfig, SourceMode};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ConfigError {
    /// 1-based; 0 when the problem is not tied to a line.
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        line,
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n1: u32,
    pub n2: u32,
    pub d_over_lambda: f64,
    pub num_sources: usize,
    pub angle_range: (f64, f64),
    pub snapshots: usize,
    pub snr_db: f64,
    pub seed: u64,
    pub source_mode: SourceMode,
    pub grid_range: (f64, f64),
    pub grid_step: f64,
    pub sigma: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub grid_refine: bool,
    /// Degrees; `None` means a hundredth of the grid step.
    pub fine_step: Option<f64>,
    pub sweep: Option<SweepSection>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n1: 3,
            n2: 4,
            d_over_lambda: 0.5,
            num_sources: 10,
            angle_range: (-60.0, 60.0),
            snapshots: 200,
            snr_db: 20.0,
            seed: 0,
            source_mode: SourceMode::Even,
            grid_range: (-90.0, 90.0),
            grid_step: 1.0,
            sigma: 0.1,
            tol: 1e-3,
            max_iters: 1000,
            grid_refine: true,
            fine_step: None,
            sweep: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

const KEYS: &[&str] = &[
    "geometry.n1",
    "geometry.n2",
    "geometry.d_over_lambda",
    "scenario.num_sources",
    "scenario.angle_min",
    "scenario.angle_max",
    "scenario.snapshots",
    "scenario.snr_db",
    "scenario.seed",
    "scenario.source_mode",
    "grid.min",
    "grid.max",
    "grid.step",
    "estimator.sigma",
    "estimator.tol",
    "estimator.max_iters",
    "estimator.grid_refine",
    "estimator.fine_step",
    "sweep.variable",
    "sweep.values",
    "sweep.trials",
    "output.dir",
];

struct Entries<'a> {
    map: HashMap<&'a str, (usize, &'a str)>,
}

impl<'a> Entries<'a> {
    fn line(&self, key: &str) -> usize {
        self.map.get(key).map_or(0, |e| e.0)
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.map.get(key) {
            None => Ok(default),
            Some(&(line, raw)) => raw
                .parse()
                .or_else(|_| err(line, format!("`{key}`: cannot parse `{raw}`"))),
        }
    }
}

fn parse_mode(line: usize, raw: &str) -> Result<SourceMode, ConfigError> {
    match raw {
        "even" => Ok(SourceMode::Even),
        "random" => Ok(SourceMode::Random),
        "fixed_random" => Ok(SourceMode::FixedRandom),
        _ => err(line, format!("unknown source mode `{raw}` (even, random, fixed_random)")),
    }
}

fn parse_bool(line: usize, raw: &str) -> Result<bool, ConfigError> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => err(line, format!("expected a boolean, got `{raw}`")),
    }
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut map = HashMap::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return err(line, format!("expected `key = value`, got `{content}`"));
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return err(line, format!("unknown key `{key}`"));
        }
        if value.is_empty() {
            return err(line, format!("`{key}` has no value"));
        }
        if let Some((first, _)) = map.insert(key, (line, value)) {
            return err(line, format!("`{key}` already set on line {first}"));
        }
    }
    let e = Entries { map };
    let d = ExperimentConfig::default();

    let source_mode = match e.map.get("scenario.source_mode") {
        Some(&(line, raw)) => parse_mode(line, raw)?,
        None => d.source_mode,
    };
    let grid_refine = match e.map.get("estimator.grid_refine") {
        Some(&(line, raw)) => parse_bool(line, raw)?,
        None => d.grid_refine,
    };
    let fine_step = match e.map.get("estimator.fine_step") {
        Some(_) => Some(e.get("estimator.fine_step", 0.0)?),
        None => None,
    };

    let sweep = match e.map.get("sweep.variable") {
        None => {
            for key in ["sweep.values", "sweep.trials"] {
                if e.map.contains_key(key) {
                    return err(e.line(key), format!("`{key}` needs `sweep.variable`"));
                }
            }
            None
        }
        Some(&(line, raw)) => {
            let variable = SweepVariable::parse(raw).map_or_else(
                || err(line, format!("unknown sweep variable `{raw}` (snr_db, snapshots, grid_step)")),
                Ok,
            )?;
            let Some(&(vline, vraw)) = e.map.get("sweep.values") else {
                return err(line, "`sweep.variable` needs `sweep.values`");
            };
            let values = vraw
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .or_else(|_| err(vline, format!("`sweep.values`: cannot parse `{vraw}`")))?;
            Some(SweepSection {
                variable,
                values,
                trials: e.get("sweep.trials", 50)?,
            })
        }
    };

    let cfg = ExperimentConfig {
        n1: e.get("geometry.n1", d.n1)?,
        n2: e.get("geometry.n2", d.n2)?,
        d_over_lambda: e.get("geometry.d_over_lambda", d.d_over_lambda)?,
        num_sources: e.get("scenario.num_sources", d.num_sources)?,
        angle_range: (
            e.get("scenario.angle_min", d.angle_range.0)?,
            e.get("scenario.angle_max", d.angle_range.1)?,
        ),
        snapshots: e.get("scenario.snapshots", d.snapshots)?,
        snr_db: e.get("scenario.snr_db", d.snr_db)?,
        seed: e.get("scenario.seed", d.seed)?,
        source_mode,
        grid_range: (e.get("grid.min", d.grid_range.0)?, e.get("grid.max", d.grid_range.1)?),
        grid_step: e.get("grid.step", d.grid_step)?,
        sigma: e.get("estimator.sigma", d.sigma)?,
        tol: e.get("estimator.tol", d.tol)?,
        max_iters: e.get("estimator.max_iters", d.max_iters)?,
        grid_refine,
        fine_step,
        sweep,
        output_dir: e.get("output.dir", d.output_dir)?,
    };
    validate(&cfg, &e)?;
    Ok(cfg)
}

fn validate(c: &ExperimentConfig, e: &Entries) -> Result<(), ConfigError> {
    let positive = [
        ("geometry.d_over_lambda", c.d_over_lambda),
        ("grid.step", c.grid_step),
        ("estimator.sigma", c.sigma),
        ("estimator.tol", c.tol),
    ];
    for (key, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            return err(e.line(key), format!("`{key}` must be positive, got {v}"));
        }
    }
    if let Some(f) = c.fine_step {
        if !(f > 0.0 && f.is_finite()) {
            return err(e.line("estimator.fine_step"), "`estimator.fine_step` must be positive");
        }
    }
    for (key, v) in [
        ("scenario.num_sources", c.num_sources),
        ("scenario.snapshots", c.snapshots),
        ("estimator.max_iters", c.max_iters),
    ] {
        if v == 0 {
            return err(e.line(key), format!("`{key}` must be at least 1"));
        }
    }
    if let Err(m) = sbl_doa::coprime_positions(c.n1, c.n2) {
        return err(e.line("geometry.n2").max(e.line("geometry.n1")), m.to_string());
    }
    let (lo, hi) = c.angle_range;
    if !(lo <= hi && lo > -90.0 && hi < 90.0) {
        return err(
            e.line("scenario.angle_max").max(e.line("scenario.angle_min")),
            "source range must satisfy -90 < angle_min <= angle_max < 90",
        );
    }
    let (glo, ghi) = c.grid_range;
    if !(glo < ghi && glo >= -90.0 && ghi <= 90.0 && c.grid_step < ghi - glo) {
        return err(
            e.line("grid.step").max(e.line("grid.max")).max(e.line("grid.min")),
            "grid must satisfy -90 <= min < max <= 90 with a step below the span",
        );
    }
    if !c.snr_db.is_finite() {
        return err(e.line("scenario.snr_db"), "`scenario.snr_db` must be finite");
    }
    if let Some(s) = &c.sweep {
        let line = e.line("sweep.values");
        if s.values.is_empty() || s.values.iter().any(|v| !v.is_finite()) {
            return err(line, "`sweep.values` must be a non-empty list of numbers");
        }
        if s.trials == 0 {
            return err(e.line("sweep.trials"), "`sweep.trials` must be at least 1");
        }
        let bad = match s.variable {
            SweepVariable::SnrDb => None,
            SweepVariable::Snapshots => s
                .values
                .iter()
                .find(|v| **v < 1.0 || v.fract() != 0.0),
            SweepVariable::GridStep => s.values.iter().find(|v| **v <= 0.0),
        };
        if let Some(v) = bad {
            return err(line, format!("invalid {} value {v}", s.variable.name()));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn setup(&self) -> sbl_doa::Result<ExperimentSetup<f64>> {
        Ok(ExperimentSetup {
            geometry: ArrayGeometry::coprime(self.n1, self.n2, self.d_over_lambda)?,
            num_sources: self.num_sources,
            source_range: self.angle_range,
            source_mode: self.source_mode,
            source_power: 1.0,
            snapshots: self.snapshots,
            snr_db: self.snr_db,
            grid_range: self.grid_range,
            grid_step: self.grid_step,
            estimator: EstimatorConfig {
                gdp: GdpConfig {
                    sigma: self.sigma,
                    max_iters: self.max_iters,
                    tol: self.tol,
                    grid_refine: self.grid_refine,
                    num_sources: Some(self.num_sources),
                },
                fine_step: self.fine_step,
            },
        })
    }

    pub fn sweep_spec(&self) -> Option<SweepSpec<f64>> {
        self.sweep.as_ref().map(|s| SweepSpec {
            variable: s.variable,
            values: s.values.clone(),
            trials: s.trials,
            base_seed: self.seed,
        })
    }
}
