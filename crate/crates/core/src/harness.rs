//! Monte Carlo driver: seeded trials, estimate/truth pairing and RMSE tables.

use std::io::{self, Write};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::array::{ArrayGeometry, GridDictionary};
use crate::error::{invalid, DoaError, Result};
use crate::estimator::{estimate_doa, EstimatorConfig};
use crate::scalar::Real;
use crate::sim::{generate_sources, simulate_snapshots, Scenario, SourceMode};

/// Everything needed to run one trial, apart from the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSetup<T: Real> {
    pub geometry: ArrayGeometry<T>,
    pub num_sources: usize,
    /// Range the sources are placed in, degrees.
    pub source_range: (T, T),
    pub source_mode: SourceMode,
    pub source_power: T,
    pub snapshots: usize,
    pub snr_db: T,
    /// Grid span, degrees.
    pub grid_range: (T, T),
    pub grid_step: T,
    pub estimator: EstimatorConfig<T>,
}

impl<T: Real> ExperimentSetup<T> {
    /// 9-sensor coprime array `(3, 4)`, ten evenly spaced sources in
    /// `[−60°, 60°]`, 200 snapshots at 20 dB, 1° grid over `[−90°, 90°]`.
    pub fn underdetermined_default() -> Self {
        Self {
            geometry: ArrayGeometry::coprime(3, 4, T::lit(0.5)).expect("valid coprime pair"),
            num_sources: 10,
            source_range: (T::lit(-60.0), T::lit(60.0)),
            source_mode: SourceMode::Even,
            source_power: T::one(),
            snapshots: 200,
            snr_db: T::lit(20.0),
            grid_range: (T::lit(-90.0), T::lit(90.0)),
            grid_step: T::one(),
            estimator: EstimatorConfig::default(),
        }
    }

    pub fn dictionary(&self) -> Result<GridDictionary<T>> {
        GridDictionary::uniform(self.grid_range.0, self.grid_range.1, self.grid_step, &self.geometry)
    }

    /// Sources for a trial; random modes use stream 1 of the trial's generator
    /// so they never share draws with the noise.
    pub fn sources(&self, seed: u64, base_seed: u64) -> Result<Vec<T>> {
        let stream_seed = match self.source_mode {
            SourceMode::FixedRandom => base_seed,
            _ => seed,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
        rng.set_stream(1);
        generate_sources(
            self.num_sources,
            self.source_range.0,
            self.source_range.1,
            self.source_mode,
            &mut rng,
        )
    }

    pub fn scenario(&self, seed: u64, base_seed: u64) -> Result<Scenario<T>> {
        Ok(Scenario {
            source_angles: self.sources(seed, base_seed)?,
            source_power: self.source_power,
            snapshots: self.snapshots,
            snr_db: self.snr_db,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult<T> {
    pub seed: u64,
    /// Ascending, degrees.
    pub true_angles: Vec<T>,
    /// Ascending, degrees; paired index-by-index with `true_angles`.
    pub estimated_angles: Vec<T>,
    pub abs_errors: Vec<T>,
    pub converged: bool,
    pub iterations: usize,
    pub wall_time: Duration,
}

impl<T: Real> TrialResult<T> {
    pub fn max_abs_error(&self) -> T {
        self.abs_errors.iter().fold(T::zero(), |a, &b| a.max(b))
    }
}

fn sorted<T: Real>(v: &[T]) -> Vec<T> {
    let mut v = v.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    v
}

/// One-to-one pairing of estimates with true angles by rank, which minimizes
/// the total absolute error for points on a line.
pub fn match_estimates<T: Real>(truth: &[T], est: &[T]) -> Result<Vec<(T, T)>> {
    if truth.len() != est.len() {
        return invalid(format!(
            "cannot pair {} estimates with {} true angles",
            est.len(),
            truth.len()
        ));
    }
    Ok(sorted(truth).into_iter().zip(sorted(est)).collect())
}

/// `√(Σ_r Σ_k (θ̂_rk − θ_k)² / (R·K))` in degrees.
pub fn rmse<T: Real>(trials: &[TrialResult<T>]) -> Result<T> {
    if trials.is_empty() {
        return invalid("rmse of an empty trial set");
    }
    let k = trials[0].abs_errors.len();
    if k == 0 || trials.iter().any(|t| t.abs_errors.len() != k) {
        return invalid("all trials must report the same positive number of sources");
    }
    let sum = trials
        .iter()
        .flat_map(|t| t.abs_errors.iter())
        .fold(T::zero(), |acc, &e| acc + e * e);
    Ok((sum / T::from_usize_lossy(trials.len() * k)).sqrt())
}

/// Runs one seeded trial: draw sources, simulate, estimate, pair.
///
/// Returns [`DoaError::PeakShortfall`] when fewer peaks than sources are found.
pub fn run_trial<T: Real>(setup: &ExperimentSetup<T>, seed: u64, base_seed: u64) -> Result<TrialResult<T>> {
    let start = Instant::now();
    let scenario = setup.scenario(seed, base_seed)?;
    let data = simulate_snapshots(&scenario, &setup.geometry)?;
    let dict = setup.dictionary()?;
    let est = estimate_doa(&data.y, &dict, setup.num_sources, &setup.estimator)?;
    if est.shortfall {
        return Err(DoaError::PeakShortfall {
            found: est.angles.len(),
            expected: setup.num_sources,
        });
    }
    let pairs = match_estimates(&data.true_angles, &est.angles)?;
    Ok(TrialResult {
        seed,
        true_angles: pairs.iter().map(|p| p.0).collect(),
        estimated_angles: pairs.iter().map(|p| p.1).collect(),
        abs_errors: pairs.iter().map(|p| (p.1 - p.0).abs()).collect(),
        converged: est.converged(),
        iterations: est.iterations(),
        wall_time: start.elapsed(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    SnrDb,
    Snapshots,
    GridStep,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::SnrDb => "snr_db",
            SweepVariable::Snapshots => "snapshots",
            SweepVariable::GridStep => "grid_step",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "snr_db" => Some(SweepVariable::SnrDb),
            "snapshots" => Some(SweepVariable::Snapshots),
            "grid_step" => Some(SweepVariable::GridStep),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec<T> {
    pub variable: SweepVariable,
    pub values: Vec<T>,
    pub trials: usize,
    pub base_seed: u64,
}

impl<T: Real> SweepSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return invalid("sweep needs at least one value");
        }
        if self.trials == 0 {
            return invalid("sweep needs at least one trial per value");
        }
        Ok(())
    }

    /// `setup` with the swept parameter set to `value`.
    pub fn apply(&self, setup: &ExperimentSetup<T>, value: T) -> Result<ExperimentSetup<T>> {
        let mut s = setup.clone();
        match self.variable {
            SweepVariable::SnrDb => s.snr_db = value,
            SweepVariable::Snapshots => {
                let l = value.round();
                if !(l >= T::one()) {
                    return invalid("snapshot count must be a positive integer");
                }
                s.snapshots = l.as_f64() as usize;
            }
            SweepVariable::GridStep => {
                if !(value > T::zero()) {
                    return invalid("grid step must be positive");
                }
                s.grid_step = value;
            }
        }
        Ok(s)
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow<T> {
    pub value: T,
    /// `NaN` when every trial failed.
    pub rmse: T,
    /// Fraction of estimator runs that stopped on the tolerance rule.
    pub conv_rate: T,
    pub mean_iters: T,
    pub failures: usize,
    pub trials: Vec<TrialResult<T>>,
}

/// All `trials` of one setup; trial `i` uses seed `base_seed + i`.
/// Output order follows the trial index regardless of scheduling.
pub fn run_trials<T: Real>(
    setup: &ExperimentSetup<T>,
    trials: usize,
    base_seed: u64,
) -> Vec<Result<TrialResult<T>>> {
    (0..trials as u64)
        .into_par_iter()
        .map(|i| run_trial(setup, base_seed.wrapping_add(i), base_seed))
        .collect()
}

pub fn summarize<T: Real>(value: T, outcomes: Vec<Result<TrialResult<T>>>) -> SweepRow<T> {
    let mut ok = Vec::new();
    let mut failures = 0;
    for o in outcomes {
        match o {
            Ok(t) => ok.push(t),
            Err(_) => failures += 1,
        }
    }
    let rmse = rmse(&ok).unwrap_or_else(|_| T::lit(f64::NAN));
    let n = T::from_usize_lossy(ok.len().max(1));
    let conv = T::from_usize_lossy(ok.iter().filter(|t| t.converged).count()) / n;
    let iters = T::from_usize_lossy(ok.iter().map(|t| t.iterations).sum::<usize>()) / n;
    SweepRow {
        value,
        rmse,
        conv_rate: conv,
        mean_iters: iters,
        failures,
        trials: ok,
    }
}

/// One row per sweep value, deterministic given `spec.base_seed`.
pub fn run_sweep<T: Real>(spec: &SweepSpec<T>, setup: &ExperimentSetup<T>) -> Result<Vec<SweepRow<T>>> {
    spec.validate()?;
    spec.values
        .iter()
        .map(|&v| {
            let s = spec.apply(setup, v)?;
            Ok(summarize(v, run_trials(&s, spec.trials, spec.base_seed)))
        })
        .collect()
}

/// `sweep_value,rmse_deg,conv_rate,mean_iters,failures`
pub fn write_sweep_csv<T: Real, W: Write>(rows: &[SweepRow<T>], mut out: W) -> io::Result<()> {
    writeln!(out, "sweep_value,rmse_deg,conv_rate,mean_iters,failures")?;
    for r in rows {
        writeln!(
            out,
            "{},{:.6},{:.4},{:.2},{}",
            r.value.as_f64(),
            r.rmse.as_f64(),
            r.conv_rate.as_f64(),
            r.mean_iters.as_f64(),
            r.failures
        )?;
    }
    Ok(())
}
