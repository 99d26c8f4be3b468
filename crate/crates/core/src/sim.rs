//! Synthetic far-field narrowband scenarios.
//!
//! Random draws come from ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`);
//! complex Gaussian samples are pairs of standard normals scaled by
//! `sqrt(variance / 2)`, real part first, filled column by column.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::array::{steering_vector, ArrayGeometry};
use crate::error::{invalid, Result};
use crate::scalar::{cx, Cx, Real};

/// Minimum pairwise separation of randomly drawn sources, degrees.
pub const MIN_SOURCE_SEPARATION_DEG: f64 = 1.0;

/// How source directions are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceMode {
    /// Evenly spaced over the range, endpoints included.
    Even,
    /// Uniform draws, redrawn for every trial.
    Random,
    /// Uniform draws made once from the base seed and reused for every trial.
    FixedRandom,
}

/// One synthetic acquisition: equal-power sources, white noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub source_angles: Vec<T>,
    pub source_power: T,
    pub snapshots: usize,
    pub snr_db: T,
    pub seed: u64,
}

impl<T: Real> Scenario<T> {
    pub fn validate(&self) -> Result<()> {
        if self.source_angles.is_empty() {
            return invalid("scenario needs at least one source");
        }
        let ninety = T::lit(90.0);
        if self
            .source_angles
            .iter()
            .any(|&t| !(t > -ninety && t < ninety))
        {
            return invalid("source angles must lie in (-90°, 90°)");
        }
        let mut sorted = self.source_angles.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite angles"));
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return invalid("source angles must be distinct");
        }
        if self.snapshots == 0 {
            return invalid("snapshot count must be positive");
        }
        if !(self.source_power > T::zero()) {
            return invalid("source power must be positive");
        }
        Ok(())
    }

    /// Per-sensor noise variance implied by the SNR.
    pub fn noise_power(&self) -> T {
        self.source_power / T::lit(10.0).powf(self.snr_db / T::lit(10.0))
    }
}

/// Observations `Y` (sensors × snapshots) with the ground truth kept for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix<T: Real> {
    pub y: DMatrix<Cx<T>>,
    pub true_angles: Vec<T>,
}

impl<T: Real> SnapshotMatrix<T> {
    pub fn num_sensors(&self) -> usize {
        self.y.nrows()
    }

    pub fn num_snapshots(&self) -> usize {
        self.y.ncols()
    }
}

/// Draws `k` source directions in `[lo, hi]` (sorted ascending).
pub fn generate_sources<T: Real, R: Rng + ?Sized>(
    k: usize,
    lo: T,
    hi: T,
    mode: SourceMode,
    rng: &mut R,
) -> Result<Vec<T>> {
    if k == 0 {
        return invalid("source count must be at least 1");
    }
    if hi < lo {
        return invalid("source range requires lo <= hi");
    }
    if k == 1 && lo == hi {
        return Ok(vec![lo]);
    }
    match mode {
        SourceMode::Even => {
            if k == 1 {
                return Ok(vec![(lo + hi) / T::lit(2.0)]);
            }
            let span = (hi - lo) / T::from_usize_lossy(k - 1);
            Ok((0..k)
                .map(|i| if i + 1 == k { hi } else { lo + span * T::from_usize_lossy(i) })
                .collect())
        }
        SourceMode::Random | SourceMode::FixedRandom => {
            let gap = MIN_SOURCE_SEPARATION_DEG;
            let (lo64, hi64) = (lo.as_f64(), hi.as_f64());
            if (k - 1) as f64 * gap > hi64 - lo64 {
                return invalid(format!(
                    "cannot place {k} sources {gap}° apart in [{lo64}, {hi64}]"
                ));
            }
            // Restart from scratch when a partial placement gets stuck.
            for _ in 0..10_000 {
                let mut picked: Vec<f64> = Vec::with_capacity(k);
                let mut tries = 0;
                while picked.len() < k && tries < 1000 * k {
                    tries += 1;
                    let t = rng.random_range(lo64..=hi64);
                    if picked.iter().all(|&p| (p - t).abs() >= gap) {
                        picked.push(t);
                    }
                }
                if picked.len() == k {
                    picked.sort_by(|a, b| a.total_cmp(b));
                    return Ok(picked.into_iter().map(T::lit).collect());
                }
            }
            invalid(format!("failed to place {k} separated sources"))
        }
    }
}

fn complex_gaussian<T: Real, R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Cx<T> {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    cx(T::lit(re * scale), T::lit(im * scale))
}

/// Noiseless array output `A(θ)·X` for given source signals (`K × L`).
pub fn noiseless_snapshots<T: Real>(
    angles: &[T],
    signals: &DMatrix<Cx<T>>,
    geometry: &ArrayGeometry<T>,
) -> Result<DMatrix<Cx<T>>> {
    if signals.nrows() != angles.len() {
        return invalid("signal rows must match the number of sources");
    }
    let mut a = DMatrix::zeros(geometry.num_sensors(), angles.len());
    for (k, &theta) in angles.iter().enumerate() {
        a.set_column(k, &steering_vector(theta, geometry));
    }
    Ok(a * signals)
}

/// `Y = A(θ)X + N` at the true (generally off-grid) source angles.
pub fn simulate_snapshots<T: Real>(
    scenario: &Scenario<T>,
    geometry: &ArrayGeometry<T>,
) -> Result<SnapshotMatrix<T>> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let k = scenario.source_angles.len();
    let l = scenario.snapshots;
    let m = geometry.num_sensors();

    let s_scale = (scenario.source_power.as_f64() / 2.0).sqrt();
    let x = DMatrix::from_fn(k, l, |_, _| complex_gaussian::<T, _>(&mut rng, s_scale));
    let n_scale = (scenario.noise_power().as_f64() / 2.0).sqrt();
    let noise = DMatrix::from_fn(m, l, |_, _| complex_gaussian::<T, _>(&mut rng, n_scale));

    let y = noiseless_snapshots(&scenario.source_angles, &x, geometry)? + noise;
    Ok(SnapshotMatrix {
        y,
        true_angles: scenario.source_angles.clone(),
    })
}
