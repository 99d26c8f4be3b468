//! End-to-end estimate: EM run, peak clusters, per-peak refinement.

use nalgebra::DMatrix;

use crate::array::GridDictionary;
use crate::error::{invalid, Result};
use crate::peaks::{find_peaks, refine_peak, PeakCluster, RefinedPeak};
use crate::sbl::{run_gdp_ogsbl, GdpConfig, SblRun};
use crate::scalar::{Cx, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig<T> {
    pub gdp: GdpConfig<T>,
    /// Scan spacing for peak refinement in degrees; `None` means one hundredth
    /// of the grid step.
    pub fine_step: Option<T>,
}

impl<T: Real> Default for EstimatorConfig<T> {
    fn default() -> Self {
        Self {
            gdp: GdpConfig::default(),
            fine_step: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimationResult<T: Real> {
    /// Refined directions, ascending, degrees. Fewer than requested on shortfall.
    pub angles: Vec<T>,
    pub peaks: Vec<PeakCluster<T>>,
    pub refined: Vec<RefinedPeak<T>>,
    /// Final (possibly refined) grid and its learned powers.
    pub grid: Vec<T>,
    pub spectrum: Vec<T>,
    pub shortfall: bool,
    pub run: SblRun<T>,
}

impl<T: Real> EstimationResult<T> {
    pub fn converged(&self) -> bool {
        self.run.converged
    }

    pub fn iterations(&self) -> usize {
        self.run.iterations
    }

    /// Spectrum in dB relative to its maximum.
    pub fn normalized_spectrum_db(&self) -> Vec<T> {
        let max = self.spectrum.iter().fold(T::zero(), |a, &b| a.max(b));
        let ten = T::lit(10.0);
        self.spectrum
            .iter()
            .map(|&p| ten * (p / max).log10())
            .collect()
    }
}

/// Estimates `num_sources` directions from snapshots `y` over `dict`.
pub fn estimate_doa<T: Real>(
    y: &DMatrix<Cx<T>>,
    dict: &GridDictionary<T>,
    num_sources: usize,
    cfg: &EstimatorConfig<T>,
) -> Result<EstimationResult<T>> {
    if num_sources == 0 {
        return invalid("num_sources must be at least 1");
    }
    let gdp = GdpConfig {
        num_sources: Some(num_sources),
        ..cfg.gdp.clone()
    };
    let run = run_gdp_ogsbl(y, dict, &gdp)?;
    let state = &run.state;
    let grid = state.dictionary.grid().to_vec();
    let spectrum: Vec<T> = state.delta.iter().copied().collect();
    let search = find_peaks(&spectrum, &grid, num_sources);

    let fine_step = cfg
        .fine_step
        .unwrap_or_else(|| dict.step() / T::lit(100.0));
    let refined: Vec<RefinedPeak<T>> = search
        .clusters
        .iter()
        .map(|c| refine_peak(c, state, fine_step))
        .collect();
    let mut angles: Vec<T> = refined.iter().map(|r| r.theta).collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));

    Ok(EstimationResult {
        angles,
        peaks: search.clusters,
        refined,
        grid,
        spectrum,
        shortfall: search.shortfall,
        run,
    })
}
