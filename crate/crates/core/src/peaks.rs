//! Peak clusters of the learned power spectrum and their post-convergence
//! refinement by a one-dimensional scan of the power/angle likelihood.

use nalgebra::{Cholesky, DMatrix};

use crate::array::steering_vector;
use crate::sbl::SblState;
use crate::scalar::{Cx, Real};

/// A local maximum of the power spectrum with its immediate neighbours.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakCluster<T> {
    pub index: usize,
    /// Degrees.
    pub theta: T,
    pub power: T,
    /// `(angle, power)` of the left neighbour, if any.
    pub left: Option<(T, T)>,
    pub right: Option<(T, T)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakSearch<T> {
    /// Sorted by angle.
    pub clusters: Vec<PeakCluster<T>>,
    /// Fewer than the requested number of local maxima exist.
    pub shortfall: bool,
}

/// Indices of local maxima. A point counts when it is strictly above its left
/// neighbour and not below its right one, so a flat top yields one peak.
pub fn local_maxima<T: Real>(power: &[T]) -> Vec<usize> {
    let n = power.len();
    (0..n)
        .filter(|&i| {
            let left_ok = i == 0 || power[i] > power[i - 1];
            let right_ok = i + 1 == n || power[i] >= power[i + 1];
            left_ok && right_ok && (n > 1 || i == 0)
        })
        .collect()
}

/// The `k` strongest local maxima of `power` over `grid`.
///
/// Ties in power go to the lower index.
pub fn find_peaks<T: Real>(power: &[T], grid: &[T], k: usize) -> PeakSearch<T> {
    let mut idx = local_maxima(power);
    idx.sort_by(|&a, &b| {
        power[b]
            .partial_cmp(&power[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let shortfall = idx.len() < k;
    idx.truncate(k);
    idx.sort_unstable();
    let clusters = idx
        .into_iter()
        .map(|i| PeakCluster {
            index: i,
            theta: grid[i],
            power: power[i],
            left: (i > 0).then(|| (grid[i - 1], power[i - 1])),
            right: (i + 1 < power.len()).then(|| (grid[i + 1], power[i + 1])),
        })
        .collect();
    PeakSearch {
        clusters,
        shortfall,
    }
}

/// Maximizer over `δ ≥ 0` of [`mapping_objective`] in closed form:
/// `(2/(uη²))·(√((Lu + η²/2)² − η²(Lu + η²/4 − v)) − (Lu + η²/2))`.
///
/// Negative roots are reported as-is; callers clamp.
pub fn delta_bar<T: Real>(u: T, v: T, eta: T, l: usize) -> T {
    let lf = T::from_usize_lossy(l);
    let eta2 = eta * eta;
    let two = T::lit(2.0);
    // With x = 1 + uδ the stationarity condition is (η²/4)x² + Lu·x − v = 0.
    let lu = lf * u;
    let disc = (lu * lu + eta2 * v).sqrt();
    // x = 2(disc − Lu)/η², rationalized.
    let x = if disc + lu > T::zero() {
        two * v / (disc + lu)
    } else {
        (disc - lu) * two / eta2
    };
    (x - T::one()) / u
}

/// `−L·ln(1 + δu) + vδ/(1 + uδ) − (η²/4)·δ`
pub fn mapping_objective<T: Real>(delta: T, u: T, v: T, eta: T, l: usize) -> T {
    let lf = T::from_usize_lossy(l);
    let q = T::one() + delta * u;
    -lf * q.ln() + v * delta / q - eta * eta / T::lit(4.0) * delta
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedPeak<T> {
    /// Degrees.
    pub theta: T,
    /// Closed-form power at the returned angle (never negative).
    pub power: T,
    /// Interval that was scanned, degrees.
    pub interval: (T, T),
    /// The leave-one-out covariance was not positive definite and the grid
    /// angle was returned unchanged.
    pub fallback: bool,
}

/// Picks the scan interval: towards the stronger neighbour, to the right on a
/// tie, and always towards the interior at the edges of the grid.
pub fn scan_interval<T: Real>(cluster: &PeakCluster<T>) -> (T, T) {
    match (cluster.left, cluster.right) {
        (Some((la, lp)), Some((ra, rp))) => {
            if lp > rp {
                (la, cluster.theta)
            } else {
                (cluster.theta, ra)
            }
        }
        (Some((la, _)), None) => (la, cluster.theta),
        (None, Some((ra, _))) => (cluster.theta, ra),
        (None, None) => (cluster.theta, cluster.theta),
    }
}

/// Refines one peak by scanning candidate angles at `fine_step` degrees.
///
/// The peak's own contribution is removed from the marginal covariance once;
/// for each candidate `u = aᴴS⁻¹a`, `v = L·aᴴS⁻¹RS⁻¹a`, the power is the
/// closed-form maximizer and the candidate with the largest objective wins.
pub fn refine_peak<T: Real>(
    cluster: &PeakCluster<T>,
    state: &SblState<T>,
    fine_step: T,
) -> RefinedPeak<T> {
    let interval = scan_interval(cluster);
    let unrefined = RefinedPeak {
        theta: cluster.theta,
        power: cluster.power,
        interval,
        fallback: false,
    };
    if interval.0 == interval.1 || !(fine_step > T::zero()) {
        return unrefined;
    }

    let k = cluster.index;
    let l = state.snapshots();
    let eta = state.eta[k];
    let geometry = state.dictionary.geometry();

    let phi_k = state.phi().column(k).into_owned();
    let loo = &state.sigma_y - &phi_k * phi_k.adjoint() * Cx::new(state.delta[k], T::zero());
    let Some(chol) = Cholesky::new(loo) else {
        return RefinedPeak {
            fallback: true,
            ..unrefined
        };
    };
    let s_inv: DMatrix<Cx<T>> = chol.inverse();
    let s_r_s = &s_inv * state.sample_covariance() * &s_inv;
    let lf = T::from_usize_lossy(l);

    let (lo, hi) = interval;
    let steps = ((hi - lo) / fine_step).ceil().as_f64().max(1.0) as usize;
    let mut best = (T::min_value().unwrap_or(T::lit(f64::MIN)), lo, T::zero());
    for i in 0..=steps {
        let theta = if i == steps {
            hi
        } else {
            lo + (hi - lo) * T::from_usize_lossy(i) / T::from_usize_lossy(steps)
        };
        let a = steering_vector(theta, geometry);
        let u = a.dotc(&(&s_inv * &a)).re;
        let v = lf * a.dotc(&(&s_r_s * &a)).re;
        if !(u > T::zero()) {
            continue;
        }
        let d = delta_bar(u, v, eta, l).max(T::zero());
        let obj = mapping_objective(d, u, v, eta, l);
        if obj > best.0 {
            best = (obj, theta, d);
        }
    }
    RefinedPeak {
        theta: best.1,
        power: best.2,
        interval,
        fallback: false,
    }
}
