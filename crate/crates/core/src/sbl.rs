//! Off-grid sparse Bayesian learning under a generalized double Pareto prior.
//!
//! The signal rows carry variances `δ`, each `δ_n` has a Gamma prior with rate
//! `η_n²/4`, and each `η_n` has a `Gamma(σ, σ)` prior. EM alternates the
//! Gaussian posterior of the signal (E-step) with closed-form updates of
//! `δ`, `η`, the noise precision `α` and the off-grid offsets `β`. Grid points
//! under the strongest peaks are moved by their offsets as the iteration runs.
//!
//! `β` is kept in radians; grid angles are in degrees.

use std::io::{self, Write};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::array::GridDictionary;
use crate::error::{invalid, DoaError, Result};
use crate::peaks::find_peaks;
use crate::scalar::{norm_sqr, real, Cx, Real};

/// Lower bound applied to every `δ_n`.
pub const DELTA_FLOOR: f64 = 1e-12;
/// Lower bound applied to the denominator of the `α` update.
pub const ALPHA_DENOMINATOR_FLOOR: f64 = 1e-12;
/// Above this condition estimate `P·β = Q` is solved by coordinate sweeps.
pub const BETA_CONDITION_LIMIT: f64 = 1e8;
const BETA_SWEEP_TOL: f64 = 1e-6;
const BETA_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct GdpConfig<T> {
    /// Shape and rate of the Gamma prior on `η`; smaller is sparser.
    pub sigma: T,
    pub max_iters: usize,
    /// Stop once `‖δ_new − δ_old‖₂ / ‖δ_old‖₂` falls below this.
    pub tol: T,
    pub grid_refine: bool,
    /// Number of peaks whose grid points may move. Refinement is skipped
    /// when this is `None`.
    pub num_sources: Option<usize>,
}

impl<T: Real> Default for GdpConfig<T> {
    fn default() -> Self {
        Self {
            sigma: T::lit(0.1),
            max_iters: 1000,
            tol: T::lit(1e-3),
            grid_refine: true,
            num_sources: None,
        }
    }
}

impl<T: Real> GdpConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > T::zero()) {
            return invalid("sigma must be positive");
        }
        if !(self.tol > T::zero()) {
            return invalid("tolerance must be positive");
        }
        if self.max_iters == 0 {
            return invalid("max_iters must be at least 1");
        }
        if self.num_sources == Some(0) {
            return invalid("num_sources must be at least 1");
        }
        Ok(())
    }
}

/// Hyperparameters, posterior moments and the (mutable) dictionary.
#[derive(Debug, Clone)]
pub struct SblState<T: Real> {
    /// Row variances of the signal matrix.
    pub delta: DVector<T>,
    pub eta: DVector<T>,
    /// Noise precision.
    pub alpha: T,
    /// Off-grid offsets, radians.
    pub beta: DVector<T>,
    /// Posterior mean, `N × L`.
    pub mu: DMatrix<Cx<T>>,
    /// Posterior covariance shared by every snapshot, `N × N`.
    pub sigma: DMatrix<Cx<T>>,
    /// Marginal covariance of one snapshot, `M × M`.
    pub sigma_y: DMatrix<Cx<T>>,
    pub dictionary: GridDictionary<T>,
    sigma_y_inv: DMatrix<Cx<T>>,
    /// `(1/L)·Σ_t μ(t)μ(t)ᴴ`
    mu_outer: DMatrix<Cx<T>>,
    r_yy: DMatrix<Cx<T>>,
    snapshots: usize,
}

impl<T: Real> SblState<T> {
    pub fn snapshots(&self) -> usize {
        self.snapshots
    }

    /// Sample covariance `Y·Yᴴ / L`.
    pub fn sample_covariance(&self) -> &DMatrix<Cx<T>> {
        &self.r_yy
    }

    pub fn sigma_y_inverse(&self) -> &DMatrix<Cx<T>> {
        &self.sigma_y_inv
    }

    /// Snapshot-averaged second moment of the posterior mean.
    pub fn mean_outer(&self) -> &DMatrix<Cx<T>> {
        &self.mu_outer
    }

    /// First-order corrected manifold `Φ = A + B·diag(β)`.
    pub fn phi(&self) -> DMatrix<Cx<T>> {
        let mut phi = self.dictionary.steering().clone();
        let b = self.dictionary.derivative();
        for (j, &bj) in self.beta.iter().enumerate() {
            if bj != T::zero() {
                let scaled = b.column(j) * real(bj);
                let mut col = phi.column_mut(j);
                col += scaled;
            }
        }
        phi
    }

    /// State with explicit hyperparameters; the posterior moments are filled
    /// by an E-step. `y` may be all zeros here.
    pub fn from_parts(
        y: &DMatrix<Cx<T>>,
        dict: &GridDictionary<T>,
        delta: DVector<T>,
        eta: DVector<T>,
        alpha: T,
        beta: DVector<T>,
    ) -> Result<Self> {
        let (m, l, n) = (y.nrows(), y.ncols(), dict.len());
        if m != dict.num_sensors() || l == 0 {
            return invalid("snapshot matrix does not match the dictionary");
        }
        if delta.len() != n || eta.len() != n || beta.len() != n {
            return invalid("hyperparameter lengths must match the grid");
        }
        if delta.iter().any(|&d| !(d > T::zero())) || !(alpha > T::zero()) {
            return invalid("delta and alpha must be positive");
        }
        let mut state = SblState {
            delta,
            eta,
            alpha,
            beta,
            mu: DMatrix::zeros(n, l),
            sigma: DMatrix::zeros(n, n),
            sigma_y: DMatrix::zeros(m, m),
            dictionary: dict.clone(),
            sigma_y_inv: DMatrix::zeros(m, m),
            mu_outer: DMatrix::zeros(n, n),
            r_yy: y * y.adjoint() / real(T::from_usize_lossy(l)),
            snapshots: l,
        };
        e_step(y, &mut state)?;
        Ok(state)
    }

    /// Offsets converted to degrees.
    pub fn beta_degrees(&self) -> DVector<T> {
        self.beta.map(|b| b.to_degrees())
    }
}

fn hermitize<T: Real>(m: &mut DMatrix<Cx<T>>) {
    let n = m.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        m[(i, i)] = real(m[(i, i)].re);
        for j in i + 1..n {
            let v = (m[(i, j)] + m[(j, i)].conj()) * real(half);
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
    }
}

fn scale_columns<T: Real>(m: &DMatrix<Cx<T>>, s: &DVector<T>) -> DMatrix<Cx<T>> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= real(s[j]);
    }
    out
}

fn scale_rows<T: Real>(m: &mut DMatrix<Cx<T>>, s: &DVector<T>) {
    for (i, mut row) in m.row_iter_mut().enumerate() {
        row *= real(s[i]);
    }
}

/// Builds the starting state from a matched-filter scan and runs one E-step.
///
/// `δ_n = ‖a_nᴴY‖² / (L·M²)`, `α = M / (0.1·tr(YYᴴ)/L)`, `η` from the `η`
/// update at that `δ`, and `β = 0`.
pub fn init_state<T: Real>(
    y: &DMatrix<Cx<T>>,
    dict: &GridDictionary<T>,
    cfg: &GdpConfig<T>,
) -> Result<SblState<T>> {
    let m = y.nrows();
    let l = y.ncols();
    if m != dict.num_sensors() {
        return invalid(format!(
            "snapshot rows ({m}) do not match the array size ({})",
            dict.num_sensors()
        ));
    }
    if l == 0 {
        return invalid("no snapshots");
    }
    let r_yy = y * y.adjoint() / real(T::from_usize_lossy(l));
    let power = (0..m).map(|i| r_yy[(i, i)].re).fold(T::zero(), |a, b| a + b);
    if !(power > T::zero()) {
        return invalid("observation matrix is identically zero");
    }

    let a = dict.steering();
    let ahr = a.adjoint() * &r_yy;
    let m2 = T::from_usize_lossy(m * m);
    let floor = T::lit(DELTA_FLOOR);
    let delta = DVector::from_iterator(
        dict.len(),
        (0..dict.len()).map(|n| {
            let q = ahr.row(n).transpose().dot(&a.column(n)).re;
            (q / m2).max(floor)
        }),
    );
    let eta = update_eta(&delta, cfg.sigma);
    let alpha = T::from_usize_lossy(m) / (T::lit(0.1) * power);
    SblState::from_parts(y, dict, delta, eta, alpha, DVector::zeros(dict.len()))
}

/// Posterior of the signal given the current hyperparameters:
/// `Σ_Y = α⁻¹I + ΦΛΦᴴ`, `μ = ΛΦᴴΣ_Y⁻¹Y`, `Σ = Λ − ΛΦᴴΣ_Y⁻¹ΦΛ`.
pub fn e_step<T: Real>(y: &DMatrix<Cx<T>>, state: &mut SblState<T>) -> Result<()> {
    let m = state.dictionary.num_sensors();
    let phi = state.phi();
    let phi_lambda = scale_columns(&phi, &state.delta);

    let mut sigma_y = &phi_lambda * phi.adjoint();
    let noise = T::one() / state.alpha;
    for i in 0..m {
        sigma_y[(i, i)] += real(noise);
    }
    hermitize(&mut sigma_y);
    let chol = Cholesky::new(sigma_y.clone()).ok_or_else(|| {
        DoaError::Conditioning(format!(
            "marginal covariance not positive definite (alpha = {:?})",
            state.alpha
        ))
    })?;
    let mut sy_inv = chol.inverse();
    hermitize(&mut sy_inv);

    // G = ΦᴴΣ_Y⁻¹, N × M
    let g = phi.adjoint() * &sy_inv;

    let mut sigma = -(&g * &phi_lambda);
    scale_rows(&mut sigma, &state.delta);
    for (i, &d) in state.delta.iter().enumerate() {
        sigma[(i, i)] += real(d);
    }
    hermitize(&mut sigma);
    for i in 0..sigma.nrows() {
        let v = sigma[(i, i)].re.max(T::zero());
        sigma[(i, i)] = real(v);
    }

    let mut mu = &g * y;
    scale_rows(&mut mu, &state.delta);

    let gr = &g * &state.r_yy;
    let mut mu_outer = &gr * g.adjoint();
    scale_rows(&mut mu_outer, &state.delta);
    let mut mu_outer = scale_columns(&mu_outer, &state.delta);
    hermitize(&mut mu_outer);

    state.sigma_y = sigma_y;
    state.sigma_y_inv = sy_inv;
    state.sigma = sigma;
    state.mu = mu;
    state.mu_outer = mu_outer;
    Ok(())
}

/// Fixed-point `δ` update for one grid point:
/// `η⁻²(1 + 2LW + 2√((½ + LW)² + ‖μ_n‖²η²))`, `W = Σ_nn/δ_n − 1`.
///
/// Evaluated in a cancellation-free form and floored at [`DELTA_FLOOR`].
pub fn delta_fixed_point<T: Real>(delta: T, sigma_nn: T, mu_energy: T, eta: T, l: usize) -> T {
    let w = sigma_nn / delta - T::one();
    let b = T::lit(0.5) + T::from_usize_lossy(l) * w;
    let eta2 = eta * eta;
    let c = mu_energy * eta2;
    let disc = (b * b + c).sqrt();
    let root = if b >= T::zero() {
        b + disc
    } else if disc - b > T::zero() {
        c / (disc - b)
    } else {
        T::zero()
    };
    (T::lit(2.0) * root / eta2).max(T::lit(DELTA_FLOOR))
}

/// New `δ` from the current E-step moments (holds `W_n` at its pre-update value).
pub fn update_delta<T: Real>(state: &SblState<T>) -> DVector<T> {
    let l = state.snapshots;
    DVector::from_iterator(
        state.delta.len(),
        (0..state.delta.len()).map(|n| {
            let energy = state
                .mu
                .row(n)
                .iter()
                .fold(T::zero(), |acc, &z| acc + norm_sqr(z));
            delta_fixed_point(state.delta[n], state.sigma[(n, n)].re, energy, state.eta[n], l)
        }),
    )
}

/// Positive root of `(δ/2)η² + ση − (σ + 2) = 0`.
pub fn eta_closed_form<T: Real>(delta: T, sigma: T) -> T {
    let two = T::lit(2.0);
    let k = sigma + two;
    // (−σ + √(σ² + 2δk)) / δ, rationalized so that δ → 0 stays finite.
    two * k / (sigma + (sigma * sigma + two * delta * k).sqrt())
}

pub fn update_eta<T: Real>(delta: &DVector<T>, sigma: T) -> DVector<T> {
    delta.map(|d| eta_closed_form(d, sigma))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaUpdate<T> {
    pub alpha: T,
    /// The denominator hit [`ALPHA_DENOMINATOR_FLOOR`].
    pub floored: bool,
}

/// `α = ML / (‖Y − Φμ‖²_F + L·tr(D − DΣ_Y⁻¹D))`, `D = ΦΛΦᴴ`, all taken at
/// the E-step that produced the current moments.
pub fn update_alpha<T: Real>(y: &DMatrix<Cx<T>>, state: &SblState<T>) -> AlphaUpdate<T> {
    let m = y.nrows();
    let l = state.snapshots;
    let phi = state.phi();
    let resid = y - &phi * &state.mu;
    let fit = resid.iter().fold(T::zero(), |acc, &z| acc + norm_sqr(z));

    let d = &scale_columns(&phi, &state.delta) * phi.adjoint();
    let dsd = &d * &state.sigma_y_inv * &d;
    let tr = (0..m).fold(T::zero(), |acc, i| acc + d[(i, i)].re - dsd[(i, i)].re);

    let mut denom = fit + T::from_usize_lossy(l) * tr;
    let floor = T::lit(ALPHA_DENOMINATOR_FLOOR);
    let floored = !(denom > floor);
    if floored {
        denom = floor;
    }
    AlphaUpdate {
        alpha: T::from_usize_lossy(m * l) / denom,
        floored,
    }
}


/// Quadratic model of the expected fit in the offsets,
/// `(1/L)·Σ_t E‖y(t) − Φ(β)x(t)‖² = βᵀPβ − 2Qᵀβ + C`.
///
/// `P = Re{(BᴴB) ⊙ conj(μμᴴ + Σ)}` with `μμᴴ` averaged over snapshots, and
/// `Q = Re{(1/L)·Σ_t conj(μ(t)) ⊙ Bᴴ(y(t) − Aμ(t))} − Re{diag(BᴴAΣ)}`.
pub fn beta_system<T: Real>(y: &DMatrix<Cx<T>>, state: &SblState<T>) -> (DMatrix<T>, DVector<T>) {
    let a = state.dictionary.steering();
    let b = state.dictionary.derivative();
    let n = state.delta.len();
    let l = T::from_usize_lossy(state.snapshots);

    let second = &state.mu_outer + &state.sigma;
    let bhb = b.adjoint() * b;
    let p = DMatrix::from_fn(n, n, |i, j| {
        let h = bhb[(i, j)];
        let e = second[(i, j)];
        h.re * e.re + h.im * e.im
    });

    // (1/L)·Y·μᴴ − A·(μμᴴ/L + Σ), M × N
    let cross = y * state.mu.adjoint() / real(l) - a * &second;
    let q = DVector::from_iterator(n, (0..n).map(|j| b.column(j).dotc(&cross.column(j)).re));
    (p, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaSolver {
    /// Cholesky solve of the full system.
    Direct,
    /// Gauss–Seidel sweeps, used when `P` is singular or badly conditioned.
    Coordinate { sweeps: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaUpdate<T: Real> {
    /// Clamped offsets, radians.
    pub beta: DVector<T>,
    pub solver: BetaSolver,
}

/// Estimates `λ_max(P)/λ_min(P)` by power and inverse iteration.
fn condition_estimate<T: Real>(p: &DMatrix<T>, chol: &Cholesky<T, Dyn>) -> T {
    let n = p.nrows();
    let start = DVector::from_fn(n, |i, _| T::one() + T::lit((i % 7) as f64 / 7.0));
    let start = &start / start.norm();
    let mut v = start.clone();
    let mut hi = T::zero();
    for _ in 0..30 {
        let w = p * &v;
        hi = w.norm();
        if !(hi > T::zero()) {
            return T::max_value().unwrap_or(T::lit(f64::MAX));
        }
        v = w / hi;
    }
    let mut v = start;
    let mut inv = T::zero();
    for _ in 0..30 {
        let w = chol.solve(&v);
        inv = w.norm();
        if !inv.is_finite() || !(inv > T::zero()) {
            return T::max_value().unwrap_or(T::lit(f64::MAX));
        }
        v = w / inv;
    }
    hi * inv
}

/// Solves `P·β = Q` and clamps every offset into `[−half_width, half_width]`.
///
/// A well-conditioned `P` is solved directly; otherwise coordinate updates
/// `β_n = (Q_n − Σ_{m≠n} P_nm β_m) / P_nn` are swept from `warm` until the
/// relative change drops below 1e-6 or 100 sweeps have run. Coordinates with
/// `P_nn = 0` are set to zero.
pub fn solve_beta<T: Real>(
    p: &DMatrix<T>,
    q: &DVector<T>,
    warm: &DVector<T>,
    half_width: T,
) -> BetaUpdate<T> {
    let n = q.len();
    let limit = T::lit(BETA_CONDITION_LIMIT);
    let diag_max = p.diagonal().iter().fold(T::zero(), |a, &b| a.max(b));
    let diag_min = p.diagonal().iter().fold(diag_max, |a, &b| a.min(b));

    // The diagonal ratio is a lower bound on the condition number of an SPD matrix.
    let direct = if diag_min > T::zero() && diag_max / diag_min < limit {
        Cholesky::new(p.clone())
            .filter(|c| condition_estimate(p, c) < limit)
            .map(|c| c.solve(q))
    } else {
        None
    };

    let (mut beta, solver) = match direct {
        Some(b) => (b, BetaSolver::Direct),
        None => {
            let mut beta = if warm.len() == n {
                warm.clone()
            } else {
                DVector::zeros(n)
            };
            let tol = T::lit(BETA_SWEEP_TOL);
            let tiny = T::lit(1e-300_f64.max(f64::MIN_POSITIVE));
            let mut sweeps = 0;
            while sweeps < BETA_MAX_SWEEPS {
                sweeps += 1;
                let mut change = T::zero();
                for i in 0..n {
                    let pii = p[(i, i)];
                    let next = if pii > T::zero() {
                        let off = p.row(i).transpose().dot(&beta) - pii * beta[i];
                        (q[i] - off) / pii
                    } else {
                        T::zero()
                    };
                    change = change.max((next - beta[i]).abs());
                    beta[i] = next;
                }
                let scale = beta.amax().max(tiny);
                if change / scale < tol {
                    break;
                }
            }
            (beta, BetaSolver::Coordinate { sweeps })
        }
    };
    for b in beta.iter_mut() {
        *b = if b.is_finite() {
            b.clamp(-half_width, half_width)
        } else {
            T::zero()
        };
    }
    BetaUpdate { beta, solver }
}

/// Off-grid offsets for every grid point, clamped to half the grid step.
pub fn update_beta<T: Real>(y: &DMatrix<Cx<T>>, state: &SblState<T>) -> BetaUpdate<T> {
    let (p, q) = beta_system(y, state);
    let half = state.dictionary.step().to_radians() / T::lit(2.0);
    solve_beta(&p, &q, &state.beta, half)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GridRefinement {
    pub moved: usize,
    pub rejected: usize,
}

/// Moves each listed grid point by its offset when the new angle stays
/// between the midpoints to its neighbours; accepted points get `β_n = 0`
/// and fresh dictionary columns.
///
/// Edge points use a mirrored half-gap on their open side and never leave
/// `[−90°, 90°]`.
pub fn refine_grid<T: Real>(state: &mut SblState<T>, peak_indices: &[usize]) -> GridRefinement {
    let mut out = GridRefinement::default();
    let mut indices = peak_indices.to_vec();
    indices.sort_unstable();
    indices.dedup();
    let half = T::lit(0.5);
    let ninety = T::lit(90.0);
    for n in indices {
        let grid = state.dictionary.grid();
        let len = grid.len();
        if n >= len || state.beta[n] == T::zero() {
            continue;
        }
        let theta = grid[n];
        let proposed = theta + state.beta[n].to_degrees();
        let left_gap = if n > 0 { Some(theta - grid[n - 1]) } else { None };
        let right_gap = if n + 1 < len { Some(grid[n + 1] - theta) } else { None };
        let (lg, rg) = match (left_gap, right_gap) {
            (Some(l), Some(r)) => (l, r),
            (Some(l), None) => (l, l),
            (None, Some(r)) => (r, r),
            (None, None) => {
                let s = state.dictionary.step();
                (s, s)
            }
        };
        let lo = (theta - lg * half).max(-ninety);
        let hi = (theta + rg * half).min(ninety);
        let strictly_inside = left_gap.is_none_or(|_| proposed > grid[n - 1])
            && right_gap.is_none_or(|_| proposed < grid[n + 1]);
        if proposed >= lo && proposed <= hi && strictly_inside {
            state.dictionary.move_point(n, proposed);
            state.beta[n] = T::zero();
            out.moved += 1;
        } else {
            out.rejected += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord<T> {
    pub iter: usize,
    pub delta_change: T,
    pub alpha: T,
    pub grid_moves: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunDiagnostics {
    pub alpha_floor_hits: usize,
    pub direct_beta_solves: usize,
    pub coordinate_beta_solves: usize,
    pub rejected_grid_moves: usize,
}

#[derive(Debug, Clone)]
pub struct SblRun<T: Real> {
    /// Final state; its posterior moments match its hyperparameters.
    pub state: SblState<T>,
    pub trace: Vec<IterationRecord<T>>,
    pub converged: bool,
    pub iterations: usize,
    pub diagnostics: RunDiagnostics,
}

/// EM loop: `δ`, `η`, `α`, `β` updates, then grid refinement (from the second
/// iteration on) and a fresh E-step, until the relative change of `δ` drops
/// below `cfg.tol` or `cfg.max_iters` iterations have run.
pub fn run_gdp_ogsbl<T: Real>(
    y: &DMatrix<Cx<T>>,
    dict: &GridDictionary<T>,
    cfg: &GdpConfig<T>,
) -> Result<SblRun<T>> {
    cfg.validate()?;
    let mut state = init_state(y, dict, cfg)?;
    let mut trace = Vec::new();
    let mut diagnostics = RunDiagnostics::default();
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=cfg.max_iters {
        iterations = iter;
        let delta = update_delta(&state);
        let eta = update_eta(&delta, cfg.sigma);
        let alpha = update_alpha(y, &state);
        let beta = update_beta(y, &state);

        diagnostics.alpha_floor_hits += alpha.floored as usize;
        match beta.solver {
            BetaSolver::Direct => diagnostics.direct_beta_solves += 1,
            BetaSolver::Coordinate { .. } => diagnostics.coordinate_beta_solves += 1,
        }

        let old_norm = state.delta.norm();
        let change = (&delta - &state.delta).norm() / old_norm;
        state.delta = delta;
        state.eta = eta;
        state.alpha = alpha.alpha;
        state.beta = beta.beta;

        let mut moves = GridRefinement::default();
        if let (true, Some(k), true) = (cfg.grid_refine, cfg.num_sources, iter >= 2) {
            let peaks = find_peaks(state.delta.as_slice(), state.dictionary.grid(), k);
            let idx: Vec<usize> = peaks.clusters.iter().map(|c| c.index).collect();
            moves = refine_grid(&mut state, &idx);
            diagnostics.rejected_grid_moves += moves.rejected;
        }

        e_step(y, &mut state)?;
        trace.push(IterationRecord {
            iter,
            delta_change: change,
            alpha: state.alpha,
            grid_moves: moves.moved,
        });
        if change < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(SblRun {
        state,
        trace,
        converged,
        iterations,
        diagnostics,
    })
}

/// Writes the iteration trace as `iter,delta_change,alpha,num_grid_moves` rows.
pub fn write_trace_csv<T: Real, W: Write>(trace: &[IterationRecord<T>], mut out: W) -> io::Result<()> {
    writeln!(out, "iter,delta_change,alpha,num_grid_moves")?;
    for r in trace {
        writeln!(
            out,
            "{},{:e},{:e},{}",
            r.iter,
            r.delta_change.as_f64(),
            r.alpha.as_f64(),
            r.grid_moves
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{build_dictionary, steering_vector, ArrayGeometry};
    use nalgebra::Complex;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Cx<f64> {
        Complex::new(re, im)
    }

    fn single_sensor() -> GridDictionary<f64> {
        let g = ArrayGeometry::half_wavelength(vec![0]).unwrap();
        build_dictionary(&[0.0], &g).unwrap()
    }

    fn scalar_state(y: Cx<f64>, delta: f64, alpha: f64) -> SblState<f64> {
        let y = DMatrix::from_element(1, 1, y);
        SblState::from_parts(
            &y,
            &single_sensor(),
            DVector::from_element(1, delta),
            DVector::from_element(1, 1.0),
            alpha,
            DVector::zeros(1),
        )
        .unwrap()
    }

    fn random_state(seed: u64, n_grid_step: f64) -> (DMatrix<Cx<f64>>, SblState<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = ArrayGeometry::coprime(3, 4, 0.5).unwrap();
        let dict = GridDictionary::uniform(-90.0, 90.0, n_grid_step, &g).unwrap();
        let n = dict.len();
        let l = 20;
        let y = DMatrix::from_fn(9, l, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let delta = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
        let eta = DVector::from_fn(n, |_, _| rng.random_range(0.1..3.0));
        let half = dict.step().to_radians() / 2.0;
        let beta = DVector::from_fn(n, |_, _| rng.random_range(-half..half));
        let alpha = rng.random_range(0.5..5.0);
        let s = SblState::from_parts(&y, &dict, delta, eta, alpha, beta).unwrap();
        (y, s)
    }

    fn hermitian_error(m: &DMatrix<Cx<f64>>) -> f64 {
        (m - m.adjoint()).norm() / m.norm().max(1e-300)
    }

    #[test]
    fn scalar_posterior() {
        let s = scalar_state(c(0.6, -0.2), 1.0, 1.0);
        assert!((s.sigma_y[(0, 0)] - c(2.0, 0.0)).norm() < 1e-15);
        assert!((s.mu[(0, 0)] - c(0.3, -0.1)).norm() < 1e-15);
        assert!((s.sigma[(0, 0)] - c(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn noiseless_limit() {
        let s = scalar_state(c(0.6, -0.2), 1.0, 1e12);
        assert!((s.mu[(0, 0)] - c(0.6, -0.2)).norm() < 1e-9);
        assert!(s.sigma[(0, 0)].norm() < 1e-9);
    }

    #[test]
    fn posterior_covariance_matches_direct_inverse() {
        for seed in 0..5 {
            let (_, s) = random_state(seed, 1.0);
            let phi = s.phi();
            let n = s.delta.len();
            let mut prec = phi.adjoint() * &phi * c(s.alpha, 0.0);
            for i in 0..n {
                prec[(i, i)] += c(1.0 / s.delta[i], 0.0);
            }
            let direct = prec.try_inverse().unwrap();
            let rel = (&direct - &s.sigma).norm() / direct.norm();
            assert!(rel < 1e-8, "seed {seed}: {rel}");
        }
    }

    #[test]
    fn e_step_invariants() {
        let (_, s) = random_state(11, 1.0);
        assert!(hermitian_error(&s.sigma_y) < 1e-10);
        assert!(hermitian_error(&s.sigma) < 1e-10);
        assert!(Cholesky::new(s.sigma_y.clone()).is_some());
        for i in 0..s.delta.len() {
            let v = s.sigma[(i, i)];
            assert_eq!(v.im, 0.0);
            assert!(v.re >= 0.0 && v.re <= s.delta[i] * (1.0 + 1e-9));
        }
    }

    #[test]
    fn delta_update_examples() {
        // W = 0 means Σ_nn = δ_n.
        assert!((delta_fixed_point(1.0f64, 1.0, 0.0, 1.0, 7) - 2.0).abs() < 1e-15);
        let d = delta_fixed_point(1.0f64, 1.0, 2.0, 1.0, 1);
        assert!((d - 4.0).abs() < 1e-14);
        assert!((0.25 * d * d - 0.5 * d - 2.0).abs() < 1e-13);
        // μ = 0 with W < 0: root collapses to the floor.
        assert_eq!(delta_fixed_point(1.0, 0.5, 0.0, 1.0, 10), DELTA_FLOOR);
    }

    #[test]
    fn delta_update_is_stationary() {
        for seed in 0..100 {
            let (_, s) = random_state(seed, 6.0);
            let new = update_delta(&s);
            let l = s.snapshots() as f64;
            for n in 0..new.len() {
                let d = new[n];
                if d <= DELTA_FLOOR {
                    continue;
                }
                let w = s.sigma[(n, n)].re / s.delta[n] - 1.0;
                let e: f64 = s.mu.row(n).iter().map(|z| z.norm_sqr()).sum();
                let eta2 = s.eta[n] * s.eta[n];
                let resid = eta2 / 4.0 * d * d - (l * w + 0.5) * d - e;
                assert!(resid.abs() < 1e-9 * d.powi(2).max(1.0), "seed {seed} n {n}: {resid}");
            }
        }
    }

    #[test]
    fn eta_update_examples() {
        let e = eta_closed_form(1.0f64, 0.1);
        assert!((e - (-0.1 + 4.21f64.sqrt())).abs() < 1e-14);
        assert!((e - 1.95183).abs() < 1e-5);
        assert!((0.5 * e * e + 0.1 * e - 2.1).abs() < 1e-13);
        let e0 = eta_closed_form(1e-12f64, 0.1);
        assert!(e0.is_finite() && e0 > 0.0);
        assert!((e0 - 21.0).abs() / 21.0 < 1e-4);
        assert!((eta_closed_form(2.0, 2.0) - (5f64.sqrt() - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn alpha_scalar_example() {
        let s = scalar_state(c(0.0, 0.0), 1.0, 1.0);
        let u = update_alpha(&DMatrix::zeros(1, 1), &s);
        assert!((u.alpha - 2.0).abs() < 1e-14);
        assert!(!u.floored);
    }

    #[test]
    fn alpha_denominator_floor() {
        // Vanishing prior variance and perfectly explained data.
        let s = scalar_state(c(0.0, 0.0), 1e-30, 1.0);
        let u = update_alpha(&DMatrix::zeros(1, 1), &s);
        assert!(u.floored);
        assert!(u.alpha.is_finite() && u.alpha > 0.0);
    }

    #[test]
    fn alpha_trace_term_is_nonnegative() {
        for seed in 0..100 {
            let (_, s) = random_state(seed, 6.0);
            let phi = s.phi();
            let d = &scale_columns(&phi, &s.delta) * phi.adjoint();
            let t = &d - &d * s.sigma_y_inverse() * &d;
            let h = (&t + t.adjoint()) * c(0.5, 0.0);
            let eig = h.symmetric_eigenvalues();
            let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min > -1e-10 * eig.amax(), "seed {seed}: {min}");
            let tr: f64 = (0..9).map(|i| t[(i, i)].re).sum();
            assert!(tr >= 0.0);
        }
    }

    #[test]
    fn beta_solver_examples() {
        let p = DMatrix::<f64>::identity(2, 2);
        let q = DVector::from_vec(vec![0.1, -0.2]);
        let u = solve_beta(&p, &q, &DVector::zeros(2), 10.0);
        assert_eq!(u.solver, BetaSolver::Direct);
        assert!((u.beta[0] - 0.1).abs() < 1e-15 && (u.beta[1] + 0.2).abs() < 1e-15);

        // Singular P forces coordinate sweeps; the lone active coordinate is Q/P.
        let p = DMatrix::<f64>::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let q = DVector::from_vec(vec![0.4, 0.3]);
        let u = solve_beta(&p, &q, &DVector::zeros(2), 10.0);
        assert!(matches!(u.solver, BetaSolver::Coordinate { .. }));
        assert!((u.beta[0] - 0.2).abs() < 1e-15);
        assert_eq!(u.beta[1], 0.0);

        let r = 0.1;
        let p = DMatrix::identity(1, 1);
        let q = DVector::from_vec(vec![0.8 * r]);
        let u = solve_beta(&p, &q, &DVector::zeros(1), r / 2.0);
        assert_eq!(u.beta[0], r / 2.0);
    }

    #[test]
    fn beta_gradient_matches_finite_difference() {
        // f(β) = (1/L)Σ_t ‖y(t) − Φ(β)μ(t)‖² + tr(Φ(β)ΣΦ(β)ᴴ), evaluated directly.
        let (y, mut s) = random_state(5, 6.0);
        let (p, q) = beta_system(&y, &s);
        let l = s.snapshots() as f64;
        let objective = |s: &SblState<f64>| {
            let phi = s.phi();
            let r = &y - &phi * &s.mu;
            let fit = r.norm_squared() / l;
            let cov = &phi * &s.sigma * phi.adjoint();
            fit + (0..9).map(|i| cov[(i, i)].re).sum::<f64>()
        };
        let grad = (&p * &s.beta - &q) * 2.0;
        let h = 1e-6;
        for n in (0..s.delta.len()).step_by(3) {
            let b0 = s.beta[n];
            s.beta[n] = b0 + h;
            let fp = objective(&s);
            s.beta[n] = b0 - h;
            let fm = objective(&s);
            s.beta[n] = b0;
            let fd = (fp - fm) / (2.0 * h);
            let scale = grad[n].abs().max(1e-3);
            assert!((fd - grad[n]).abs() / scale < 1e-5, "n {n}: fd {fd} vs {}", grad[n]);
        }
    }

    #[test]
    fn beta_stays_within_half_step() {
        for seed in 0..20 {
            let (y, s) = random_state(seed, 2.0);
            let u = update_beta(&y, &s);
            let half = 1f64.to_radians();
            assert!(u.beta.iter().all(|b| b.abs() <= half));
        }
    }

    fn refine_fixture(beta_deg: f64) -> SblState<f64> {
        let g = ArrayGeometry::coprime(3, 4, 0.5).unwrap();
        let dict = build_dictionary(&[9.0, 10.0, 11.0], &g).unwrap();
        let y = DMatrix::from_element(9, 1, c(1.0, 0.0));
        let mut beta = DVector::zeros(3);
        beta[1] = beta_deg.to_radians();
        SblState::from_parts(&y, &dict, DVector::from_element(3, 1.0), DVector::from_element(3, 1.0), 1.0, beta)
            .unwrap()
    }

    #[test]
    fn grid_move_accepted_inside_midpoints() {
        let mut s = refine_fixture(0.3);
        let out = refine_grid(&mut s, &[1]);
        assert_eq!(out, GridRefinement { moved: 1, rejected: 0 });
        assert!((s.dictionary.grid()[1] - 10.3).abs() < 1e-12);
        assert_eq!(s.beta[1], 0.0);
        let expected = steering_vector(s.dictionary.grid()[1], s.dictionary.geometry());
        assert_eq!(s.dictionary.steering().column(1).into_owned(), expected);
    }

    #[test]
    fn grid_move_rejected_outside_midpoints() {
        let mut s = refine_fixture(0.7);
        let out = refine_grid(&mut s, &[1]);
        assert_eq!(out, GridRefinement { moved: 0, rejected: 1 });
        assert_eq!(s.dictionary.grid(), &[9.0, 10.0, 11.0]);
        assert!((s.beta[1] - 0.7f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn single_iteration_cap() {
        let (y, s) = random_state(3, 6.0);
        let cfg = GdpConfig {
            max_iters: 1,
            ..GdpConfig::default()
        };
        let run = run_gdp_ogsbl(&y, &s.dictionary, &cfg).unwrap();
        assert_eq!(run.iterations, 1);
        assert_eq!(run.trace.len(), 1);
        assert!(!run.converged);
    }

    #[test]
    fn init_from_matched_filter() {
        let g = ArrayGeometry::coprime(3, 4, 0.5).unwrap();
        let dict = GridDictionary::uniform(-90.0, 90.0, 1.0, &g).unwrap();
        let y = DMatrix::from_element(9, 1, c(1.0, 0.0));
        let s = init_state(&y, &dict, &GdpConfig::default()).unwrap();
        assert!((s.delta[90] - 1.0).abs() < 1e-12);
        assert!(s.beta.iter().all(|&b| b == 0.0));
        assert!(s.delta.iter().all(|&d| d > 0.0));
        assert!(init_state(&DMatrix::zeros(9, 3), &dict, &GdpConfig::default()).is_err());
    }

    #[test]
    fn trace_csv() {
        let trace = vec![IterationRecord { iter: 1, delta_change: 0.5, alpha: 2.0, grid_moves: 3 }];
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iter,delta_change,alpha,num_grid_moves\n1,5e-1,2e0,3\n");
    }

    #[test]
    fn config_validation() {
        assert!(GdpConfig::<f64>::default().validate().is_ok());
        assert!(GdpConfig { sigma: -1.0, ..GdpConfig::<f64>::default() }.validate().is_err());
        assert!(GdpConfig { tol: 0.0, ..GdpConfig::<f64>::default() }.validate().is_err());
    }

    #[test]
    fn runs_in_single_precision() {
        let g = ArrayGeometry::<f32>::coprime(3, 4, 0.5).unwrap();
        let dict = GridDictionary::uniform(-90.0f32, 90.0, 2.0, &g).unwrap();
        let a = steering_vector(20.0f32, &g);
        let y = DMatrix::from_fn(9, 4, |i, t| a[i] * Complex::new(1.0 + t as f32, 0.0));
        let s = init_state(&y, &dict, &GdpConfig::default()).unwrap();
        let peak = s.delta.imax();
        assert_eq!(dict.grid()[peak], 20.0);
    }
}
