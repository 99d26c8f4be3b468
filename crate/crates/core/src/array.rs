//! Sparse linear array geometry, steering vectors and the grid dictionary.
//!
//! Angles are carried in degrees at the API boundary and converted to radians
//! for every trigonometric evaluation. The derivative matrix `B` is taken with
//! respect to the angle in radians.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::scalar::{cx, Cx, Real};

/// Linear array whose sensors sit at integer multiples of a unit spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry<T> {
    positions: Vec<u32>,
    spacing: T,
    wavelength: T,
}

impl<T: Real> ArrayGeometry<T> {
    /// `positions` are the integer multipliers `a_m` of `spacing`.
    pub fn new(positions: Vec<u32>, spacing: T, wavelength: T) -> Result<Self> {
        if positions.is_empty() {
            return invalid("array needs at least one sensor");
        }
        if positions[0] != 0 {
            return invalid("first sensor position must be 0");
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("sensor positions must be strictly increasing");
        }
        if !(spacing > T::zero()) || !(wavelength > T::zero()) {
            return invalid("spacing and wavelength must be positive");
        }
        Ok(Self {
            positions,
            spacing,
            wavelength,
        })
    }

    /// Half-wavelength spacing with the wavelength normalized to one.
    pub fn half_wavelength(positions: Vec<u32>) -> Result<Self> {
        Self::new(positions, T::lit(0.5), T::one())
    }

    /// Extended coprime array built from the pair `(n1, n2)`.
    pub fn coprime(n1: u32, n2: u32, spacing_over_wavelength: T) -> Result<Self> {
        Self::new(coprime_positions(n1, n2)?, spacing_over_wavelength, T::one())
    }

    pub fn positions(&self) -> &[u32] {
        &self.positions
    }

    pub fn num_sensors(&self) -> usize {
        self.positions.len()
    }

    pub fn spacing(&self) -> T {
        self.spacing
    }

    pub fn wavelength(&self) -> T {
        self.wavelength
    }

    /// Phase slope `2π·a_m·d/λ` for each sensor.
    fn wavenumbers(&self) -> impl Iterator<Item = T> + '_ {
        let k = T::two_pi() * self.spacing / self.wavelength;
        self.positions.iter().map(move |&a| k * T::lit(a as f64))
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Sensor multipliers of the extended coprime array
/// `{n2·N1 : 0 ≤ n2 < N2} ∪ {n1·N2 : 0 ≤ n1 < 2·N1}`.
pub fn coprime_positions(n1: u32, n2: u32) -> Result<Vec<u32>> {
    if n1 == 0 || n2 == 0 {
        return invalid(format!("coprime pair must be positive, got ({n1}, {n2})"));
    }
    if n1 >= n2 {
        return invalid(format!("coprime pair requires N1 < N2, got ({n1}, {n2})"));
    }
    if gcd(n1, n2) != 1 {
        return invalid(format!("({n1}, {n2}) are not coprime"));
    }
    let mut positions: Vec<u32> = (0..n2)
        .map(|i| i * n1)
        .chain((0..2 * n1).map(|i| i * n2))
        .collect();
    positions.sort_unstable();
    positions.dedup();
    Ok(positions)
}

/// Array response `exp(-2πj·a_m·d·sin θ/λ)` for a plane wave from `theta_deg`.
pub fn steering_vector<T: Real>(theta_deg: T, geometry: &ArrayGeometry<T>) -> DVector<Cx<T>> {
    let s = theta_deg.to_radians().sin();
    DVector::from_iterator(
        geometry.num_sensors(),
        geometry.wavenumbers().map(|k| {
            let phase = -k * s;
            cx(phase.cos(), phase.sin())
        }),
    )
}

/// Derivative of [`steering_vector`] with respect to the angle in radians.
pub fn steering_derivative<T: Real>(
    theta_deg: T,
    geometry: &ArrayGeometry<T>,
) -> DVector<Cx<T>> {
    let (s, c) = theta_deg.to_radians().sin_cos();
    DVector::from_iterator(
        geometry.num_sensors(),
        geometry.wavenumbers().map(|k| {
            let phase = -k * s;
            // d/dθ exp(-jks) = -jk·cos θ·exp(-jks)
            cx(phase.cos(), phase.sin()) * cx(T::zero(), -k * c)
        }),
    )
}

/// Evenly spaced angles `lo, lo + step, …` not exceeding `hi`.
pub fn uniform_grid<T: Real>(lo: T, hi: T, step: T) -> Result<Vec<T>> {
    if !(lo < hi) {
        return invalid("grid requires lo < hi");
    }
    if !(step > T::zero()) {
        return invalid("grid step must be positive");
    }
    if step >= hi - lo {
        return invalid("grid step must be smaller than the grid span");
    }
    // Tolerance keeps an endpoint that is a whole number of steps away.
    let count = ((hi - lo) / step + T::lit(1e-9)).floor().as_f64() as usize + 1;
    Ok((0..count)
        .map(|i| lo + step * T::from_usize_lossy(i))
        .collect())
}

/// Overcomplete steering matrix over a grid of candidate angles, with its
/// first-order derivative matrix.
#[derive(Debug, Clone)]
pub struct GridDictionary<T: Real> {
    grid: Vec<T>,
    step: T,
    a: DMatrix<Cx<T>>,
    b: DMatrix<Cx<T>>,
    geometry: ArrayGeometry<T>,
}

/// Builds the dictionary for an arbitrary strictly increasing grid.
///
/// The nominal step is the mean spacing of the grid (zero for a single point).
pub fn build_dictionary<T: Real>(
    grid: &[T],
    geometry: &ArrayGeometry<T>,
) -> Result<GridDictionary<T>> {
    let step = match grid.len() {
        0 | 1 => T::zero(),
        n => (grid[n - 1] - grid[0]) / T::from_usize_lossy(n - 1),
    };
    GridDictionary::with_step(grid.to_vec(), step, geometry)
}

impl<T: Real> GridDictionary<T> {
    pub fn with_step(grid: Vec<T>, step: T, geometry: &ArrayGeometry<T>) -> Result<Self> {
        if grid.is_empty() {
            return invalid("dictionary grid is empty");
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return invalid("dictionary grid must be strictly increasing");
        }
        let m = geometry.num_sensors();
        let n = grid.len();
        let mut a = DMatrix::zeros(m, n);
        let mut b = DMatrix::zeros(m, n);
        for (j, &theta) in grid.iter().enumerate() {
            a.set_column(j, &steering_vector(theta, geometry));
            b.set_column(j, &steering_derivative(theta, geometry));
        }
        Ok(Self {
            grid,
            step,
            a,
            b,
            geometry: geometry.clone(),
        })
    }

    /// Uniform dictionary over `[lo, hi]` with spacing `step` degrees.
    pub fn uniform(lo: T, hi: T, step: T, geometry: &ArrayGeometry<T>) -> Result<Self> {
        Self::with_step(uniform_grid(lo, hi, step)?, step, geometry)
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    /// Nominal grid step in degrees.
    pub fn step(&self) -> T {
        self.step
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn num_sensors(&self) -> usize {
        self.a.nrows()
    }

    pub fn steering(&self) -> &DMatrix<Cx<T>> {
        &self.a
    }

    pub fn derivative(&self) -> &DMatrix<Cx<T>> {
        &self.b
    }

    pub fn geometry(&self) -> &ArrayGeometry<T> {
        &self.geometry
    }

    /// Moves grid point `index` to `theta_deg` and recomputes its columns.
    ///
    /// The caller keeps the grid strictly increasing.
    pub(crate) fn move_point(&mut self, index: usize, theta_deg: T) {
        self.grid[index] = theta_deg;
        self.a
            .set_column(index, &steering_vector(theta_deg, &self.geometry));
        self.b
            .set_column(index, &steering_derivative(theta_deg, &self.geometry));
    }
}
