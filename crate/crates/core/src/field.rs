//! Cylinder grids and ambient-vector-valued fields sampled on them.
//!
//! A point `(t, θ)` of the cylinder corresponds to `z = e^{t + iθ}` in the
//! punctured plane; the flat Laplacian becomes `∂_t² + ∂_θ²`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_THETA_NODES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub n_t: usize,
    pub n_theta: usize,
}

impl CylinderGrid {
    pub fn new(t_min: f64, t_max: f64, n_t: usize, n_theta: usize) -> Result<Self> {
        if !(t_min < t_max) || !t_min.is_finite() || !t_max.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "need finite t_min < t_max, got [{t_min}, {t_max}]"
            )));
        }
        if n_t < 2 {
            return Err(Error::InvalidGrid(format!("need n_t >= 2, got {n_t}")));
        }
        if n_theta < MIN_THETA_NODES || !n_theta.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "n_theta must be a power of two >= {MIN_THETA_NODES}, got {n_theta}"
            )));
        }
        Ok(Self {
            t_min,
            t_max,
            n_t,
            n_theta,
        })
    }

    /// Grid with spacing `dt` whose rows are `center + j·dt` for `|j| ≤ half_rows`,
    /// where `half_rows = floor(half_width / dt)`.
    pub fn centered(center: f64, half_width: f64, dt: f64, n_theta: usize) -> Result<Self> {
        if !(dt > 0.0) || !(half_width > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "need positive half width and spacing, got {half_width}, {dt}"
            )));
        }
        let half_rows = (half_width / dt + 1e-9).floor() as usize;
        if half_rows == 0 {
            return Err(Error::InvalidGrid(format!(
                "half width {half_width} is below the spacing {dt}"
            )));
        }
        let span = half_rows as f64 * dt;
        Self::new(center - span, center + span, 2 * half_rows + 1, n_theta)
    }

    pub fn dt(&self) -> f64 {
        (self.t_max - self.t_min) / (self.n_t - 1) as f64
    }

    pub fn dtheta(&self) -> f64 {
        2.0 * PI / self.n_theta as f64
    }

    pub fn t(&self, j: usize) -> f64 {
        if j + 1 == self.n_t {
            self.t_max
        } else {
            self.t_min + j as f64 * self.dt()
        }
    }

    pub fn theta(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.n_theta as f64
    }

    pub fn t_values(&self) -> Vec<f64> {
        (0..self.n_t).map(|j| self.t(j)).collect()
    }

    /// Index of the row closest to `t`, clamped to the grid.
    pub fn nearest_row(&self, t: f64) -> usize {
        let x = ((t - self.t_min) / self.dt()).round();
        x.clamp(0.0, (self.n_t - 1) as f64) as usize
    }

    pub fn len(&self) -> usize {
        self.n_t * self.n_theta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Derivatives from closed-form differentials.
    Analytic,
    /// Derivatives from second-order finite differences of the values.
    FiniteDifference,
}

/// Values and first derivatives of a map on a cylinder grid.
///
/// Storage is row-major: node `(j, k)` occupies `[(j·n_theta + k)·dim, +dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    grid: CylinderGrid,
    dim: usize,
    values: Vec<f64>,
    du_dt: Vec<f64>,
    du_dtheta: Vec<f64>,
    provenance: Provenance,
}

impl FieldSample {
    pub fn from_parts(
        grid: CylinderGrid,
        dim: usize,
        values: Vec<f64>,
        du_dt: Vec<f64>,
        du_dtheta: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        let n = grid.len() * dim;
        for (name, v) in [("values", &values), ("du_dt", &du_dt), ("du_dtheta", &du_dtheta)] {
            if v.len() != n {
                return Err(Error::InvalidGrid(format!(
                    "{name} has {} entries, grid needs {n}",
                    v.len()
                )));
            }
        }
        Ok(Self {
            grid,
            dim,
            values,
            du_dt,
            du_dtheta,
            provenance,
        })
    }

    /// Builds a sample from values alone; derivatives are second-order finite
    /// differences (periodic in θ, one-sided at the end rows).
    pub fn from_values(grid: CylinderGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * dim {
            return Err(Error::InvalidGrid(format!(
                "values has {} entries, grid needs {}",
                values.len(),
                grid.len() * dim
            )));
        }
        if grid.n_t < 3 {
            return Err(Error::GridTooSmall(format!(
                "finite differences need 3 rows, got {}",
                grid.n_t
            )));
        }
        let (du_dt, du_dtheta) = finite_differences(&grid, dim, &values);
        Ok(Self {
            grid,
            dim,
            values,
            du_dt,
            du_dtheta,
            provenance: Provenance::FiniteDifference,
        })
    }

    pub fn constant(grid: CylinderGrid, point: &[f64]) -> Self {
        let dim = point.len();
        let values = point.repeat(grid.len());
        let zeros = vec![0.0; values.len()];
        Self {
            grid,
            dim,
            values,
            du_dt: zeros.clone(),
            du_dtheta: zeros,
            provenance: Provenance::Analytic,
        }
    }

    pub fn grid(&self) -> &CylinderGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    #[inline]
    pub fn offset(&self, j: usize, k: usize) -> usize {
        (j * self.grid.n_theta + k) * self.dim
    }

    #[inline]
    pub fn value(&self, j: usize, k: usize) -> &[f64] {
        let o = self.offset(j, k);
        &self.values[o..o + self.dim]
    }

    #[inline]
    pub fn dt_at(&self, j: usize, k: usize) -> &[f64] {
        let o = self.offset(j, k);
        &self.du_dt[o..o + self.dim]
    }

    #[inline]
    pub fn dtheta_at(&self, j: usize, k: usize) -> &[f64] {
        let o = self.offset(j, k);
        &self.du_dtheta[o..o + self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn du_dt(&self) -> &[f64] {
        &self.du_dt
    }

    pub fn du_dtheta(&self) -> &[f64] {
        &self.du_dtheta
    }

    /// Values of row `j` as a contiguous `n_theta × dim` slice.
    pub fn row(&self, j: usize) -> &[f64] {
        let o = self.offset(j, 0);
        &self.values[o..o + self.grid.n_theta * self.dim]
    }

    /// ½∬(|∂_t u|² + |∂_θ u|²) dt dθ over rows `lo..=hi`: trapezoid rule in t,
    /// uniform (spectrally exact) rule in θ.
    pub fn dirichlet_energy_rows(&self, lo: usize, hi: usize) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let dtheta = self.grid.dtheta();
        let dt = self.grid.dt();
        let row_energy = |j: usize| -> f64 {
            let o = self.offset(j, 0);
            let n = self.grid.n_theta * self.dim;
            let s: f64 = self.du_dt[o..o + n]
                .iter()
                .chain(&self.du_dtheta[o..o + n])
                .map(|v| v * v)
                .sum();
            0.5 * s * dtheta
        };
        let mut total = 0.5 * (row_energy(lo) + row_energy(hi));
        for j in lo + 1..hi {
            total += row_energy(j);
        }
        total * dt
    }

    pub fn dirichlet_energy(&self) -> f64 {
        self.dirichlet_energy_rows(0, self.grid.n_t - 1)
    }
}

/// Second-order finite-difference derivatives of row-major values.
pub(crate) fn finite_differences(grid: &CylinderGrid, dim: usize, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (nt, nth) = (grid.n_t, grid.n_theta);
    let dt = grid.dt();
    let dth = grid.dtheta();
    let at = |j: usize, k: usize, c: usize| values[(j * nth + k) * dim + c];
    let mut du_dt = vec![0.0; values.len()];
    let mut du_dth = vec![0.0; values.len()];
    for j in 0..nt {
        for k in 0..nth {
            let kp = (k + 1) % nth;
            let km = (k + nth - 1) % nth;
            for c in 0..dim {
                let o = (j * nth + k) * dim + c;
                du_dt[o] = if j == 0 {
                    (-3.0 * at(0, k, c) + 4.0 * at(1, k, c) - at(2, k, c)) / (2.0 * dt)
                } else if j == nt - 1 {
                    (3.0 * at(j, k, c) - 4.0 * at(j - 1, k, c) + at(j - 2, k, c)) / (2.0 * dt)
                } else {
                    (at(j + 1, k, c) - at(j - 1, k, c)) / (2.0 * dt)
                };
                du_dth[o] = (at(j, kp, c) - at(j, km, c)) / (2.0 * dth);
            }
        }
    }
    (du_dt, du_dth)
}
