//! Projected harmonic-map heat flow on cylinder annuli with Dirichlet data.
//!
//! Each iteration applies `u ← project(u + τ Δ_h u)` on interior rows, where
//! `Δ_h` is the five-point Laplacian in `(t, θ)`. Energy, gradient size and
//! the tangential residual of the current iterate are gathered in the same
//! sweep that writes the next one.

use std::io::Read;
use std::ops::Range;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{CylinderGrid, FieldSample};
use crate::geometry::{TargetManifold, MANIFOLD_TOL};
use crate::linalg::{dot, norm};
use crate::rational::RationalFamily;

/// Energy increases smaller than this fraction of the energy count as ties.
pub const ENERGY_REL_TOL: f64 = 1e-12;
/// Iterations exempt from the monotonicity check.
pub const TRANSIENT_ITERS: usize = 10;
/// Consecutive energy increases that abort the flow.
pub const MAX_CONSECUTIVE_INCREASES: usize = 10;

/// Iterations between evaluations of the residual and gradient norms.
pub const CHECK_EVERY: usize = 10;
/// How often the best iterate is snapshotted (a multiple of `CHECK_EVERY`).
const SNAPSHOT_EVERY: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub tau: f64,
    pub max_iters: usize,
    pub residual_tol: f64,
    pub grid: CylinderGrid,
}

impl FlowParams {
    /// Largest step allowed on `grid`: `min(Δt, Δθ)² / 4`.
    pub fn max_stable_tau(grid: &CylinderGrid) -> f64 {
        grid.dt().min(grid.dtheta()).powi(2) / 4.0
    }

    pub fn new(grid: CylinderGrid, tau: Option<f64>, max_iters: usize, residual_tol: f64) -> Result<Self> {
        let p = Self {
            tau: tau.unwrap_or_else(|| Self::max_stable_tau(&grid)),
            max_iters,
            residual_tol,
            grid,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let limit = Self::max_stable_tau(&self.grid);
        if !(self.tau > 0.0 && self.tau <= limit * (1.0 + 1e-12)) {
            return Err(Error::Config(format!(
                "tau = {:e} must lie in (0, min(dt, dtheta)^2/4 = {limit:e}]",
                self.tau
            )));
        }
        if !(self.residual_tol >= 1e-12) {
            return Err(Error::Config(format!(
                "residual_tol = {:e} must be >= 1e-12",
                self.residual_tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        if self.grid.n_t < 3 {
            return Err(Error::GridTooSmall(format!(
                "heat flow needs an interior row, got {} rows",
                self.grid.n_t
            )));
        }
        Ok(())
    }
}

/// Boundary values on one circle: `n_theta` points of the target, packed.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    dim: usize,
    values: Vec<f64>,
}

impl BoundaryTrace {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: values.len(),
            });
        }
        Ok(Self { dim, values })
    }

    /// Trace of a family on the circle `|z| = e^t`.
    pub fn from_family(family: &RationalFamily, lambda: f64, t: f64, n_theta: usize) -> Result<Self> {
        let mut values = Vec::with_capacity(n_theta * family.ambient_dim());
        for k in 0..n_theta {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / n_theta as f64;
            values.extend(family.eval(lambda, Complex64::from_polar(t.exp(), theta))?);
        }
        Self::new(family.ambient_dim(), values)
    }

    /// Reads headerless rows `θ_k, x_1, …, x_dim`; the θ column must match the
    /// uniform nodes `2πk/n` to 1e-9.
    pub fn from_csv<R: Read>(reader: R, dim: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut thetas = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
            if rec.len() != dim + 1 {
                return Err(Error::Config(format!(
                    "boundary row {}: expected {} columns, got {}",
                    line + 1,
                    dim + 1,
                    rec.len()
                )));
            }
            let nums: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let nums = nums.map_err(|e| Error::Config(format!("boundary row {}: {e}", line + 1)))?;
            thetas.push(nums[0]);
            values.extend_from_slice(&nums[1..]);
        }
        let n = thetas.len();
        for (k, th) in thetas.iter().enumerate() {
            let expect = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            if (th - expect).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "boundary row {}: theta {th} is not the uniform node {expect}",
                    k + 1
                )));
            }
        }
        Self::new(dim, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    fn check(&self, target: &TargetManifold, n_theta: usize) -> Result<()> {
        if self.dim != target.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: target.ambient_dim(),
                got: self.dim,
            });
        }
        if self.len() != n_theta {
            return Err(Error::DimensionMismatch {
                expected: n_theta,
                got: self.len(),
            });
        }
        for k in 0..self.len() {
            let residual = target.defining_residual(self.point(k));
            if !(residual <= MANIFOLD_TOL) {
                return Err(Error::NotOnManifold { residual });
            }
        }
        Ok(())
    }
}

/// Per-run record of the flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub final_gradient: f64,
    pub energy_history: Vec<f64>,
    pub energy_monotone: bool,
}

impl FlowDiagnostics {
    /// Initial over final tangential residual.
    pub fn residual_reduction(&self) -> f64 {
        self.initial_residual / self.final_residual
    }
}

#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub sample: FieldSample,
    pub diagnostics: FlowDiagnostics,
}

/// A failed flow, with the lowest-residual iterate when one exists.
#[derive(Debug, Clone)]
pub struct FlowFailure {
    pub error: Error,
    pub best: Option<Box<FlowSolution>>,
}

impl std::fmt::Display for FlowFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for FlowFailure {}

impl From<Error> for FlowFailure {
    fn from(error: Error) -> Self {
        Self { error, best: None }
    }
}

impl From<FlowFailure> for Error {
    fn from(f: FlowFailure) -> Self {
        f.error
    }
}

/// Statistics of one iterate, gathered while computing the next.
#[derive(Debug, Clone, Copy)]
struct SweepStats {
    residual: f64,
    gradient: f64,
    energy: f64,
}

struct Stencil<'a> {
    grid: CylinderGrid,
    dim: usize,
    blocks: &'a [Range<usize>],
}

/// Interior sums of one sweep: squared sups and raw energy sums.
#[derive(Debug, Clone, Copy, Default)]
struct InteriorSums {
    res_sup2: f64,
    grad_sup2: f64,
    e_t: f64,
    e_th: f64,
}

impl Stencil<'_> {
    /// Writes `project(u + τ Δ_h u)` into the interior rows of `next` (when
    /// given) and returns the statistics of `cur`. Residual and gradient are
    /// NaN unless `full` is set.
    fn sweep(&self, cur: &[f64], next: Option<&mut [f64]>, tau: f64, full: bool) -> SweepStats {
        let (nt, nth, dim) = (self.grid.n_t, self.grid.n_theta, self.dim);
        let (dt, dth) = (self.grid.dt(), self.grid.dtheta());
        let row = nth * dim;
        let block = self.blocks[0].len();
        let uniform = self.blocks.iter().all(|b| b.len() == block);
        let sums = match (uniform, block) {
            (true, 2) if full => self.interior::<2, true>(cur, next, tau),
            (true, 2) => self.interior::<2, false>(cur, next, tau),
            (true, 3) if full => self.interior::<3, true>(cur, next, tau),
            (true, 3) => self.interior::<3, false>(cur, next, tau),
            (true, 4) if full => self.interior::<4, true>(cur, next, tau),
            (true, 4) => self.interior::<4, false>(cur, next, tau),
            _ => self.interior_dynamic(cur, next, tau),
        };
        // Forward t-difference from row 0 and θ-differences on the end rows.
        let mut e_t = sums.e_t;
        let mut e_th_ends = 0.0;
        for k in 0..nth {
            let kp = if k + 1 == nth { 0 } else { k + 1 };
            for c in 0..dim {
                let d = cur[row + k * dim + c] - cur[k * dim + c];
                e_t += d * d;
                for j in [0, nt - 1] {
                    let d = cur[j * row + kp * dim + c] - cur[j * row + k * dim + c];
                    e_th_ends += d * d;
                }
            }
        }
        let energy = 0.5 * dt * dth * (e_t / (dt * dt) + (sums.e_th + 0.5 * e_th_ends) / (dth * dth));
        SweepStats {
            residual: if full { sums.res_sup2.sqrt() } else { f64::NAN },
            gradient: if full { sums.grad_sup2.sqrt() } else { f64::NAN },
            energy,
        }
    }

    /// Kernel for targets whose sphere factors all have `B` ambient coordinates.
    fn interior<const B: usize, const FULL: bool>(
        &self,
        cur: &[f64],
        mut next: Option<&mut [f64]>,
        tau: f64,
    ) -> InteriorSums {
        let (nt, nth, dim) = (self.grid.n_t, self.grid.n_theta, self.dim);
        let nb = dim / B;
        let (dt, dth) = (self.grid.dt(), self.grid.dtheta());
        let (idt2, idth2) = (1.0 / (dt * dt), 1.0 / (dth * dth));
        let (i2dt, i2dth) = (0.5 / dt, 0.5 / dth);
        let row = nth * dim;
        let mut sums = InteriorSums::default();
        let load = |s: &[f64], o: usize| -> [f64; B] { s[o..o + B].try_into().unwrap() };

        for j in 1..nt - 1 {
            let dn_row = &cur[(j - 1) * row..j * row];
            let mid = &cur[j * row..(j + 1) * row];
            let up_row = &cur[(j + 1) * row..(j + 2) * row];
            let mut out_row = next.as_deref_mut().map(|n| &mut n[j * row..(j + 1) * row]);
            for k in 0..nth {
                let kp = if k + 1 == nth { 0 } else { k + 1 };
                let km = if k == 0 { nth - 1 } else { k - 1 };
                let mut g2 = 0.0;
                let mut r2 = 0.0;
                for bi in 0..nb {
                    let o = k * dim + bi * B;
                    let u = load(mid, o);
                    let up = load(up_row, o);
                    let dn = load(dn_row, o);
                    let r = load(mid, kp * dim + bi * B);
                    let l = load(mid, km * dim + bi * B);
                    let mut lap = [0.0; B];
                    let mut s = 0.0;
                    for c in 0..B {
                        lap[c] = (up[c] + dn[c] - 2.0 * u[c]) * idt2 + (r[c] + l[c] - 2.0 * u[c]) * idth2;
                        s += lap[c] * u[c];
                        sums.e_t += (up[c] - u[c]) * (up[c] - u[c]);
                        sums.e_th += (r[c] - u[c]) * (r[c] - u[c]);
                        if FULL {
                            let gt = (up[c] - dn[c]) * i2dt;
                            let gth = (r[c] - l[c]) * i2dth;
                            g2 += gt * gt + gth * gth;
                        }
                    }
                    if FULL {
                        for c in 0..B {
                            let v = lap[c] - s * u[c];
                            r2 += v * v;
                        }
                    }
                    if let Some(out) = out_row.as_deref_mut() {
                        let mut w = [0.0; B];
                        let mut n2 = 0.0;
                        for c in 0..B {
                            w[c] = u[c] + tau * lap[c];
                            n2 += w[c] * w[c];
                        }
                        let inv = inv_sqrt_near_one(n2);
                        for c in 0..B {
                            out[o + c] = w[c] * inv;
                        }
                    }
                }
                sums.grad_sup2 = sums.grad_sup2.max(g2);
                sums.res_sup2 = sums.res_sup2.max(r2);
            }
        }
        sums
    }

    fn interior_dynamic(&self, cur: &[f64], mut next: Option<&mut [f64]>, tau: f64) -> InteriorSums {
        let (nt, nth, dim) = (self.grid.n_t, self.grid.n_theta, self.dim);
        let (dt, dth) = (self.grid.dt(), self.grid.dtheta());
        let (idt2, idth2) = (1.0 / (dt * dt), 1.0 / (dth * dth));
        let (i2dt, i2dth) = (0.5 / dt, 0.5 / dth);
        let row = nth * dim;
        let mut lap = vec![0.0; dim];
        let mut sums = InteriorSums::default();

        for j in 1..nt - 1 {
            for k in 0..nth {
                let kp = if k + 1 == nth { 0 } else { k + 1 };
                let km = if k == 0 { nth - 1 } else { k - 1 };
                let o = j * row + k * dim;
                let (op, om) = (j * row + kp * dim, j * row + km * dim);
                let mut g2 = 0.0;
                for c in 0..dim {
                    let u = cur[o + c];
                    let up = cur[o + row + c];
                    let dn = cur[o - row + c];
                    let r = cur[op + c];
                    let l = cur[om + c];
                    lap[c] = (up + dn - 2.0 * u) * idt2 + (r + l - 2.0 * u) * idth2;
                    sums.e_t += (up - u) * (up - u);
                    sums.e_th += (r - u) * (r - u);
                    let gt = (up - dn) * i2dt;
                    let gth = (r - l) * i2dth;
                    g2 += gt * gt + gth * gth;
                }
                sums.grad_sup2 = sums.grad_sup2.max(g2);
                let u = &cur[o..o + dim];
                let mut r2 = 0.0;
                for b in self.blocks {
                    let s = dot(&lap[b.clone()], &u[b.clone()]);
                    for c in b.clone() {
                        let v = lap[c] - s * u[c];
                        r2 += v * v;
                    }
                }
                sums.res_sup2 = sums.res_sup2.max(r2);
                if let Some(next) = next.as_deref_mut() {
                    let out = &mut next[o..o + dim];
                    for c in 0..dim {
                        out[c] = u[c] + tau * lap[c];
                    }
                    for b in self.blocks {
                        let n = norm(&out[b.clone()]);
                        out[b.clone()].iter_mut().for_each(|v| *v /= n);
                    }
                }
            }
        }
        sums
    }
}

/// `1/√x`; a fifth-order series when `|x − 1| < 1e-3` (error below 3e-16).
#[inline]
fn inv_sqrt_near_one(x: f64) -> f64 {
    let e = x - 1.0;
    if e.abs() < 1e-3 {
        1.0 + e * (-0.5 + e * (0.375 + e * (-0.3125 + e * 0.2734375)))
    } else {
        1.0 / x.sqrt()
    }
}

struct Progress {
    history: Vec<f64>,
    monotone: bool,
    initial_residual: f64,
}

impl Progress {
    fn finish(
        self,
        grid: CylinderGrid,
        dim: usize,
        values: Vec<f64>,
        stats: SweepStats,
        iterations: usize,
        converged: bool,
    ) -> Result<FlowSolution> {
        Ok(FlowSolution {
            sample: FieldSample::from_values(grid, dim, values)?,
            diagnostics: FlowDiagnostics {
                iterations,
                converged,
                initial_residual: self.initial_residual,
                final_residual: stats.residual,
                final_gradient: stats.gradient,
                energy_history: self.history,
                energy_monotone: self.monotone,
            },
        })
    }
}

/// Per-θ geodesic interpolation between the boundary traces.
pub fn geodesic_initializer(
    target: &TargetManifold,
    inner: &BoundaryTrace,
    outer: &BoundaryTrace,
    grid: &CylinderGrid,
) -> Result<Vec<f64>> {
    let dim = target.ambient_dim();
    let mut values = vec![0.0; grid.len() * dim];
    for j in 0..grid.n_t {
        let s = j as f64 / (grid.n_t - 1) as f64;
        for k in 0..grid.n_theta {
            let o = (j * grid.n_theta + k) * dim;
            for b in target.blocks() {
                let x = &inner.point(k)[b.clone()];
                let y = &outer.point(k)[b.clone()];
                let out = &mut values[o + b.start..o + b.end];
                slerp(x, y, s, out);
            }
        }
    }
    Ok(values)
}

fn slerp(x: &[f64], y: &[f64], s: f64, out: &mut [f64]) {
    let c = dot(x, y).clamp(-1.0, 1.0);
    let omega = c.acos();
    let sin_omega = omega.sin();
    if sin_omega > 1e-8 {
        let (wx, wy) = (((1.0 - s) * omega).sin() / sin_omega, (s * omega).sin() / sin_omega);
        for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
            *o = wx * a + wy * b;
        }
    } else if c > 0.0 {
        for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
            *o = (1.0 - s) * a + s * b;
        }
        let n = norm(out);
        out.iter_mut().for_each(|v| *v /= n);
    } else {
        // Antipodal: follow the great circle through the least-aligned axis.
        let axis = (0..x.len())
            .min_by(|&i, &j| x[i].abs().total_cmp(&x[j].abs()))
            .unwrap_or(0);
        let mut v: Vec<f64> = x.iter().map(|xi| -xi * x[axis]).collect();
        v[axis] += 1.0;
        let n = norm(&v);
        let phi = s * std::f64::consts::PI;
        for ((o, a), b) in out.iter_mut().zip(x).zip(&v) {
            *o = phi.cos() * a + phi.sin() * b / n;
        }
    }
}

/// Runs the flow from `init` (or the geodesic initializer) until the
/// tangential residual drops below `residual_tol · ‖∇_h u‖_∞`.
pub fn solve_annulus(
    target: &TargetManifold,
    inner: &BoundaryTrace,
    outer: &BoundaryTrace,
    params: &FlowParams,
    init: Option<&FieldSample>,
) -> std::result::Result<FlowSolution, FlowFailure> {
    params.validate()?;
    let grid = params.grid;
    let dim = target.ambient_dim();
    inner.check(target, grid.n_theta)?;
    outer.check(target, grid.n_theta)?;

    let mut cur = match init {
        Some(s) => {
            if *s.grid() != grid || s.dim() != dim {
                return Err(Error::InvalidGrid("initial field does not match the flow grid".into()).into());
            }
            let mut v = s.values().to_vec();
            for chunk in v.chunks_exact_mut(dim) {
                target.project_in_place(chunk)?;
            }
            v
        }
        None => geodesic_initializer(target, inner, outer, &grid)?,
    };
    let row = grid.n_theta * dim;
    let last = (grid.n_t - 1) * row;
    cur[..row].copy_from_slice(inner.values());
    cur[last..].copy_from_slice(outer.values());
    let mut next = cur.clone();

    let stencil = Stencil {
        grid,
        dim,
        blocks: target.blocks(),
    };
    let mut progress = Progress {
        history: Vec::new(),
        monotone: true,
        initial_residual: f64::NAN,
    };
    let mut consecutive = 0usize;
    let mut best: Option<(f64, Vec<f64>)> = None;

    for iter in 0..=params.max_iters {
        let advance = iter < params.max_iters;
        let full = !advance || iter % CHECK_EVERY == 0;
        let stats = stencil.sweep(&cur, advance.then_some(&mut next[..]), params.tau, full);
        if iter == 0 {
            progress.initial_residual = stats.residual;
        }
        if !stats.energy.is_finite() || (full && !stats.residual.is_finite()) {
            return Err(Error::UnstableStep {
                iteration: iter,
                consecutive,
            }
            .into());
        }
        if let Some(&prev) = progress.history.last() {
            if stats.energy > prev + ENERGY_REL_TOL * prev.abs() {
                if iter > TRANSIENT_ITERS {
                    progress.monotone = false;
                    consecutive += 1;
                    if consecutive >= MAX_CONSECUTIVE_INCREASES {
                        return Err(Error::UnstableStep {
                            iteration: iter,
                            consecutive,
                        }
                        .into());
                    }
                }
            } else {
                consecutive = 0;
            }
        }
        progress.history.push(stats.energy);

        if full {
            if stats.residual <= params.residual_tol * stats.gradient {
                return Ok(progress.finish(grid, dim, cur, stats, iter, true)?);
            }
            let ratio = stats.residual / stats.gradient.max(f64::MIN_POSITIVE);
            if !advance {
                let error = Error::NotConverged {
                    iterations: iter,
                    residual: stats.residual,
                };
                let best = match best {
                    Some((r, values)) if r < ratio => {
                        let s = stencil.sweep(&values, None, 0.0, true);
                        progress.finish(grid, dim, values, s, iter, false)?
                    }
                    _ => progress.finish(grid, dim, cur, stats, iter, false)?,
                };
                return Err(FlowFailure {
                    error,
                    best: Some(Box::new(best)),
                });
            }
            if iter % SNAPSHOT_EVERY == 0 && best.as_ref().is_none_or(|(r, _)| ratio < *r) {
                best = Some((ratio, cur.clone()));
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    unreachable!("loop returns on its final iteration")
}

/// Tangential part of the five-point Laplacian at each interior node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicResidual {
    /// `(n_t − 2) × n_theta` values, row-major over interior rows.
    pub field: Vec<f64>,
    pub sup: f64,
    pub l2: f64,
}

pub fn harmonic_residual(target: &TargetManifold, s: &FieldSample) -> Result<HarmonicResidual> {
    let g = s.grid();
    if g.n_t < 5 {
        return Err(Error::GridTooSmall(format!(
            "harmonic residual needs 3 interior rows, got {}",
            g.n_t.saturating_sub(2)
        )));
    }
    if s.dim() != target.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: target.ambient_dim(),
            got: s.dim(),
        });
    }
    let (idt2, idth2) = (g.dt().powi(-2), g.dtheta().powi(-2));
    let dim = s.dim();
    let mut field = Vec::with_capacity((g.n_t - 2) * g.n_theta);
    let mut lap = vec![0.0; dim];
    let mut l2 = 0.0;
    for j in 1..g.n_t - 1 {
        for k in 0..g.n_theta {
            let kp = (k + 1) % g.n_theta;
            let km = (k + g.n_theta - 1) % g.n_theta;
            let u = s.value(j, k);
            let (up, dn, r, l) = (s.value(j + 1, k), s.value(j - 1, k), s.value(j, kp), s.value(j, km));
            for c in 0..dim {
                lap[c] = (up[c] + dn[c] - 2.0 * u[c]) * idt2 + (r[c] + l[c] - 2.0 * u[c]) * idth2;
            }
            target.tangent_part_in_place(u, &mut lap);
            let v = norm(&lap);
            l2 += v * v;
            field.push(v);
        }
    }
    let sup = field.iter().copied().fold(0.0, f64::max);
    Ok(HarmonicResidual {
        field,
        sup,
        l2: (l2 * g.dt() * g.dtheta()).sqrt(),
    })
}

/// `‖∇_h u‖_∞` over interior rows, from the sample's stored derivatives.
pub fn gradient_sup(s: &FieldSample) -> f64 {
    let g = s.grid();
    let mut sup = 0.0_f64;
    for j in 1..g.n_t - 1 {
        for k in 0..g.n_theta {
            let (a, b) = (s.dt_at(j, k), s.dtheta_at(j, k));
            sup = sup.max(dot(a, a) + dot(b, b));
        }
    }
    sup.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{cylinder_sample, FactorMap, LambdaPoly};

    fn traces(f: &RationalFamily, grid: &CylinderGrid) -> (BoundaryTrace, BoundaryTrace) {
        (
            BoundaryTrace::from_family(f, 0.0, grid.t_min, grid.n_theta).unwrap(),
            BoundaryTrace::from_family(f, 0.0, grid.t_max, grid.n_theta).unwrap(),
        )
    }

    fn sup_distance(a: &FieldSample, b: &FieldSample) -> f64 {
        a.values()
            .chunks(a.dim())
            .zip(b.values().chunks(b.dim()))
            .map(|(x, y)| norm(&crate::linalg::sub(x, y)))
            .fold(0.0, f64::max)
    }

    #[test]
    fn params_validation() {
        let g = CylinderGrid::new(-2.0, 0.0, 33, 64).unwrap();
        assert!(FlowParams::new(g, Some(1.0), 10, 1e-6).is_err());
        assert!(FlowParams::new(g, None, 10, 1e-13).is_err());
        let p = FlowParams::new(g, None, 10, 1e-6).unwrap();
        assert_eq!(p.tau, FlowParams::max_stable_tau(&g));
    }

    #[test]
    fn constant_boundary_gives_constant_solution() {
        let target = TargetManifold::sphere(2);
        let g = CylinderGrid::new(-1.0, 0.0, 9, 64).unwrap();
        let pole = BoundaryTrace::new(3, [0.0, 0.0, -1.0].repeat(64)).unwrap();
        let p = FlowParams::new(g, None, 100, 1e-8).unwrap();
        let sol = solve_annulus(&target, &pole, &pole, &p, None).unwrap();
        assert_eq!(sol.diagnostics.iterations, 0);
        assert_eq!(sol.diagnostics.final_residual, 0.0);
        assert_eq!(harmonic_residual(&target, &sol.sample).unwrap().sup, 0.0);
    }

    #[test]
    fn boundary_off_target_is_rejected() {
        let target = TargetManifold::sphere(2);
        let g = CylinderGrid::new(-1.0, 0.0, 9, 64).unwrap();
        let bad = BoundaryTrace::new(3, [0.0, 0.0, -1.1].repeat(64)).unwrap();
        let good = BoundaryTrace::new(3, [0.0, 0.0, -1.0].repeat(64)).unwrap();
        let p = FlowParams::new(g, None, 10, 1e-8).unwrap();
        let err = solve_annulus(&target, &bad, &good, &p, None).unwrap_err();
        assert!(matches!(err.error, Error::NotOnManifold { .. }));
    }

    fn check_reproduces(fam: &RationalFamily) {
        let target = TargetManifold::sphere(2);
        let g = CylinderGrid::new(-2.0, 0.0, 33, 64).unwrap();
        let (inner, outer) = traces(fam, &g);
        let p = FlowParams::new(g, None, 100_000, 1e-7).unwrap();
        let sol = solve_annulus(&target, &inner, &outer, &p, None).unwrap();
        let exact = cylinder_sample(fam, 0.0, &g).unwrap();
        let err = sup_distance(&sol.sample, &exact);
        assert!(err < 5e-3, "{err}");
        assert!(sol.diagnostics.energy_monotone);
        assert!(sol.diagnostics.residual_reduction() >= 1e6);
        let hr = harmonic_residual(&target, &sol.sample).unwrap();
        assert!(hr.sup <= 10.0 * p.residual_tol * gradient_sup(&sol.sample));
    }

    #[test]
    fn reproduces_holomorphic_data() {
        check_reproduces(&RationalFamily::identity());
    }

    #[test]
    fn reproduces_antiholomorphic_data() {
        let conj = RationalFamily::new(vec![FactorMap::new(
            LambdaPoly::fixed(&[0.0, 1.0]),
            LambdaPoly::fixed(&[1.0]),
            true,
        )])
        .unwrap();
        check_reproduces(&conj);
    }

    #[test]
    fn not_converged_returns_best_iterate() {
        let target = TargetManifold::sphere(2);
        let g = CylinderGrid::new(-2.0, 0.0, 17, 64).unwrap();
        let (inner, outer) = traces(&RationalFamily::identity(), &g);
        let p = FlowParams::new(g, None, 50, 1e-10).unwrap();
        let err = solve_annulus(&target, &inner, &outer, &p, None).unwrap_err();
        assert!(matches!(err.error, Error::NotConverged { iterations: 50, .. }));
        let best = err.best.unwrap();
        assert!(!best.diagnostics.converged);
        assert!(best.diagnostics.final_residual < best.diagnostics.initial_residual);
    }

    #[test]
    fn residual_of_analytic_sample_is_second_order() {
        let target = TargetManifold::sphere(2);
        let f = RationalFamily::identity();
        let coarse = CylinderGrid::new(-2.0, 0.0, 65, 128).unwrap();
        let fine = CylinderGrid::new(-2.0, 0.0, 129, 256).unwrap();
        let rc = harmonic_residual(&target, &cylinder_sample(&f, 0.0, &coarse).unwrap()).unwrap();
        let rf = harmonic_residual(&target, &cylinder_sample(&f, 0.0, &fine).unwrap()).unwrap();
        assert!(rf.sup <= 1e-2);
        let ratio = rc.sup / rf.sup;
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn residual_needs_three_interior_rows() {
        let g = CylinderGrid::new(0.0, 1.0, 4, 64).unwrap();
        let s = FieldSample::constant(g, &[0.0, 0.0, 1.0]);
        assert!(matches!(
            harmonic_residual(&TargetManifold::sphere(2), &s),
            Err(Error::GridTooSmall(_))
        ));
    }

    #[test]
    fn csv_boundary_roundtrip() {
        let mut text = String::from("# theta,x,y,z\n");
        for k in 0..64 {
            let th = 2.0 * std::f64::consts::PI * k as f64 / 64.0;
            text.push_str(&format!("{th:.17e}, {:.17e}, {:.17e}, 0\n", th.cos(), th.sin()));
        }
        let b = BoundaryTrace::from_csv(text.as_bytes(), 3).unwrap();
        assert_eq!(b.len(), 64);
        assert!((b.point(16)[1] - 1.0).abs() < 1e-15);
        assert!(BoundaryTrace::from_csv("0.0, 1, 0\n".as_bytes(), 3).is_err());
        assert!(BoundaryTrace::from_csv("0.5, 1, 0, 0\n1.0, 1, 0, 0\n".as_bytes(), 3).is_err());
    }

    #[test]
    fn series_inverse_square_root() {
        for x in [1.0, 1.0 + 9e-4, 1.0 - 9e-4, 1.0 + 1e-7, 2.0, 0.25] {
            let rel = (inv_sqrt_near_one(x) * x.sqrt() - 1.0).abs();
            assert!(rel < 4e-16, "{x}: {rel:e}");
        }
    }

    #[test]
    fn antipodal_slerp_stays_on_sphere() {
        let mut out = [0.0; 3];
        slerp(&[0.0, 0.0, 1.0], &[0.0, 0.0, -1.0], 0.5, &mut out);
        assert!((norm(&out) - 1.0).abs() < 1e-15);
        assert!(out[2].abs() < 1e-15);
    }
}
