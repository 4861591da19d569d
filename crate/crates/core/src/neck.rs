//! Neck expansion of sampled maps.
//!
//! On the neck the map is modelled as
//!
//! ```text
//! u ≈ p + q(t − t₀) + (a cosθ + b sinθ) e^t + (c cosθ + d sinθ) λ e^{−t},
//! ```
//!
//! with `t₀ = ½ log λ` and `η(t) = e^t + λ e^{−t}`. The coefficients are
//! recovered from per-circle Fourier modes by weighted least squares.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{CylinderGrid, FieldSample, Provenance};
use crate::geometry::TargetManifold;
use crate::linalg::{norm, slope, sub, weighted_least_squares};

pub const DEFAULT_MODES: usize = 4;
/// Largest accepted condition number of a fit's normal matrix.
pub const MAX_NORMAL_CONDITION: f64 = 1e12;
/// Minimum number of rows in each regression window.
pub const MIN_FIT_ROWS: usize = 8;
/// Largest accepted distance from `p` to the target before `A(p)` is used.
pub const NEAR_MANIFOLD: f64 = 1e-3;
/// Residuals below this are treated as exact zeros by `residual_decay`.
pub const RESIDUAL_FLOOR: f64 = 1e-14;

/// `η(t) = e^t + λ e^{−t}`.
pub fn eta(t: f64, lambda: f64) -> f64 {
    t.exp() + lambda * (-t).exp()
}

/// `t₀ = ½ log λ`, where `η` attains its minimum `2√λ`.
pub fn neck_center(lambda: f64) -> f64 {
    0.5 * lambda.ln()
}

/// Complex Fourier coefficients `m_k(t) = (1/N) Σ_j u(t, θ_j) e^{−ikθ_j}` for
/// `0 ≤ k ≤ K` on every row; negative modes are the conjugates.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleModes {
    k_max: usize,
    dim: usize,
    t: Vec<f64>,
    coeffs: Vec<Complex64>,
}

impl CircleModes {
    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    /// `m_k` on row `j`, one entry per ambient component; `k` may be negative.
    pub fn mode(&self, j: usize, k: isize) -> Vec<Complex64> {
        let ka = k.unsigned_abs();
        assert!(ka <= self.k_max, "mode {k} beyond K = {}", self.k_max);
        let o = (j * (self.k_max + 1) + ka) * self.dim;
        let m = &self.coeffs[o..o + self.dim];
        if k < 0 {
            m.iter().map(|c| c.conj()).collect()
        } else {
            m.to_vec()
        }
    }

    /// Cosine and sine coefficients of mode `k ≥ 1`: `2 Re m_k` and `−2 Im m_k`.
    pub fn cos_sin(&self, j: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
        let m = self.mode(j, k as isize);
        (
            m.iter().map(|c| 2.0 * c.re).collect(),
            m.iter().map(|c| -2.0 * c.im).collect(),
        )
    }
}

pub fn fourier_modes(s: &FieldSample) -> CircleModes {
    fourier_modes_k(s, DEFAULT_MODES)
}

pub fn fourier_modes_k(s: &FieldSample, k_max: usize) -> CircleModes {
    let g = s.grid();
    let (n, dim) = (g.n_theta, s.dim());
    let k_max = k_max.min(n / 2);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut coeffs = vec![Complex64::new(0.0, 0.0); g.n_t * (k_max + 1) * dim];
    for j in 0..g.n_t {
        let row = s.row(j);
        for c in 0..dim {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(row[k * dim + c], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..=k_max {
                coeffs[(j * (k_max + 1) + k) * dim + c] = buf[k] / n as f64;
            }
        }
    }
    CircleModes {
        k_max,
        dim,
        t: g.t_values(),
        coeffs,
    }
}

/// How the fit window is placed around `t₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowPolicy {
    pub delta: f64,
    #[serde(default = "default_min_half_width")]
    pub min_half_width: f64,
    #[serde(default = "default_center_fraction")]
    pub center_fraction: f64,
    #[serde(default = "default_true")]
    pub higher_order_columns: bool,
}

fn default_min_half_width() -> f64 {
    1.0
}

fn default_center_fraction() -> f64 {
    1.0 / 3.0
}

fn default_true() -> bool {
    true
}

impl WindowPolicy {
    pub fn new(delta: f64) -> Self {
        Self {
            delta,
            min_half_width: default_min_half_width(),
            center_fraction: default_center_fraction(),
            higher_order_columns: true,
        }
    }

    /// Half-width `max(log(δ/√λ), min_half_width)` of the window around `t₀`.
    pub fn half_width(&self, lambda: f64) -> f64 {
        (self.delta / lambda.sqrt()).ln().max(self.min_half_width)
    }

    pub fn window(&self, lambda: f64) -> (f64, f64) {
        let (t0, h) = (neck_center(lambda), self.half_width(lambda));
        (t0 - h, t0 + h)
    }
}

/// First-order coefficients without the per-row residual.
#[derive(Debug, Clone, PartialEq)]
pub struct FitCoefficients {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub window: (f64, f64),
    /// Normal-matrix condition numbers of the mode-0 and mode-1 fits.
    pub conditions: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeckExpansion {
    pub lambda: f64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub alpha_hat: Option<f64>,
    pub window: (f64, f64),
    /// `sup_θ |u − model|` on every row of the window, in increasing `t`.
    pub residual_sup: Vec<f64>,
}

impl NeckExpansion {
    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn t0(&self) -> f64 {
        neck_center(self.lambda)
    }
}

fn window_rows(t: &[f64], lo: f64, hi: f64, spacing: f64) -> Vec<usize> {
    let eps = 1e-9 * spacing;
    (0..t.len()).filter(|&j| t[j] >= lo - eps && t[j] <= hi + eps).collect()
}

/// Regression of the `|k| ≤ 1` modes against the first-order basis.
pub fn fit_modes(modes: &CircleModes, lambda: f64, policy: &WindowPolicy) -> Result<FitCoefficients> {
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    let t = modes.t();
    let spacing = if t.len() > 1 { t[1] - t[0] } else { 1.0 };
    let t0 = neck_center(lambda);
    let h = policy.half_width(lambda);
    let (lo, hi) = (t0 - h, t0 + h);
    let full = window_rows(t, lo, hi, spacing);
    let hc = h * policy.center_fraction;
    let center = window_rows(t, t0 - hc, t0 + hc, spacing);
    for (rows, a, b) in [(&full, lo, hi), (&center, t0 - hc, t0 + hc)] {
        if rows.len() < MIN_FIT_ROWS {
            return Err(Error::EmptyWindow {
                lo: a,
                hi: b,
                rows: rows.len(),
            });
        }
    }
    let dim = modes.dim();
    let extra = policy.higher_order_columns;

    // Mode 0 on the central rows, weighted by η^{-2}.
    let cols0 = if extra { 4 } else { 2 };
    let design0 = DMatrix::from_fn(center.len(), cols0, |i, col| {
        let tj = t[center[i]];
        match col {
            0 => 1.0,
            1 => tj - t0,
            2 => (2.0 * tj).exp(),
            _ => lambda * lambda * (-2.0 * tj).exp(),
        }
    });
    let rhs0 = DMatrix::from_fn(center.len(), dim, |i, c| modes.mode(center[i], 0)[c].re);
    let weights: Vec<f64> = center.iter().map(|&j| eta(t[j], lambda).powi(-2)).collect();
    let fit0 = weighted_least_squares(&design0, &rhs0, Some(&weights), MAX_NORMAL_CONDITION)?;

    // Mode 1 on the full window: cosine and sine parts side by side.
    let cols1 = if extra { 4 } else { 2 };
    let design1 = DMatrix::from_fn(full.len(), cols1, |i, col| {
        let tj = t[full[i]];
        match col {
            0 => tj.exp(),
            1 => lambda * (-tj).exp(),
            2 => (3.0 * tj).exp(),
            _ => lambda.powi(3) * (-3.0 * tj).exp(),
        }
    });
    let mut rhs1 = DMatrix::zeros(full.len(), 2 * dim);
    for (i, &j) in full.iter().enumerate() {
        let (cs, sn) = modes.cos_sin(j, 1);
        for c in 0..dim {
            rhs1[(i, c)] = cs[c];
            rhs1[(i, dim + c)] = sn[c];
        }
    }
    let fit1 = weighted_least_squares(&design1, &rhs1, None, MAX_NORMAL_CONDITION)?;

    let x0 = &fit0.coefficients;
    let x1 = &fit1.coefficients;
    let row = |m: &DMatrix<f64>, r: usize, off: usize| -> Vec<f64> { (0..dim).map(|c| m[(r, off + c)]).collect() };
    Ok(FitCoefficients {
        p: row(x0, 0, 0),
        q: row(x0, 1, 0),
        a: row(x1, 0, 0),
        c: row(x1, 1, 0),
        b: row(x1, 0, dim),
        d: row(x1, 1, dim),
        window: (lo, hi),
        conditions: (fit0.normal_condition, fit1.normal_condition),
    })
}

/// Fits the expansion and records the per-row sup residual of the six-term model.
pub fn fit_first_order(s: &FieldSample, lambda: f64, policy: &WindowPolicy) -> Result<NeckExpansion> {
    let modes = fourier_modes_k(s, 1);
    let f = fit_modes(&modes, lambda, policy)?;
    let mut e = NeckExpansion {
        lambda,
        p: f.p,
        q: f.q,
        a: f.a,
        b: f.b,
        c: f.c,
        d: f.d,
        alpha_hat: None,
        window: f.window,
        residual_sup: Vec::new(),
    };
    let g = s.grid();
    let rows = window_rows(&g.t_values(), f.window.0, f.window.1, g.dt());
    let model = ExpansionModel::first_order(&e);
    let mut point = vec![0.0; s.dim()];
    e.residual_sup = rows
        .iter()
        .map(|&j| {
            (0..g.n_theta)
                .map(|k| {
                    model.value_into(g.t(j), g.theta(k), &mut point);
                    norm(&sub(s.value(j, k), &point))
                })
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(e)
}

/// Scalar functions of `(t, θ)` used by the expansion and its correction.
/// `τ = t − t₀`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    One,
    Tau,
    ExpCos,
    ExpSin,
    LamExpNegCos,
    LamExpNegSin,
    /// `τ²`
    Tau2,
    /// `e^{2t}`
    Exp2,
    /// `λ² e^{−2t}`
    Lam2ExpNeg2,
    /// `τ e^t cosθ`
    TauExpCos,
    TauExpSin,
    /// `λ τ e^{−t} cosθ`
    LamTauExpNegCos,
    LamTauExpNegSin,
    /// `λ cos 2θ`
    LamCos2,
    LamSin2,
}

/// Value, `∂_t`, `∂_θ` and Laplacian of a basis function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisJet {
    pub value: f64,
    pub d_t: f64,
    pub d_theta: f64,
    pub laplacian: f64,
}

impl Basis {
    pub fn jet(self, t: f64, theta: f64, lambda: f64) -> BasisJet {
        let tau = t - neck_center(lambda);
        let (c, s) = (theta.cos(), theta.sin());
        let (ep, en) = (t.exp(), lambda * (-t).exp());
        let j = |value, d_t, d_theta, laplacian| BasisJet {
            value,
            d_t,
            d_theta,
            laplacian,
        };
        match self {
            Basis::One => j(1.0, 0.0, 0.0, 0.0),
            Basis::Tau => j(tau, 1.0, 0.0, 0.0),
            Basis::ExpCos => j(ep * c, ep * c, -ep * s, 0.0),
            Basis::ExpSin => j(ep * s, ep * s, ep * c, 0.0),
            Basis::LamExpNegCos => j(en * c, -en * c, -en * s, 0.0),
            Basis::LamExpNegSin => j(en * s, -en * s, en * c, 0.0),
            Basis::Tau2 => j(tau * tau, 2.0 * tau, 0.0, 2.0),
            Basis::Exp2 => {
                let e2 = ep * ep;
                j(e2, 2.0 * e2, 0.0, 4.0 * e2)
            }
            Basis::Lam2ExpNeg2 => {
                let e2 = en * en;
                j(e2, -2.0 * e2, 0.0, 4.0 * e2)
            }
            Basis::TauExpCos => j(tau * ep * c, (tau + 1.0) * ep * c, -tau * ep * s, 2.0 * ep * c),
            Basis::TauExpSin => j(tau * ep * s, (tau + 1.0) * ep * s, tau * ep * c, 2.0 * ep * s),
            Basis::LamTauExpNegCos => j(tau * en * c, (1.0 - tau) * en * c, -tau * en * s, -2.0 * en * c),
            Basis::LamTauExpNegSin => j(tau * en * s, (1.0 - tau) * en * s, tau * en * c, -2.0 * en * s),
            Basis::LamCos2 => {
                let (c2, s2) = ((2.0 * theta).cos(), (2.0 * theta).sin());
                j(lambda * c2, 0.0, -2.0 * lambda * s2, -4.0 * lambda * c2)
            }
            Basis::LamSin2 => {
                let (c2, s2) = ((2.0 * theta).cos(), (2.0 * theta).sin());
                j(lambda * s2, 0.0, 2.0 * lambda * c2, -4.0 * lambda * s2)
            }
        }
    }
}

/// A finite sum `Σ vᵢ fᵢ(t, θ)` of ambient vectors times basis functions.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionModel {
    pub lambda: f64,
    pub terms: Vec<(Vec<f64>, Basis)>,
}

impl ExpansionModel {
    pub fn first_order(e: &NeckExpansion) -> Self {
        Self {
            lambda: e.lambda,
            terms: vec![
                (e.p.clone(), Basis::One),
                (e.q.clone(), Basis::Tau),
                (e.a.clone(), Basis::ExpCos),
                (e.b.clone(), Basis::ExpSin),
                (e.c.clone(), Basis::LamExpNegCos),
                (e.d.clone(), Basis::LamExpNegSin),
            ],
        }
    }

    /// The quadratic correction `ũ` built from `A(p)` at the projection of `p`,
    /// applied to the tangential parts of the fitted coefficients.
    pub fn correction(e: &NeckExpansion, target: &TargetManifold) -> Result<Self> {
        let pp = target.project(&e.p)?;
        let distance = norm(&sub(&e.p, &pp));
        if distance > NEAR_MANIFOLD {
            return Err(Error::NotOnManifold { residual: distance });
        }
        let a = |x: &[f64], y: &[f64]| target.second_fundamental_form_tangential(&pp, x, y);
        let sc = |s: f64, v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| s * x).collect() };
        let (q, va, vb, vc, vd) = (&e.q, &e.a, &e.b, &e.c, &e.d);
        let aa_bb = crate::linalg::add(&a(va, va)?, &a(vb, vb)?);
        let cc_dd = crate::linalg::add(&a(vc, vc)?, &a(vd, vd)?);
        let cos2 = sub(&a(va, vc)?, &a(vb, vd)?);
        let sin2 = crate::linalg::add(&a(va, vd)?, &a(vb, vc)?);
        Ok(Self {
            lambda: e.lambda,
            terms: vec![
                (sc(0.5, a(q, q)?), Basis::Tau2),
                (sc(0.25, aa_bb), Basis::Exp2),
                (sc(0.25, cc_dd), Basis::Lam2ExpNeg2),
                (a(q, va)?, Basis::TauExpCos),
                (a(q, vb)?, Basis::TauExpSin),
                (a(q, vc)?, Basis::LamTauExpNegCos),
                (a(q, vd)?, Basis::LamTauExpNegSin),
                (sc(0.5, cos2), Basis::LamCos2),
                (sc(0.5, sin2), Basis::LamSin2),
            ],
        })
    }

    pub fn plus(mut self, other: Self) -> Self {
        self.terms.extend(other.terms);
        self
    }

    pub fn dim(&self) -> usize {
        self.terms.first().map_or(0, |(v, _)| v.len())
    }

    pub fn value_into(&self, t: f64, theta: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (v, b) in &self.terms {
            let f = b.jet(t, theta, self.lambda).value;
            for (o, vi) in out.iter_mut().zip(v) {
                *o += f * vi;
            }
        }
    }

    pub fn laplacian(&self, t: f64, theta: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (v, b) in &self.terms {
            let f = b.jet(t, theta, self.lambda).laplacian;
            for (o, vi) in out.iter_mut().zip(v) {
                *o += f * vi;
            }
        }
        out
    }

    /// Samples the model with analytic derivatives.
    pub fn sample(&self, grid: &CylinderGrid) -> Result<FieldSample> {
        let dim = self.dim();
        let n = grid.len() * dim;
        let (mut values, mut du_dt, mut du_dtheta) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for j in 0..grid.n_t {
            for k in 0..grid.n_theta {
                let o = (j * grid.n_theta + k) * dim;
                for (v, b) in &self.terms {
                    let f = b.jet(grid.t(j), grid.theta(k), self.lambda);
                    for (c, vi) in v.iter().enumerate() {
                        values[o + c] += f.value * vi;
                        du_dt[o + c] += f.d_t * vi;
                        du_dtheta[o + c] += f.d_theta * vi;
                    }
                }
            }
        }
        FieldSample::from_parts(*grid, dim, values, du_dt, du_dtheta, Provenance::Analytic)
    }
}

/// First-order model plus `ũ`, sampled on `grid`.
pub fn second_order_correction(e: &NeckExpansion, target: &TargetManifold, grid: &CylinderGrid) -> Result<FieldSample> {
    ExpansionModel::first_order(e)
        .plus(ExpansionModel::correction(e, target)?)
        .sample(grid)
}

/// One row of the remainder profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualPoint {
    pub t: f64,
    pub log_eta: f64,
    pub log_residual: f64,
}

/// `(t, log η, log sup_θ |s − model|)` for every row of the grid.
pub fn residual_profile(s: &FieldSample, model: &FieldSample, lambda: f64) -> Result<Vec<ResidualPoint>> {
    if s.grid() != model.grid() || s.dim() != model.dim() {
        return Err(Error::InvalidGrid("sample and model grids differ".into()));
    }
    let g = s.grid();
    Ok((0..g.n_t)
        .map(|j| {
            let r = (0..g.n_theta)
                .map(|k| norm(&sub(s.value(j, k), model.value(j, k))))
                .fold(0.0, f64::max);
            ResidualPoint {
                t: g.t(j),
                log_eta: eta(g.t(j), lambda).ln(),
                log_residual: r.ln(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub slope_left: f64,
    pub slope_right: f64,
    pub alpha_hat: f64,
    /// Set when the residual is below the floor on at least half the rows;
    /// the slopes are then `+∞`.
    pub underflow: bool,
}

/// Log-log slopes of the remainder against `η` on either side of `t₀`.
pub fn residual_decay(s: &FieldSample, model: &FieldSample, lambda: f64) -> Result<DecayReport> {
    let profile = residual_profile(s, model, lambda)?;
    let floor = RESIDUAL_FLOOR.ln();
    let small = profile.iter().filter(|p| !(p.log_residual >= floor)).count();
    if 2 * small >= profile.len() {
        return Ok(DecayReport {
            slope_left: f64::INFINITY,
            slope_right: f64::INFINITY,
            alpha_hat: f64::INFINITY,
            underflow: true,
        });
    }
    let t0 = neck_center(lambda);
    let side = |right: bool| -> Result<f64> {
        let (x, y): (Vec<f64>, Vec<f64>) = profile
            .iter()
            .filter(|p| (p.t >= t0) == right && p.log_residual >= floor)
            .map(|p| (p.log_eta, p.log_residual))
            .unzip();
        slope(&x, &y).ok_or_else(|| Error::EmptyWindow {
            lo: if right { t0 } else { s.grid().t_min },
            hi: if right { s.grid().t_max } else { t0 },
            rows: x.len(),
        })
    };
    let (slope_left, slope_right) = (side(false)?, side(true)?);
    Ok(DecayReport {
        slope_left,
        slope_right,
        alpha_hat: slope_left.min(slope_right) - 1.0,
        underflow: false,
    })
}
