//! Exact one-bubble families: rational maps in `z` with coefficients affine in
//! λ, composed with inverse stereographic projection onto unit 2-spheres.
//!
//! Each factor is evaluated in homogeneous form. With `w = [P : Q]`,
//!
//! ```text
//! σ = (2 P Q̄, |P|² − |Q|²) / (|P|² + |Q|²)
//! ```
//!
//! so `σ(0) = (0, 0, −1)` and poles of `P/Q` map to `(0, 0, 1)` without
//! overflow.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{CylinderGrid, FieldSample, Provenance};
use crate::geometry::{TargetKind, TargetManifold};
use crate::linalg::dot;

pub const MAX_DEGREE: usize = 8;

/// Below this `|P|² + |Q|²` the projective point `[P : Q]` is undefined.
const DEGENERATE_NORM: f64 = 1e-60;

/// Polynomial in `ζ` whose coefficients are affine in λ: the `k`-th entry is
/// `(c₀, c₁)` for the coefficient `c₀ + c₁·λ` of `ζ^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaPoly {
    coeffs: Vec<[Complex64; 2]>,
}

impl LambdaPoly {
    pub fn new(coeffs: Vec<[Complex64; 2]>) -> Self {
        let mut p = Self { coeffs };
        p.trim();
        p
    }

    /// Coefficients independent of λ.
    pub fn fixed(coeffs: &[f64]) -> Self {
        Self::new(
            coeffs
                .iter()
                .map(|&c| [Complex64::new(c, 0.0), Complex64::new(0.0, 0.0)])
                .collect(),
        )
    }

    fn trim(&mut self) {
        while self
            .coeffs
            .last()
            .is_some_and(|c| c[0].norm() == 0.0 && c[1].norm() == 0.0)
        {
            self.coeffs.pop();
        }
    }

    pub fn coeffs(&self) -> &[[Complex64; 2]] {
        &self.coeffs
    }

    /// Structural degree (highest power with a coefficient not identically zero).
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn at_lambda(&self, lambda: f64) -> Vec<Complex64> {
        self.coeffs.iter().map(|c| c[0] + c[1] * lambda).collect()
    }

    /// `ζ^d · p(1/ζ)`, i.e. the coefficient list reversed after padding to `d`.
    fn reversed(&self, d: usize) -> Self {
        let mut c = self.coeffs.clone();
        c.resize(d + 1, [Complex64::new(0.0, 0.0); 2]);
        c.reverse();
        Self::new(c)
    }
}

/// Horner evaluation of value and derivative.
fn horner(coeffs: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
    let mut v = Complex64::new(0.0, 0.0);
    let mut d = Complex64::new(0.0, 0.0);
    for c in coeffs.iter().rev() {
        d = d * z + v;
        v = v * z + c;
    }
    (v, d)
}

/// One sphere factor `σ([P(ζ) : Q(ζ)])` with `ζ = z` or `ζ = z̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMap {
    pub numerator: LambdaPoly,
    pub denominator: LambdaPoly,
    pub conjugate_input: bool,
}

impl FactorMap {
    pub fn new(numerator: LambdaPoly, denominator: LambdaPoly, conjugate_input: bool) -> Self {
        Self {
            numerator,
            denominator,
            conjugate_input,
        }
    }

    /// `σ(z + κλ/z)`, i.e. `P = z² + κλ`, `Q = z`; `σ(z)` itself when `κ = 0`.
    pub fn one_bubble(kappa: f64) -> Self {
        if kappa == 0.0 {
            return Self::new(LambdaPoly::fixed(&[0.0, 1.0]), LambdaPoly::fixed(&[1.0]), false);
        }
        let zero = Complex64::new(0.0, 0.0);
        let p = LambdaPoly::new(vec![
            [zero, Complex64::new(kappa, 0.0)],
            [zero, zero],
            [Complex64::new(1.0, 0.0), zero],
        ]);
        Self::new(p, LambdaPoly::fixed(&[0.0, 1.0]), false)
    }

    fn degree(&self) -> usize {
        self.numerator.degree().max(self.denominator.degree())
    }
}

/// Serialized form of one factor: coefficient rows `[re, im, re_λ, im_λ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorSpec {
    #[serde(rename = "P")]
    pub p: Vec<[f64; 4]>,
    #[serde(rename = "Q")]
    pub q: Vec<[f64; 4]>,
    #[serde(default)]
    pub conj: bool,
}

impl From<&FactorSpec> for FactorMap {
    fn from(s: &FactorSpec) -> Self {
        let conv = |rows: &[[f64; 4]]| {
            LambdaPoly::new(
                rows.iter()
                    .map(|r| [Complex64::new(r[0], r[1]), Complex64::new(r[2], r[3])])
                    .collect(),
            )
        };
        FactorMap::new(conv(&s.p), conv(&s.q), s.conj)
    }
}

impl From<&FactorMap> for FactorSpec {
    fn from(f: &FactorMap) -> Self {
        let conv = |p: &LambdaPoly| {
            p.coeffs()
                .iter()
                .map(|c| [c[0].re, c[0].im, c[1].re, c[1].im])
                .collect()
        };
        FactorSpec {
            p: conv(&f.numerator),
            q: conv(&f.denominator),
            conj: f.conjugate_input,
        }
    }
}

/// Value and cylinder derivatives of a family at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: Vec<f64>,
    pub d_t: Vec<f64>,
    pub d_theta: Vec<f64>,
}

/// A λ-parametrized harmonic map into `S²` (one factor) or `S² × S²` (two).
#[derive(Debug, Clone, PartialEq)]
pub struct RationalFamily {
    factors: Vec<FactorMap>,
}

/// Built-in family names and short descriptions.
pub const BUILTIN_FAMILIES: &[(&str, &str)] = &[
    ("identity", "sigma(z) into S^2; no bubble"),
    ("bubble1", "sigma(z + lambda/z) into S^2; one bubble at scale lambda"),
    (
        "bubble_kappa(k)",
        "(sigma(z + lambda/z), sigma(z + k*lambda/z)) into S^2 x S^2",
    ),
];

impl RationalFamily {
    pub fn new(factors: Vec<FactorMap>) -> Result<Self> {
        if factors.is_empty() || factors.len() > 2 {
            return Err(Error::InvalidFamily(format!(
                "need one or two factors, got {}",
                factors.len()
            )));
        }
        for (i, f) in factors.iter().enumerate() {
            if f.degree() > MAX_DEGREE {
                return Err(Error::InvalidFamily(format!(
                    "factor {i} has degree {} > {MAX_DEGREE}",
                    f.degree()
                )));
            }
            if f.numerator.is_zero() && f.denominator.is_zero() {
                return Err(Error::InvalidFamily(format!("factor {i} has P = Q = 0")));
            }
        }
        Ok(Self { factors })
    }

    pub fn from_specs(specs: &[FactorSpec]) -> Result<Self> {
        Self::new(specs.iter().map(FactorMap::from).collect())
    }

    pub fn to_specs(&self) -> Vec<FactorSpec> {
        self.factors.iter().map(FactorSpec::from).collect()
    }

    /// `σ(z)`.
    pub fn identity() -> Self {
        Self {
            factors: vec![FactorMap::new(
                LambdaPoly::fixed(&[0.0, 1.0]),
                LambdaPoly::fixed(&[1.0]),
                false,
            )],
        }
    }

    /// `σ(z + λ/z)`.
    pub fn bubble1() -> Self {
        Self {
            factors: vec![FactorMap::one_bubble(1.0)],
        }
    }

    /// `(σ(z + λ/z), σ(z + κλ/z))` into `S² × S²`.
    pub fn bubble_kappa(kappa: f64) -> Self {
        Self {
            factors: vec![FactorMap::one_bubble(1.0), FactorMap::one_bubble(kappa)],
        }
    }

    /// Resolves `identity`, `bubble1` or `bubble_kappa(κ)`.
    pub fn named(name: &str) -> Result<Self> {
        let name = name.trim();
        match name {
            "identity" => return Ok(Self::identity()),
            "bubble1" => return Ok(Self::bubble1()),
            _ => {}
        }
        if let Some(arg) = name.strip_prefix("bubble_kappa(").and_then(|r| r.strip_suffix(')')) {
            let kappa: f64 = arg
                .trim()
                .parse()
                .map_err(|_| Error::InvalidFamily(format!("bad kappa in {name:?}")))?;
            if !kappa.is_finite() {
                return Err(Error::InvalidFamily(format!("bad kappa in {name:?}")));
            }
            return Ok(Self::bubble_kappa(kappa));
        }
        Err(Error::InvalidFamily(format!("unknown family {name:?}")))
    }

    pub fn factors(&self) -> &[FactorMap] {
        &self.factors
    }

    /// `S²` for one factor, `S² × S²` for two.
    pub fn target(&self) -> TargetManifold {
        match self.factors.len() {
            1 => TargetManifold::sphere(2),
            _ => TargetManifold::product(2, 2),
        }
    }

    pub fn target_kind(&self) -> TargetKind {
        self.target().kind()
    }

    pub fn ambient_dim(&self) -> usize {
        3 * self.factors.len()
    }

    /// Checks that `P` and `Q` share no root for 100 λ values spread over
    /// `[lo, hi]` (log-spaced when both are positive).
    pub fn validate_lambda_range(&self, lo: f64, hi: f64) -> Result<()> {
        let samples: Vec<f64> = if lo == hi {
            vec![lo]
        } else if lo > 0.0 {
            let (a, b) = (lo.ln(), hi.ln());
            (0..100).map(|i| (a + (b - a) * i as f64 / 99.0).exp()).collect()
        } else {
            (0..100).map(|i| lo + (hi - lo) * i as f64 / 99.0).collect()
        };
        for (i, f) in self.factors.iter().enumerate() {
            for &lambda in &samples {
                let p = f.numerator.at_lambda(lambda);
                let q = f.denominator.at_lambda(lambda);
                if !coprime(&p, &q) {
                    return Err(Error::InvalidFamily(format!(
                        "factor {i}: P and Q share a root at lambda = {lambda:e}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Point of the target at `z` for the family member λ.
    pub fn eval(&self, lambda: f64, z: Complex64) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.ambient_dim());
        for f in &self.factors {
            let zeta = if f.conjugate_input { z.conj() } else { z };
            let (p, _) = horner(&f.numerator.at_lambda(lambda), zeta);
            let (q, _) = horner(&f.denominator.at_lambda(lambda), zeta);
            let n = p.norm_sqr() + q.norm_sqr();
            if n < DEGENERATE_NORM {
                return Err(degenerate(n, z, lambda));
            }
            let x = 2.0 * p * q.conj();
            out.extend_from_slice(&[x.re / n, x.im / n, (p.norm_sqr() - q.norm_sqr()) / n]);
        }
        Ok(out)
    }

    /// Value with `∂_t` and `∂_θ` at `z = e^{t + iθ}`.
    pub fn jet(&self, lambda: f64, z: Complex64) -> Result<Jet> {
        let l = self.ambient_dim();
        let mut jet = Jet {
            value: Vec::with_capacity(l),
            d_t: Vec::with_capacity(l),
            d_theta: Vec::with_capacity(l),
        };
        let i = Complex64::new(0.0, 1.0);
        for f in &self.factors {
            let (zeta, dzeta_dt, dzeta_dtheta) = if f.conjugate_input {
                let c = z.conj();
                (c, c, -i * c)
            } else {
                (z, z, i * z)
            };
            let (p, dp) = horner(&f.numerator.at_lambda(lambda), zeta);
            let (q, dq) = horner(&f.denominator.at_lambda(lambda), zeta);
            let n = p.norm_sqr() + q.norm_sqr();
            if n < DEGENERATE_NORM {
                return Err(degenerate(n, z, lambda));
            }
            let x = 2.0 * p * q.conj();
            let zc = p.norm_sqr() - q.norm_sqr();
            jet.value.extend_from_slice(&[x.re / n, x.im / n, zc / n]);
            for (dir, out) in [(dzeta_dt, &mut jet.d_t), (dzeta_dtheta, &mut jet.d_theta)] {
                let (dpv, dqv) = (dp * dir, dq * dir);
                let dn = 2.0 * (p.conj() * dpv + q.conj() * dqv).re;
                let dx = 2.0 * (dpv * q.conj() + p * dqv.conj());
                let dz = 2.0 * (p.conj() * dpv - q.conj() * dqv).re;
                let n2 = n * n;
                out.extend_from_slice(&[
                    (dx.re * n - x.re * dn) / n2,
                    (dx.im * n - x.im * dn) / n2,
                    (dz * n - zc * dn) / n2,
                ]);
            }
        }
        Ok(jet)
    }

    /// The family precomposed with `z ↦ 1/z̄`: substitutes `z ↦ 1/z` in every
    /// factor (clearing denominators by `z^deg`) and toggles conjugation.
    pub fn invert(&self) -> Self {
        let factors = self
            .factors
            .iter()
            .map(|f| {
                let d = f.degree();
                FactorMap::new(f.numerator.reversed(d), f.denominator.reversed(d), !f.conjugate_input)
            })
            .collect();
        Self { factors }
    }
}

fn degenerate(norm: f64, z: Complex64, lambda: f64) -> Error {
    Error::DegenerateFamily {
        norm,
        z: format!("{z}"),
        lambda,
    }
}

fn trimmed(c: &[Complex64]) -> &[Complex64] {
    let scale = c.iter().fold(0.0_f64, |m, v| m.max(v.norm()));
    let mut end = c.len();
    while end > 0 && c[end - 1].norm() <= 1e-14 * scale {
        end -= 1;
    }
    &c[..end]
}

/// True when `p` and `q` have no common root, judged by the Sylvester
/// resultant of the coefficient-normalized polynomials.
fn coprime(p: &[Complex64], q: &[Complex64]) -> bool {
    let (p, q) = (trimmed(p), trimmed(q));
    match (p.is_empty(), q.is_empty()) {
        (true, true) => return false,
        (true, false) => return q.len() == 1,
        (false, true) => return p.len() == 1,
        _ => {}
    }
    let (m, n) = (p.len() - 1, q.len() - 1);
    if m == 0 || n == 0 {
        return true;
    }
    let normalize = |c: &[Complex64]| -> Vec<Complex64> {
        let s = c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        c.iter().rev().map(|v| v / s).collect()
    };
    let (pn, qn) = (normalize(p), normalize(q));
    let size = m + n;
    let mut syl = DMatrix::<Complex64>::zeros(size, size);
    for r in 0..n {
        for (k, c) in pn.iter().enumerate() {
            syl[(r, r + k)] = *c;
        }
    }
    for r in 0..m {
        for (k, c) in qn.iter().enumerate() {
            syl[(n + r, r + k)] = *c;
        }
    }
    syl.determinant().norm() > 1e-12
}

/// Samples the family on the grid with closed-form derivatives.
pub fn cylinder_sample(family: &RationalFamily, lambda: f64, grid: &CylinderGrid) -> Result<FieldSample> {
    let l = family.ambient_dim();
    let row_len = grid.n_theta * l;
    let rows: Vec<Result<[Vec<f64>; 3]>> = (0..grid.n_t)
        .into_par_iter()
        .map(|j| {
            let t = grid.t(j);
            let mut row = [
                Vec::with_capacity(row_len),
                Vec::with_capacity(row_len),
                Vec::with_capacity(row_len),
            ];
            for k in 0..grid.n_theta {
                let z = Complex64::from_polar(t.exp(), grid.theta(k));
                let jet = family.jet(lambda, z)?;
                row[0].extend_from_slice(&jet.value);
                row[1].extend_from_slice(&jet.d_t);
                row[2].extend_from_slice(&jet.d_theta);
            }
            Ok(row)
        })
        .collect();
    let mut values = Vec::with_capacity(grid.len() * l);
    let mut du_dt = Vec::with_capacity(grid.len() * l);
    let mut du_dtheta = Vec::with_capacity(grid.len() * l);
    for row in rows {
        let [v, dt, dth] = row?;
        values.extend(v);
        du_dt.extend(dt);
        du_dtheta.extend(dth);
    }
    FieldSample::from_parts(*grid, l, values, du_dt, du_dtheta, Provenance::Analytic)
}

/// Energy and oscillation over the neck window `[log(λ/δ), log δ]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeckDiagnostics {
    pub neck_energy: f64,
    pub neck_oscillation: f64,
    pub dirichlet_energy: f64,
}

/// Rows of `grid` inside `[lo, hi]` as an inclusive index range.
pub fn rows_in_window(grid: &CylinderGrid, lo: f64, hi: f64) -> Option<(usize, usize)> {
    let eps = 1e-9 * grid.dt();
    let rows: Vec<usize> = (0..grid.n_t)
        .filter(|&j| {
            let t = grid.t(j);
            t >= lo - eps && t <= hi + eps
        })
        .collect();
    Some((*rows.first()?, *rows.last()?))
}

pub fn neck_diagnostics(sample: &FieldSample, lambda: f64, delta: f64) -> Result<NeckDiagnostics> {
    let grid = sample.grid();
    let (lo, hi) = ((lambda / delta).ln(), delta.ln());
    let (j0, j1) = match rows_in_window(grid, lo, hi) {
        Some((a, b)) if b > a => (a, b),
        Some(_) => return Err(Error::EmptyWindow { lo, hi, rows: 1 }),
        None => return Err(Error::EmptyWindow { lo, hi, rows: 0 }),
    };
    let dim = sample.dim();
    let window = &sample.values()[sample.offset(j0, 0)..sample.offset(j1, 0) + grid.n_theta * dim];
    Ok(NeckDiagnostics {
        neck_energy: sample.dirichlet_energy_rows(j0, j1),
        neck_oscillation: diameter(window, dim),
        dirichlet_energy: sample.dirichlet_energy(),
    })
}

/// Largest pairwise distance among the points packed in `points`.
///
/// Points are visited in decreasing distance from the centroid; a pair is
/// skipped once the triangle bound `r_i + r_j` cannot beat the best so far.
pub fn diameter(points: &[f64], dim: usize) -> f64 {
    let n = points.len() / dim;
    if n < 2 {
        return 0.0;
    }
    let pt = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroid = vec![0.0; dim];
    for i in 0..n {
        for (c, v) in centroid.iter_mut().zip(pt(i)) {
            *c += v / n as f64;
        }
    }
    let mut order: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let d: f64 = pt(i).iter().zip(&centroid).map(|(a, b)| (a - b).powi(2)).sum();
            (d.sqrt(), i)
        })
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut best2 = 0.0_f64;
    for a in 0..n {
        let (ra, ia) = order[a];
        if 2.0 * ra <= best2.sqrt() {
            break;
        }
        for &(rb, ib) in &order[a + 1..] {
            if ra + rb <= best2.sqrt() {
                break;
            }
            let d2: f64 = pt(ia).iter().zip(pt(ib)).map(|(x, y)| (x - y).powi(2)).sum();
            best2 = best2.max(d2);
        }
    }
    best2.sqrt()
}

/// Largest deviation from weak conformality at any node:
/// `max(| |u_t| − |u_θ| |, |u_t · u_θ|)`.
pub fn conformality_defect(sample: &FieldSample) -> f64 {
    let g = sample.grid();
    let mut worst = 0.0_f64;
    for j in 0..g.n_t {
        for k in 0..g.n_theta {
            let (a, b) = (sample.dt_at(j, k), sample.dtheta_at(j, k));
            let d1 = (dot(a, a).sqrt() - dot(b, b).sqrt()).abs();
            let d2 = dot(a, b).abs();
            worst = worst.max(d1).max(d2);
        }
    }
    worst
}
