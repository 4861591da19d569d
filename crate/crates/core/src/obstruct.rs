//! Circle integrals and coefficient identities of the neck expansion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{CylinderGrid, FieldSample};
use crate::geometry::{AlgebraGenerator, TargetManifold};
use crate::linalg::{dot, norm, slope, sub};
use crate::neck::{fit_first_order, neck_center, NeckExpansion, WindowPolicy, NEAR_MANIFOLD};
use crate::rational::{cylinder_sample, RationalFamily};

/// Rows with `|q|` (or `|eq15|`) at or below this are left out of exponent fits.
pub const EXPONENT_FLOOR: f64 = 1e-13;

/// `(P1, P2)` on the row nearest `t`:
/// `P1 = ∫(|u_t|² − |u_θ|²) dθ` and `P2 = ∫ u_t · u_θ dθ`.
pub fn pohozaev(s: &FieldSample, t: f64) -> (f64, f64) {
    pohozaev_row(s, s.grid().nearest_row(t))
}

pub fn pohozaev_row(s: &FieldSample, j: usize) -> (f64, f64) {
    let g = s.grid();
    let (mut p1, mut p2) = (0.0, 0.0);
    for k in 0..g.n_theta {
        let (a, b) = (s.dt_at(j, k), s.dtheta_at(j, k));
        p1 += dot(a, a) - dot(b, b);
        p2 += dot(a, b);
    }
    (p1 * g.dtheta(), p2 * g.dtheta())
}

/// `∫ ∂_t u · B u dθ` on the row nearest `t`.
pub fn conservation(s: &FieldSample, b: &AlgebraGenerator, t: f64) -> Result<f64> {
    conservation_row(s, b, s.grid().nearest_row(t))
}

pub fn conservation_row(s: &FieldSample, b: &AlgebraGenerator, j: usize) -> Result<f64> {
    if b.dim() != s.dim() {
        return Err(Error::DimensionMismatch {
            expected: s.dim(),
            got: b.dim(),
        });
    }
    let g = s.grid();
    let mut bu = vec![0.0; s.dim()];
    let mut sum = 0.0;
    for k in 0..g.n_theta {
        b.apply_into(s.value(j, k), &mut bu);
        sum += dot(s.dt_at(j, k), &bu);
    }
    Ok(sum * g.dtheta())
}

/// Largest `|conservation|` over a generator set on one row.
pub fn conservation_max_row(s: &FieldSample, basis: &[AlgebraGenerator], j: usize) -> Result<f64> {
    basis
        .iter()
        .map(|b| conservation_row(s, b, j).map(f64::abs))
        .try_fold(0.0, |m, v| Ok(f64::max(m, v?)))
}

/// Tangential and normal parts of `q` at the projection of `p`.
pub fn split_q(e: &NeckExpansion, target: &TargetManifold) -> Result<(Vec<f64>, Vec<f64>)> {
    let pp = target.project(&e.p)?;
    let distance = norm(&sub(&e.p, &pp));
    if distance > NEAR_MANIFOLD {
        return Err(Error::NotNearManifold {
            distance,
            limit: NEAR_MANIFOLD,
        });
    }
    let mut q_norm = vec![0.0; e.q.len()];
    for n in target.unit_normals(&pp)? {
        let s = dot(&e.q, &n);
        for (o, v) in q_norm.iter_mut().zip(&n) {
            *o += s * v;
        }
    }
    Ok((sub(&e.q, &q_norm), q_norm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstructionReport {
    pub lambda: f64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub q_norm: f64,
    pub poho1: f64,
    pub poho2: f64,
    pub eq15: f64,
    pub eq16: f64,
    pub conservation_max: f64,
    pub q_norm_part: f64,
    pub q_tan_part: f64,
    pub dist_p: f64,
    pub tangent_identity_max: f64,
}

/// Evaluates every identity at `t₀ = ½ log λ` (the nearest grid row).
pub fn obstruction_report(e: &NeckExpansion, s: &FieldSample, target: &TargetManifold) -> Result<ObstructionReport> {
    let lambda = e.lambda;
    let (a, b, c, d, q, p) = (&e.a, &e.b, &e.c, &e.d, &e.q, &e.p);
    let eq15 = dot(a, c) + dot(b, d);
    let eq16 = dot(a, d) - dot(b, c);
    let basis = target.isometry_algebra_basis();
    let row = s.grid().nearest_row(neck_center(lambda));
    let conservation_max = conservation_max_row(s, &basis, row)?;
    let (q_tan, q_nrm) = split_q(e, target)?;
    let mut tangent_identity_max = 0.0_f64;
    for g in &basis {
        let v = dot(q, &g.apply(p)) + lambda * (dot(a, &g.apply(c)) + dot(b, &g.apply(d)));
        tangent_identity_max = tangent_identity_max.max(v.abs());
    }
    Ok(ObstructionReport {
        lambda,
        p: p.clone(),
        q: q.clone(),
        a: a.clone(),
        b: b.clone(),
        c: c.clone(),
        d: d.clone(),
        q_norm: norm(q),
        poho1: dot(q, q) - 2.0 * lambda * eq15,
        poho2: eq16,
        eq15,
        eq16,
        conservation_max,
        q_norm_part: norm(&q_nrm),
        q_tan_part: norm(&q_tan),
        dist_p: target.defining_norm(p),
        tangent_identity_max,
    })
}

/// Grid and window settings shared by every row of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub policy: WindowPolicy,
    pub dt: f64,
    pub n_theta: usize,
}

impl SweepSettings {
    /// Grid centred on `t₀` covering the fit window.
    pub fn grid(&self, lambda: f64) -> Result<CylinderGrid> {
        CylinderGrid::centered(
            neck_center(lambda),
            self.policy.half_width(lambda),
            self.dt,
            self.n_theta,
        )
    }
}

/// Samples, fits and reports one family member.
pub fn analyze_member(
    family: &RationalFamily,
    lambda: f64,
    settings: &SweepSettings,
) -> Result<(FieldSample, NeckExpansion, ObstructionReport)> {
    family.validate_lambda_range(lambda, lambda)?;
    let target = family.target();
    let sample = cylinder_sample(family, lambda, &settings.grid(lambda)?)?;
    let expansion = fit_first_order(&sample, lambda, &settings.policy)?;
    let report = obstruction_report(&expansion, &sample, &target)?;
    Ok((sample, expansion, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFailure {
    pub lambda: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Successful rows, λ strictly decreasing.
    pub rows: Vec<ObstructionReport>,
    pub failures: Vec<RowFailure>,
    pub partial: bool,
    /// Log-log slope of `|q|` against λ.
    pub q_exponent: Option<f64>,
    /// Log-log slope of `|eq15|` against λ.
    pub eq15_exponent: Option<f64>,
}

pub const SWEEP_CSV_HEADER: &str = "lambda,q_norm,eq15,eq16,poho1,poho2,cons_max";

pub fn check_sweep_lambdas(lambdas: &[f64], delta: f64) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::Config("empty lambda list".into()));
    }
    for w in lambdas.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::Config(format!(
                "lambda list must be strictly decreasing ({} then {})",
                w[0], w[1]
            )));
        }
    }
    for &l in lambdas {
        if !(l > 0.0 && l <= delta * delta) {
            return Err(Error::Config(format!(
                "lambda = {l} violates 0 < lambda <= delta^2 = {}",
                delta * delta
            )));
        }
    }
    Ok(())
}

/// Runs one analysis per λ (concurrently) and fits the scaling exponents.
pub fn lambda_sweep(family: &RationalFamily, lambdas: &[f64], settings: &SweepSettings) -> Result<SweepResult> {
    check_sweep_lambdas(lambdas, settings.policy.delta)?;
    let outcomes: Vec<Result<ObstructionReport>> = lambdas
        .par_iter()
        .map(|&l| analyze_member(family, l, settings).map(|(_, _, r)| r))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (&lambda, o) in lambdas.iter().zip(outcomes) {
        match o {
            Ok(r) => rows.push(r),
            Err(e) => failures.push(RowFailure {
                lambda,
                error: e.to_string(),
            }),
        }
    }
    let exponent = |f: &dyn Fn(&ObstructionReport) -> f64| {
        let (x, y): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| f(r).abs() > EXPONENT_FLOOR)
            .map(|r| (r.lambda.ln(), f(r).abs().ln()))
            .unzip();
        slope(&x, &y)
    };
    Ok(SweepResult {
        q_exponent: exponent(&|r| r.q_norm),
        eq15_exponent: exponent(&|r| r.eq15),
        partial: !failures.is_empty(),
        rows,
        failures,
    })
}

/// `project(u + ε (t − t_ref) B u)` with finite-difference derivatives: a
/// non-harmonic perturbation whose conservation integral is nonzero.
pub fn perturbed_sample(
    s: &FieldSample,
    target: &TargetManifold,
    b: &AlgebraGenerator,
    amplitude: f64,
    t_ref: f64,
) -> Result<FieldSample> {
    if b.dim() != s.dim() {
        return Err(Error::DimensionMismatch {
            expected: s.dim(),
            got: b.dim(),
        });
    }
    let g = *s.grid();
    let dim = s.dim();
    let mut values = s.values().to_vec();
    let mut bu = vec![0.0; dim];
    for j in 0..g.n_t {
        let w = amplitude * (g.t(j) - t_ref);
        for k in 0..g.n_theta {
            let o = s.offset(j, k);
            b.apply_into(s.value(j, k), &mut bu);
            let x = &mut values[o..o + dim];
            for (xi, bi) in x.iter_mut().zip(&bu) {
                *xi += w * bi;
            }
            target.project_in_place(x)?;
        }
    }
    FieldSample::from_values(g, dim, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::cylinder_sample;

    fn grid() -> CylinderGrid {
        CylinderGrid::new(-6.0, -3.0, 301, 256).unwrap()
    }

    fn expansion(p: Vec<f64>, q: Vec<f64>) -> NeckExpansion {
        NeckExpansion {
            lambda: 1e-4,
            p,
            q,
            a: vec![0.0; 3],
            b: vec![0.0; 3],
            c: vec![0.0; 3],
            d: vec![0.0; 3],
            alpha_hat: None,
            window: (-6.0, -3.0),
            residual_sup: vec![],
        }
    }

    #[test]
    fn holomorphic_samples_are_pohozaev_free() {
        let s = cylinder_sample(&RationalFamily::bubble1(), 1e-4, &grid()).unwrap();
        for t in [-6.0, -4.6, -3.0] {
            let (p1, p2) = pohozaev(&s, t);
            assert!(p1.abs() < 1e-10 && p2.abs() < 1e-10);
        }
        let c = FieldSample::constant(grid(), &[0.0, 0.0, 1.0]);
        assert_eq!(pohozaev(&c, -4.0), (0.0, 0.0));
    }

    #[test]
    fn conservation_on_harmonic_samples() {
        let target = TargetManifold::product(2, 2);
        let s = cylinder_sample(&RationalFamily::bubble_kappa(0.5), 1e-4, &grid()).unwrap();
        for b in target.isometry_algebra_basis() {
            for t in [-5.5, -4.6, -3.2] {
                assert!(conservation(&s, &b, t).unwrap().abs() < 1e-8);
            }
        }
        let c = FieldSample::constant(grid(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(
            conservation(&c, &target.isometry_algebra_basis()[2], -4.0).unwrap(),
            0.0
        );
        let wrong = TargetManifold::sphere(2).isometry_algebra_basis();
        assert!(matches!(
            conservation(&s, &wrong[0], -4.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn conservation_is_linear_in_the_generator() {
        let target = TargetManifold::sphere(2);
        let s = cylinder_sample(&RationalFamily::bubble1(), 1e-3, &grid()).unwrap();
        let basis = target.isometry_algebra_basis();
        let (al, be) = (0.7, -1.3);
        let combo = basis[0].combine(al, &basis[2], be).unwrap();
        let lhs = conservation(&s, &combo, -4.0).unwrap();
        let rhs = al * conservation(&s, &basis[0], -4.0).unwrap() + be * conservation(&s, &basis[2], -4.0).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn perturbation_is_detected() {
        let target = TargetManifold::sphere(2);
        let s = cylinder_sample(&RationalFamily::bubble1(), 1e-4, &grid()).unwrap();
        let basis = target.isometry_algebra_basis();
        let u = perturbed_sample(&s, &target, &basis[1], 0.01, -4.6).unwrap();
        let worst = basis
            .iter()
            .map(|b| conservation(&u, b, -4.0).unwrap().abs())
            .fold(0.0, f64::max);
        assert!(worst > 1e-4, "{worst:e}");
    }

    #[test]
    fn split_examples() {
        let s2 = TargetManifold::sphere(2);
        let (t, n) = split_q(&expansion(vec![0.0, 0.0, -1.0], vec![0.0, 0.0, 0.5]), &s2).unwrap();
        assert_eq!(t, vec![0.0, 0.0, 0.0]);
        assert_eq!(n, vec![0.0, 0.0, 0.5]);
        let (t, n) = split_q(&expansion(vec![0.0, 0.0, -1.0], vec![0.3, 0.0, 0.0]), &s2).unwrap();
        assert_eq!(t, vec![0.3, 0.0, 0.0]);
        assert_eq!(n, vec![0.0, 0.0, 0.0]);
        assert!(matches!(
            split_q(&expansion(vec![0.0, 0.0, -1.01], vec![0.0; 3]), &s2),
            Err(Error::NotNearManifold { .. })
        ));
    }

    #[test]
    fn bubble1_report() {
        let settings = SweepSettings {
            policy: WindowPolicy::new(0.1),
            dt: 0.01,
            n_theta: 256,
        };
        let lambda = 1e-4;
        let (_, _, r) = analyze_member(&RationalFamily::bubble1(), lambda, &settings).unwrap();
        assert!(r.eq15.abs() <= 0.05 && r.eq16.abs() <= 0.05 && r.poho2.abs() <= 0.05);
        assert!(r.dist_p <= 10.0 * lambda);
        assert!(r.q_norm_part <= 10.0 * lambda && r.q_tan_part <= 10.0 * lambda);
        assert!((r.q_norm_part.powi(2) + r.q_tan_part.powi(2) - r.q_norm.powi(2)).abs() <= 1e-10);
        assert!(r.conservation_max < 1e-8);
        assert!(r.tangent_identity_max <= 10.0 * lambda);
    }

    #[test]
    fn identity_report_is_small() {
        let settings = SweepSettings {
            policy: WindowPolicy::new(0.1),
            dt: 0.01,
            n_theta: 256,
        };
        let (_, _, r) = analyze_member(&RationalFamily::identity(), 1e-6, &settings).unwrap();
        for v in [
            r.eq15,
            r.eq16,
            r.poho1,
            r.poho2,
            r.tangent_identity_max,
            r.conservation_max,
        ] {
            assert!(v.abs() <= 1e-3, "{r:?}");
        }
    }

    #[test]
    fn sweep_preconditions() {
        assert!(check_sweep_lambdas(&[1e-3, 1e-2], 0.1).is_err());
        assert!(check_sweep_lambdas(&[0.02, 1e-3], 0.1).is_err());
        assert!(check_sweep_lambdas(&[1e-2, 1e-3, 1e-4], 0.1).is_ok());
    }
}
