use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use necklab::field::Provenance;
use necklab::neck::{fit_first_order, fourier_modes_k, ExpansionModel, NeckExpansion, WindowPolicy};
use necklab::obstruct::{conservation_row, SweepSettings};
use necklab::planes::{principal_angles, random_orthogonal, sample_constrained};
use necklab::{cylinder_sample, CylinderGrid, FieldSample, RationalFamily, TargetManifold};

fn settings() -> SweepSettings {
    SweepSettings {
        policy: WindowPolicy::new(0.1),
        dt: 0.02,
        n_theta: 64,
    }
}

fn coefficients(e: &NeckExpansion) -> Vec<f64> {
    [&e.p, &e.q, &e.a, &e.b, &e.c, &e.d]
        .iter()
        .flat_map(|v| v.iter().copied())
        .collect()
}

fn max_dev(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Applies `f` to every value and derivative vector of the sample.
fn map_sample(s: &FieldSample, f: impl Fn(&[f64]) -> Vec<f64>) -> FieldSample {
    let dim = s.dim();
    let apply = |v: &[f64]| v.chunks(dim).flat_map(&f).collect::<Vec<f64>>();
    FieldSample::from_parts(
        *s.grid(),
        dim,
        apply(s.values()),
        apply(s.du_dt()),
        apply(s.du_dtheta()),
        Provenance::Analytic,
    )
    .unwrap()
}

fn vec3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0_f64, 3)
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 24,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn refitting_a_fitted_model_is_idempotent(
        log_lambda in -9.0..-4.6_f64,
        p in vec3(), q in vec3(), a in vec3(), b in vec3(), c in vec3(), d in vec3(),
    ) {
        let lambda = log_lambda.exp();
        let s = settings();
        let grid = s.grid(lambda).unwrap();
        let e = NeckExpansion {
            lambda, p, q, a, b, c, d,
            alpha_hat: None,
            window: s.policy.window(lambda),
            residual_sup: Vec::new(),
        };
        let model = ExpansionModel::first_order(&e).sample(&grid).unwrap();
        let fit = fit_first_order(&model, lambda, &s.policy).unwrap();
        prop_assert!(max_dev(&coefficients(&fit), &coefficients(&e)) <= 1e-10);
        let again = ExpansionModel::first_order(&fit).sample(&grid).unwrap();
        let refit = fit_first_order(&again, lambda, &s.policy).unwrap();
        prop_assert!(max_dev(&coefficients(&refit), &coefficients(&fit)) <= 1e-10);
    }

    #[test]
    fn fit_commutes_with_target_rotations(log_lambda in -9.0..-4.6_f64, seed in any::<u64>()) {
        let lambda = log_lambda.exp();
        let s = settings();
        let sample = cylinder_sample(&RationalFamily::bubble1(), lambda, &s.grid(lambda).unwrap()).unwrap();
        let r: DMatrix<f64> = random_orthogonal(3, &mut ChaCha8Rng::seed_from_u64(seed));
        let rotate = |v: &[f64]| (&r * DMatrix::from_column_slice(3, 1, v)).as_slice().to_vec();
        let base = fit_first_order(&sample, lambda, &s.policy).unwrap();
        let turned = fit_first_order(&map_sample(&sample, rotate), lambda, &s.policy).unwrap();
        for (x, y) in [(&base.p, &turned.p), (&base.q, &turned.q), (&base.a, &turned.a),
                       (&base.b, &turned.b), (&base.c, &turned.c), (&base.d, &turned.d)] {
            prop_assert!(max_dev(&rotate(x), y) <= 1e-10);
        }
    }

    #[test]
    fn fit_is_linear_in_the_sample(log_lambda in -9.0..-4.6_f64, scale in 0.1..10.0_f64) {
        let lambda = log_lambda.exp();
        let s = settings();
        let sample = cylinder_sample(&RationalFamily::bubble1(), lambda, &s.grid(lambda).unwrap()).unwrap();
        let base = fit_first_order(&sample, lambda, &s.policy).unwrap();
        let scaled = map_sample(&sample, |v| v.iter().map(|x| scale * x).collect());
        let fit = fit_first_order(&scaled, lambda, &s.policy).unwrap();
        let expect: Vec<f64> = coefficients(&base).iter().map(|x| scale * x).collect();
        prop_assert!(max_dev(&coefficients(&fit), &expect) <= 1e-10 * scale);
    }

    #[test]
    fn conservation_is_linear_in_the_generator(
        kappa in -2.0..2.0_f64,
        i in 0usize..6, j in 0usize..6,
        alpha in -3.0..3.0_f64, beta in -3.0..3.0_f64,
    ) {
        let fam = RationalFamily::bubble_kappa(kappa);
        let grid = CylinderGrid::new(-6.0, -3.0, 31, 64).unwrap();
        let s = cylinder_sample(&fam, 1e-3, &grid).unwrap();
        let basis = fam.target().isometry_algebra_basis();
        let combined = basis[i].combine(alpha, &basis[j], beta).unwrap();
        for row in [0, 15, 30] {
            let lhs = conservation_row(&s, &combined, row).unwrap();
            let rhs = alpha * conservation_row(&s, &basis[i], row).unwrap()
                + beta * conservation_row(&s, &basis[j], row).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }
    }

    #[test]
    fn modes_match_direct_sums(coeffs in prop::collection::vec(-1.0..1.0_f64, 2 * 5 * 3)) {
        let grid = CylinderGrid::new(0.0, 1.0, 3, 64).unwrap();
        let n = grid.n_theta;
        let u = |th: f64, comp: usize| -> f64 {
            (0..5).map(|k| {
                let o = (comp * 5 + k) * 2;
                coeffs[o] * (k as f64 * th).cos() + coeffs[o + 1] * (k as f64 * th).sin()
            }).sum()
        };
        let mut values = Vec::new();
        for _ in 0..grid.n_t {
            for k in 0..n {
                values.extend((0..3).map(|c| u(grid.theta(k), c)));
            }
        }
        let s = FieldSample::from_values(grid, 3, values).unwrap();
        let modes = fourier_modes_k(&s, 4);
        let mut energy = 0.0;
        for k in -4isize..=4 {
            let m = modes.mode(0, k);
            for (c, mc) in m.iter().enumerate() {
                let direct: Complex64 = (0..n)
                    .map(|q| u(grid.theta(q), c) * Complex64::from_polar(1.0, -(k as f64) * grid.theta(q)))
                    .sum::<Complex64>() / n as f64;
                prop_assert!((mc - direct).norm() <= 1e-12);
                energy += mc.norm_sqr();
            }
        }
        let mean_sq: f64 = (0..n).map(|q| (0..3).map(|c| u(grid.theta(q), c).powi(2)).sum::<f64>()).sum::<f64>() / n as f64;
        prop_assert!((energy - mean_sq).abs() <= 1e-12 * (1.0 + mean_sq));
    }

    #[test]
    fn projection_is_idempotent(x in prop::collection::vec(-3.0..3.0_f64, 6)) {
        prop_assume!(x[..3].iter().map(|v| v * v).sum::<f64>() > 1e-6);
        prop_assume!(x[3..].iter().map(|v| v * v).sum::<f64>() > 1e-6);
        for (target, v) in [(TargetManifold::sphere(2), &x[..3]), (TargetManifold::product(2, 2), &x[..])] {
            let once = target.project(v).unwrap();
            let twice = target.project(&once).unwrap();
            prop_assert!(max_dev(&once, &twice) <= 2e-15);
            prop_assert!(target.defining_norm(&once) <= 1e-14);
        }
    }

    #[test]
    fn principal_angles_are_rotation_invariant(seed in any::<u64>(), n in 2usize..7) {
        let sample = &sample_constrained(n, 1, seed).unwrap()[0];
        let r = random_orthogonal(n, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5555));
        let (a1, a2) = principal_angles(&sample.quadruple).unwrap();
        let (b1, b2) = principal_angles(&sample.quadruple.transform(&r)).unwrap();
        prop_assert!((a1 - b1).abs() <= 1e-9 && (a2 - b2).abs() <= 1e-9);
        prop_assert!(0.0 <= a1 && a1 <= a2 && a2 <= std::f64::consts::FRAC_PI_2 + 1e-12);
    }
}
