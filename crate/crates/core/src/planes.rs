//! Pairs of planes spanned by `(a, b)` and `(c, d)`: conformality and
//! obstruction residuals, principal angles and classification.

use nalgebra::{DMatrix, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

/// Tolerance for exact or synthetic quadruples.
pub const SYNTHETIC_TOL: f64 = 1e-9;
/// Tolerance for quadruples taken from fitted expansions.
pub const FITTED_TOL: f64 = 0.05;
/// Smallest accepted `sin²` of the angle between the two spanning vectors.
pub const MIN_GRAM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneQuadruple {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `|a| − |b|`
    pub ab_length: f64,
    /// `a · b`
    pub ab_dot: f64,
    /// `|c| − |d|`
    pub cd_length: f64,
    /// `c · d`
    pub cd_dot: f64,
    /// `a · c + b · d`
    pub eq15: f64,
    /// `a · d − b · c`
    pub eq16: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classification {
    CoincidentOppositeOrientation,
    Isoclinic { alpha: f64 },
    Generic,
    NotAdmissible { residual: String, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneReport {
    pub residuals: Residuals,
    pub angles: Option<(f64, f64)>,
    pub classification: Classification,
    pub cos_alpha: Option<f64>,
}

impl PlaneQuadruple {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, d: Vec<f64>) -> Self {
        Self { a, b, c, d }
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.a.len();
        for v in [&self.b, &self.c, &self.d] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
        }
        if n < 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: n });
        }
        for (name, v) in [("a", &self.a), ("b", &self.b), ("c", &self.c), ("d", &self.d)] {
            let len = norm(v);
            if !(len > 0.0 && len.is_finite()) {
                return Err(Error::Nondegeneracy(format!("|{name}| = {len}")));
            }
        }
        Ok(())
    }

    /// Applies `m` to all four vectors.
    pub fn transform(&self, m: &DMatrix<f64>) -> Self {
        let f = |v: &Vec<f64>| (m * nalgebra::DVector::from_column_slice(v)).as_slice().to_vec();
        Self::new(f(&self.a), f(&self.b), f(&self.c), f(&self.d))
    }
}

pub fn residuals(qd: &PlaneQuadruple) -> Result<Residuals> {
    qd.check()?;
    let (a, b, c, d) = (&qd.a, &qd.b, &qd.c, &qd.d);
    Ok(Residuals {
        ab_length: norm(a) - norm(b),
        ab_dot: dot(a, b),
        cd_length: norm(c) - norm(d),
        cd_dot: dot(c, d),
        eq15: dot(a, c) + dot(b, d),
        eq16: dot(a, d) - dot(b, c),
    })
}

/// Oriented orthonormal basis of `span(x, y)` by twice-applied Gram–Schmidt.
fn orthonormal_pair(x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (nx, ny) = (norm(x), norm(y));
    let cos = dot(x, y) / (nx * ny);
    let gram = 1.0 - cos * cos;
    if !(gram > MIN_GRAM) {
        return Err(Error::DegeneratePlane { gram });
    }
    let e1: Vec<f64> = x.iter().map(|v| v / nx).collect();
    let mut e2 = y.to_vec();
    for _ in 0..2 {
        let s = dot(&e2, &e1);
        e2.iter_mut().zip(&e1).for_each(|(v, u)| *v -= s * u);
    }
    let n2 = norm(&e2);
    e2.iter_mut().for_each(|v| *v /= n2);
    Ok((e1, e2))
}

/// Principal angles `α₁ ≤ α₂` between `span(a, b)` and `span(c, d)`.
///
/// Cosines come from the singular values of `Q₁ᵀQ₂`, sines from those of
/// `Q₂ − Q₁Q₁ᵀQ₂`; combining both keeps small and near-right angles accurate.
pub fn principal_angles(qd: &PlaneQuadruple) -> Result<(f64, f64)> {
    qd.check()?;
    let (u1, u2) = orthonormal_pair(&qd.a, &qd.b)?;
    let (v1, v2) = orthonormal_pair(&qd.c, &qd.d)?;
    let m = Matrix2::new(dot(&u1, &v1), dot(&u1, &v2), dot(&u2, &v1), dot(&u2, &v2));
    let mut cos = m.singular_values();
    if cos[0] < cos[1] {
        cos.swap_rows(0, 1);
    }
    let n = qd.dim();
    let resid = DMatrix::from_fn(n, 2, |i, j| {
        let v = if j == 0 { &v1 } else { &v2 };
        v[i] - u1[i] * m[(0, j)] - u2[i] * m[(1, j)]
    });
    let mut sin: Vec<f64> = resid.singular_values().iter().copied().collect();
    sin.sort_by(f64::total_cmp);
    let angle = |c: f64, s: f64| s.atan2(c);
    let (a1, a2) = (angle(cos[0], sin[0]), angle(cos[1], sin[1]));
    Ok((a1.min(a2), a1.max(a2)))
}

/// Sign of the determinant of `(c, d)` in the oriented basis of `span(a, b)`.
pub fn orientation(qd: &PlaneQuadruple) -> Result<f64> {
    let (u1, u2) = orthonormal_pair(&qd.a, &qd.b)?;
    let det = dot(&u1, &qd.c) * dot(&u2, &qd.d) - dot(&u2, &qd.c) * dot(&u1, &qd.d);
    Ok(det.signum())
}

/// Residuals normalised by the lengths they are built from.
fn relative_residuals(qd: &PlaneQuadruple, r: &Residuals) -> [(&'static str, f64); 6] {
    let (na, nb, nc, nd) = (norm(&qd.a), norm(&qd.b), norm(&qd.c), norm(&qd.d));
    let cross = (na * nc).max(nb * nd);
    [
        ("ab_length", r.ab_length / na.max(nb)),
        ("ab_dot", r.ab_dot / (na * nb)),
        ("cd_length", r.cd_length / nc.max(nd)),
        ("cd_dot", r.cd_dot / (nc * nd)),
        ("eq15", r.eq15 / cross),
        ("eq16", r.eq16 / cross),
    ]
}

pub fn classify(qd: &PlaneQuadruple, tol: f64) -> Result<PlaneReport> {
    let r = residuals(qd)?;
    for (name, value) in relative_residuals(qd, &r) {
        if !(value.abs() <= tol) {
            return Ok(PlaneReport {
                residuals: r,
                angles: None,
                classification: Classification::NotAdmissible {
                    residual: name.to_string(),
                    value,
                },
                cos_alpha: None,
            });
        }
    }
    let (a1, a2) = principal_angles(qd)?;
    let classification = if a2 <= tol && orientation(qd)? < 0.0 {
        Classification::CoincidentOppositeOrientation
    } else if (a2 - a1).abs() <= tol {
        Classification::Isoclinic { alpha: 0.5 * (a1 + a2) }
    } else {
        Classification::Generic
    };
    let cos_alpha = match classification {
        Classification::Isoclinic { alpha } => Some(alpha.cos()),
        _ => None,
    };
    Ok(PlaneReport {
        residuals: r,
        angles: Some((a1, a2)),
        classification,
        cos_alpha,
    })
}

/// A sampled admissible quadruple with its adapted-frame data.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedSample {
    pub quadruple: PlaneQuadruple,
    /// Coordinates of `c` in the adapted frame.
    pub c_adapted: Vec<f64>,
    /// `√(c₁² + c₂²) / |c|`.
    pub cos_alpha: f64,
}

/// Random orthonormal `n × n` matrix from the QR factorisation of a Gaussian
/// matrix, with the sign convention that makes it Haar distributed.
pub fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Quadruples satisfying every conformality and obstruction identity.
///
/// In an adapted orthonormal frame `a = s e₁`, `b = s e₂`,
/// `c = (c₁, c₂, c₃, c₄, 0, …)` and `d = (c₂, −c₁, ∓c₄, ±c₃, 0, …)`; for
/// `n = 3` the third coordinates vanish. The frame is a random rotation.
pub fn sample_constrained(n: usize, count: usize, seed: u64) -> Result<Vec<ConstrainedSample>> {
    if n < 2 {
        return Err(Error::Config(format!("dimension must be >= 2, got {n}")));
    }
    if count == 0 {
        return Err(Error::Config("count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let free = if n >= 4 { 4 } else { 2 };
    (0..count)
        .map(|_| {
            let frame = random_orthogonal(n, &mut rng);
            let s = rng.gen_range(0.5..2.0);
            let r = rng.gen_range(0.5..2.0);
            let mut c = vec![0.0; n];
            for x in c.iter_mut().take(free) {
                *x = rng.gen_range(-1.0..1.0);
            }
            let len = norm(&c);
            c.iter_mut().for_each(|x| *x *= r / len);
            let mut d = vec![0.0; n];
            d[0] = c[1];
            d[1] = -c[0];
            if free == 4 {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                d[2] = -sign * c[3];
                d[3] = sign * c[2];
            }
            let mut a = vec![0.0; n];
            let mut b = vec![0.0; n];
            a[0] = s;
            b[1] = s;
            let cos_alpha = (c[0] * c[0] + c[1] * c[1]).sqrt() / r;
            let adapted = PlaneQuadruple::new(a, b, c.clone(), d);
            Ok(ConstrainedSample {
                quadruple: adapted.transform(&frame),
                c_adapted: c,
                cos_alpha,
            })
        })
        .collect()
}
