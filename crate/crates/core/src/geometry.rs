//! Equivariantly embedded homogeneous targets.
//!
//! Two families are supported: the unit sphere `S^n ⊂ R^{n+1}` and the product
//! `S^{n1} × S^{n2} ⊂ R^{n1+n2+2}`. Every geometric quantity is computed
//! factor-wise on the coordinate blocks of the embedding.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

/// Membership tolerance for defining functions.
pub const MANIFOLD_TOL: f64 = 1e-10;

/// Factor blocks with norm below this cannot be retracted.
const ZERO_BLOCK: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TargetKind {
    Sphere { n: usize },
    Product { n1: usize, n2: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetManifold {
    kind: TargetKind,
    blocks: Vec<Range<usize>>,
}

/// Value and ambient gradient of one defining function.
#[derive(Debug, Clone, PartialEq)]
pub struct DefiningValue {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// An element of the isometry algebra, acting linearly on the ambient space.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraGenerator {
    matrix: DMatrix<f64>,
}

impl AlgebraGenerator {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        let skew = (&matrix + matrix.transpose()).amax();
        if skew > 1e-15 {
            return Err(Error::Config(format!(
                "generator is not skew-symmetric (deviation {skew:e})"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `α·self + β·other`
    pub fn combine(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(Self {
            matrix: &self.matrix * alpha + &other.matrix * beta,
        })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }

    #[inline]
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let l = self.dim();
        for (i, o) in out.iter_mut().enumerate().take(l) {
            *o = (0..l).map(|j| self.matrix[(i, j)] * x[j]).sum();
        }
    }
}

impl TargetManifold {
    pub fn new(kind: TargetKind) -> Result<Self> {
        let blocks = match kind {
            TargetKind::Sphere { n } => {
                if n == 0 {
                    return Err(Error::Config("sphere dimension must be >= 1".into()));
                }
                std::iter::once(0..n + 1).collect()
            }
            TargetKind::Product { n1, n2 } => {
                if n1 == 0 || n2 == 0 {
                    return Err(Error::Config("sphere factor dimensions must be >= 1".into()));
                }
                vec![0..n1 + 1, n1 + 1..n1 + n2 + 2]
            }
        };
        Ok(Self { kind, blocks })
    }

    pub fn sphere(n: usize) -> Self {
        Self::new(TargetKind::Sphere { n }).expect("sphere dimension must be >= 1")
    }

    pub fn product(n1: usize, n2: usize) -> Self {
        Self::new(TargetKind::Product { n1, n2 }).expect("factor dimensions must be >= 1")
    }

    pub fn kind(&self) -> TargetKind {
        self.kind
    }

    /// Coordinate blocks of the sphere factors.
    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    pub fn ambient_dim(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.end)
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.ambient_dim() - self.codim()
    }

    pub fn codim(&self) -> usize {
        self.blocks.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Nearest-point retraction: each factor block is normalized.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = x.to_vec();
        self.project_in_place(&mut out)?;
        Ok(out)
    }

    pub fn project_in_place(&self, x: &mut [f64]) -> Result<()> {
        self.check_dim(x)?;
        for b in &self.blocks {
            let block = &mut x[b.clone()];
            let n = norm(block);
            if n < ZERO_BLOCK {
                return Err(Error::ZeroVector { norm: n });
            }
            block.iter_mut().for_each(|v| *v /= n);
        }
        Ok(())
    }

    pub fn defining_functions(&self, x: &[f64]) -> Vec<DefiningValue> {
        let l = self.ambient_dim();
        self.blocks
            .iter()
            .map(|b| {
                let block = &x[b.clone()];
                let mut gradient = vec![0.0; l];
                for (g, v) in gradient[b.clone()].iter_mut().zip(block) {
                    *g = 2.0 * v;
                }
                DefiningValue {
                    value: dot(block, block) - 1.0,
                    gradient,
                }
            })
            .collect()
    }

    /// Largest absolute defining-function value.
    pub fn defining_residual(&self, x: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| (dot(&x[b.clone()], &x[b.clone()]) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Euclidean norm of the vector of defining-function values.
    pub fn defining_norm(&self, x: &[f64]) -> f64 {
        self.defining_functions(x)
            .iter()
            .map(|d| d.value * d.value)
            .sum::<f64>()
            .sqrt()
    }

    fn check_on_manifold(&self, p: &[f64]) -> Result<()> {
        self.check_dim(p)?;
        let residual = self.defining_residual(p);
        if !(residual <= MANIFOLD_TOL) {
            return Err(Error::NotOnManifold { residual });
        }
        Ok(())
    }

    /// Unit normals at `p`, one per factor (the normalized defining gradients).
    pub fn unit_normals(&self, p: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_dim(p)?;
        self.defining_functions(p)
            .into_iter()
            .map(|d| {
                let n = norm(&d.gradient);
                if n < ZERO_BLOCK {
                    return Err(Error::ZeroVector { norm: n });
                }
                Ok(d.gradient.iter().map(|g| g / n).collect())
            })
            .collect()
    }

    /// Orthogonal projection of `v` onto `T_p N`.
    pub fn tangent_project(&self, p: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_on_manifold(p)?;
        self.check_dim(v)?;
        let mut out = v.to_vec();
        self.tangent_part_in_place(p, &mut out);
        Ok(out)
    }

    /// Unchecked tangential projection; `p` is assumed to lie on the target.
    #[inline]
    pub fn tangent_part_in_place(&self, p: &[f64], v: &mut [f64]) {
        for b in &self.blocks {
            let pb = &p[b.clone()];
            let pp = dot(pb, pb);
            let s = dot(pb, &v[b.clone()]) / pp;
            for (vi, pi) in v[b.clone()].iter_mut().zip(pb) {
                *vi -= s * pi;
            }
        }
    }

    /// Largest normal component of `v` at `p` over the factors.
    fn normal_component(&self, p: &[f64], v: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| dot(&p[b.clone()], &v[b.clone()]).abs())
            .fold(0.0, f64::max)
    }

    /// Second fundamental form `A(p)(X, Y)`; `X` and `Y` must be tangent at `p`.
    ///
    /// On a unit sphere factor `A(p)(X, Y) = -(X·Y) p`.
    pub fn second_fundamental_form(&self, p: &[f64], x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check_on_manifold(p)?;
        self.check_dim(x)?;
        self.check_dim(y)?;
        for v in [x, y] {
            let normal = self.normal_component(p, v);
            if normal > MANIFOLD_TOL * norm(v).max(1.0) {
                return Err(Error::NotTangent { normal });
            }
        }
        Ok(self.sff_unchecked(p, x, y))
    }

    /// `A(p)` applied to the tangential parts of arbitrary ambient vectors.
    pub fn second_fundamental_form_tangential(&self, p: &[f64], x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check_on_manifold(p)?;
        self.check_dim(x)?;
        self.check_dim(y)?;
        let mut xt = x.to_vec();
        let mut yt = y.to_vec();
        self.tangent_part_in_place(p, &mut xt);
        self.tangent_part_in_place(p, &mut yt);
        Ok(self.sff_unchecked(p, &xt, &yt))
    }

    fn sff_unchecked(&self, p: &[f64], x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; p.len()];
        for b in &self.blocks {
            let s = dot(&x[b.clone()], &y[b.clone()]);
            for (o, pi) in out[b.clone()].iter_mut().zip(&p[b.clone()]) {
                *o = -s * pi;
            }
        }
        out
    }

    /// Basis of the isometry algebra: the rotations `E_jk` (j < k) of every
    /// sphere factor, embedded block-diagonally.
    ///
    /// `(E_jk x)_j = x_k` and `(E_jk x)_k = -x_j`.
    pub fn isometry_algebra_basis(&self) -> Vec<AlgebraGenerator> {
        let l = self.ambient_dim();
        let mut basis = Vec::new();
        for b in &self.blocks {
            for j in b.clone() {
                for k in j + 1..b.end {
                    let mut m = DMatrix::zeros(l, l);
                    m[(j, k)] = 1.0;
                    m[(k, j)] = -1.0;
                    basis.push(AlgebraGenerator { matrix: m });
                }
            }
        }
        basis
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    /// Truncated Taylor series of the matrix exponential (12 terms).
    #[test]
    fn dimensions() {
        let s = TargetManifold::sphere(2);
        assert_eq!((s.ambient_dim(), s.intrinsic_dim(), s.codim()), (3, 2, 1));
        let p = TargetManifold::product(2, 3);
        assert_eq!((p.ambient_dim(), p.intrinsic_dim(), p.codim()), (7, 5, 2));
    }

    #[test]
    fn project_examples() {
        let s = TargetManifold::sphere(2);
        assert_eq!(s.project(&[0.0, 0.0, 2.0]).unwrap(), vec![0.0, 0.0, 1.0]);
        assert!(matches!(s.project(&[0.0, 0.0, 0.0]), Err(Error::ZeroVector { .. })));
        let p = TargetManifold::product(2, 2);
        assert_eq!(
            p.project(&[2.0, 0.0, 0.0, 0.0, 0.0, -3.0]).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0, 0.0, -1.0]
        );
        let zero_factor = p.project(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(zero_factor, Err(Error::ZeroVector { .. })));
    }

    #[test]
    fn tangent_project_examples() {
        let s = TargetManifold::sphere(2);
        let p = [0.0, 0.0, 1.0];
        assert_eq!(s.tangent_project(&p, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 0.0]);
        assert_eq!(s.tangent_project(&p, &[0.0, 0.0, 5.0]).unwrap(), vec![0.0, 0.0, 0.0]);
        let t = TargetManifold::product(1, 1);
        assert_eq!(
            t.tangent_project(&[1.0, 0.0, 1.0, 0.0], &[0.0, 1.0, 0.0, 0.0]).unwrap(),
            vec![0.0, 1.0, 0.0, 0.0]
        );
        assert!(matches!(
            s.tangent_project(&[0.0, 0.0, 1.1], &[1.0, 0.0, 0.0]),
            Err(Error::NotOnManifold { .. })
        ));
    }

    #[test]
    fn second_fundamental_form_examples() {
        let s = TargetManifold::sphere(2);
        let p = [0.0, 0.0, 1.0];
        let e1 = [1.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0];
        assert_eq!(s.second_fundamental_form(&p, &e1, &e1).unwrap(), vec![0.0, 0.0, -1.0]);
        assert_eq!(s.second_fundamental_form(&p, &e1, &e2).unwrap(), vec![0.0; 3]);
        let t = TargetManifold::product(2, 2);
        let p6 = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let x6 = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(
            t.second_fundamental_form(&p6, &x6, &x6).unwrap(),
            vec![0.0, 0.0, -1.0, 0.0, 0.0, 0.0]
        );
        assert!(matches!(
            s.second_fundamental_form(&p, &[0.0, 0.0, 1.0], &e1),
            Err(Error::NotTangent { .. })
        ));
    }

    #[test]
    fn defining_function_examples() {
        let s = TargetManifold::sphere(2);
        let d = s.defining_functions(&[0.0, 0.0, 1.0]);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].value, 0.0);
        assert_eq!(d[0].gradient, vec![0.0, 0.0, 2.0]);
        let d = s.defining_functions(&[0.0, 0.0, 1.1]);
        assert!((d[0].value - 0.21).abs() < 1e-15);
        assert!(close(&d[0].gradient, &[0.0, 0.0, 2.2], 1e-15));
        let t = TargetManifold::product(1, 1);
        let d = t.defining_functions(&[1.0, 0.0, 0.6, 0.8]);
        assert_eq!(d.len(), 2);
        assert!(d[0].value.abs() < 1e-15 && d[1].value.abs() < 1e-15);
        assert!(close(&d[0].gradient, &[2.0, 0.0, 0.0, 0.0], 1e-15));
        assert!(close(&d[1].gradient, &[0.0, 0.0, 1.2, 1.6], 1e-15));
    }

    #[test]
    fn algebra_basis_examples() {
        let s = TargetManifold::sphere(2);
        let basis = s.isometry_algebra_basis();
        assert_eq!(basis.len(), 3);
        assert_eq!(basis[0].apply(&[1.0, 0.0, 0.0]), vec![0.0, -1.0, 0.0]);
        let t = TargetManifold::product(2, 2);
        let basis = t.isometry_algebra_basis();
        assert_eq!(basis.len(), 6);
        for g in &basis {
            let m = g.matrix();
            for i in 0..3 {
                for j in 3..6 {
                    assert_eq!(m[(i, j)], 0.0);
                    assert_eq!(m[(j, i)], 0.0);
                }
            }
            assert!((m + m.transpose()).amax() <= 1e-15);
        }
        assert_eq!(TargetManifold::sphere(4).isometry_algebra_basis().len(), 10);
    }

    #[test]
    fn generators_preserve_the_target() {
        let t = TargetManifold::product(2, 2);
        let p = t.project(&[0.3, -0.2, 0.9, 0.5, 0.5, -0.7]).unwrap();
        for g in t.isometry_algebra_basis() {
            let bp = g.apply(&p);
            for d in t.defining_functions(&p) {
                assert!(dot(&d.gradient, &bp).abs() <= 1e-12);
            }
            for tau in [0.1, 1.0] {
                let e = (g.matrix() * tau).exp();
                let moved: Vec<f64> = (0..6).map(|i| (0..6).map(|j| e[(i, j)] * p[j]).sum()).collect();
                assert!(t.defining_residual(&moved) <= 1e-10);
            }
        }
    }

    #[test]
    fn non_skew_generator_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(AlgebraGenerator::new(m).is_err());
    }
}
