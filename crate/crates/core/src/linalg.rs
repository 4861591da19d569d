//! Small dense helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[inline]
pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

pub fn add(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a + b).collect()
}

pub fn scale(s: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|a| s * a).collect()
}

/// `y += s * x`
#[inline]
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Solution of a weighted linear least-squares problem.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    /// Fitted coefficients, one column of the right-hand side per output column.
    pub coefficients: DMatrix<f64>,
    /// Condition number of the column-equilibrated normal matrix.
    pub normal_condition: f64,
}

/// Minimizes `sum_i w_i |design_i · x - rhs_i|^2` for every column of `rhs`.
///
/// Columns of the design are equilibrated before the SVD so the reported
/// condition number measures the basis geometry, not the column scales.
pub fn weighted_least_squares(
    design: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    weights: Option<&[f64]>,
    max_normal_condition: f64,
) -> Result<LeastSquares> {
    let (rows, cols) = design.shape();
    if rows < cols || rhs.nrows() != rows {
        return Err(Error::DimensionMismatch {
            expected: cols.max(design.nrows()),
            got: rhs.nrows(),
        });
    }
    let mut a = design.clone();
    let mut b = rhs.clone();
    if let Some(w) = weights {
        for (i, wi) in w.iter().enumerate().take(rows) {
            let s = wi.sqrt();
            a.row_mut(i).scale_mut(s);
            b.row_mut(i).scale_mut(s);
        }
    }
    let col_scale: DVector<f64> = DVector::from_iterator(
        cols,
        (0..cols).map(|j| {
            let n = a.column(j).norm();
            if n > 0.0 {
                1.0 / n
            } else {
                1.0
            }
        }),
    );
    for j in 0..cols {
        a.column_mut(j).scale_mut(col_scale[j]);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 {
        (smax / smin).powi(2)
    } else {
        f64::INFINITY
    };
    if !(cond <= max_normal_condition) {
        return Err(Error::IllConditioned { cond });
    }
    let mut x = svd
        .solve(&b, 0.0)
        .map_err(|_| Error::IllConditioned { cond: f64::INFINITY })?;
    for j in 0..cols {
        x.row_mut(j).scale_mut(col_scale[j]);
    }
    Ok(LeastSquares {
        coefficients: x,
        normal_condition: cond,
    })
}

/// Least-squares slope of `y` against `x`.
pub fn slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_linear_fit() {
        let t: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let design = DMatrix::from_fn(10, 2, |i, j| if j == 0 { 1.0 } else { t[i] });
        let rhs = DMatrix::from_fn(10, 1, |i, _| 3.0 - 2.0 * t[i]);
        let ls = weighted_least_squares(&design, &rhs, None, 1e12).unwrap();
        assert!((ls.coefficients[(0, 0)] - 3.0).abs() < 1e-13);
        assert!((ls.coefficients[(1, 0)] + 2.0).abs() < 1e-13);
    }

    #[test]
    fn parallel_columns_are_rejected() {
        let design = DMatrix::from_fn(6, 2, |i, _| i as f64 + 1.0);
        let rhs = DMatrix::from_element(6, 1, 1.0);
        assert!(matches!(
            weighted_least_squares(&design, &rhs, None, 1e12),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn slope_of_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        assert!((slope(&x, &y).unwrap() - 2.0).abs() < 1e-14);
        assert!(slope(&[1.0], &[1.0]).is_none());
    }
}
