//! Symmetric eigendecomposition by cyclic Jacobi rotations, and the dense
//! solves built on top of it.

use super::matrix::{dot, Matrix};
use crate::error::{FdaError, Result};

/// Reciprocal condition number below which a symmetric system is singular.
pub const RCOND_THRESHOLD: f64 = 1e-12;

const MAX_SWEEPS: usize = 64;

/// Eigenpairs of a symmetric matrix, values sorted descending.
///
/// Column `r` of `vectors` is the unit eigenvector for `values[r]`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymmetricEigen {
    /// `V·diag(f(λ))·Vᵀ`.
    pub fn reassemble(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.vectors.rows();
        let mapped: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            let vi = self.vectors.row(i);
            for j in i..n {
                let vj = self.vectors.row(j);
                let s: f64 = (0..mapped.len()).map(|r| vi[r] * mapped[r] * vj[r]).sum();
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    /// λ_min / λ_max, or 0 when the largest eigenvalue is not positive.
    pub fn rcond(&self) -> f64 {
        let max = self.values.first().copied().unwrap_or(0.0);
        let min = self.values.last().copied().unwrap_or(0.0);
        if max <= 0.0 {
            0.0
        } else {
            min / max
        }
    }
}

fn max_asymmetry(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Eigendecomposition of a symmetric matrix.
pub fn sym_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    if a.rows() != a.cols() {
        return Err(FdaError::InvalidInput(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let scale = a.max_abs();
    let asymmetry = max_asymmetry(a);
    if asymmetry > 1e-10 * scale {
        return Err(FdaError::NotSymmetric { asymmetry });
    }
    let n = a.rows();
    // symmetrize so rounding noise in the input cannot bias the rotations
    let mut w = Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    // rows of `vt` are the eigenvectors
    let mut vt = Matrix::identity(n);
    let frob: f64 = w.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();

    for sweep in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += w[(i, j)] * w[(i, j)];
            }
        }
        if off.sqrt() <= 1e-15 * frob || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = w[(p, q)];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let app = w[(p, p)];
                let aqq = w[(q, q)];
                let g = 100.0 * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    w[(p, q)] = 0.0;
                    w[(q, p)] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut w, &mut vt, p, q, c, s);
                w[(p, p)] = app - t * apq;
                w[(q, q)] = aqq + t * apq;
                w[(p, q)] = 0.0;
                w[(q, p)] = 0.0;
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[(j, j)].total_cmp(&w[(i, i)]));
    let values = order.iter().map(|&i| w[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |row, col| vt[(order[col], row)]);
    Ok(SymmetricEigen { values, vectors })
}

fn rotate(w: &mut Matrix, vt: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = w.rows();
    for k in 0..n {
        let akp = w[(k, p)];
        let akq = w[(k, q)];
        w[(k, p)] = c * akp - s * akq;
        w[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = w[(p, k)];
        let aqk = w[(q, k)];
        w[(p, k)] = c * apk - s * aqk;
        w[(q, k)] = s * apk + c * aqk;
    }
    for k in 0..n {
        let vp = vt[(p, k)];
        let vq = vt[(q, k)];
        vt[(p, k)] = c * vp - s * vq;
        vt[(q, k)] = s * vp + c * vq;
    }
}

/// Solves the symmetric system `A x = b` through its eigendecomposition,
/// refusing systems whose reciprocal condition number is at or below
/// [`RCOND_THRESHOLD`].
pub fn solve_symmetric(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let eig = sym_eigen(a)?;
    let rcond = eig.rcond();
    if !(rcond > RCOND_THRESHOLD) {
        return Err(FdaError::SingularSystem { rcond });
    }
    let n = a.rows();
    let mut x = vec![0.0; n];
    for r in 0..n {
        let v = eig.vectors.column(r);
        let coef = dot(&v, b) / eig.values[r];
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += coef * vi;
        }
    }
    Ok(x)
}

/// Inverse of a symmetric positive-definite matrix.
pub fn inverse_spd(a: &Matrix) -> Result<Matrix> {
    let eig = sym_eigen(a)?;
    let rcond = eig.rcond();
    if !(rcond > RCOND_THRESHOLD) {
        return Err(FdaError::SingularSystem { rcond });
    }
    Ok(eig.reassemble(|l| 1.0 / l))
}

/// `A^{-1/2}` for a symmetric positive-definite `A`.
pub fn inv_sqrt_psd(a: &Matrix) -> Result<Matrix> {
    let eig = sym_eigen(a)?;
    let ratio = eig.rcond();
    if !(ratio > RCOND_THRESHOLD) {
        return Err(FdaError::NotPositiveDefinite { ratio });
    }
    Ok(eig.reassemble(|l| 1.0 / l.sqrt()))
}

/// Weighted least squares: argmin over α of Σ w_j (y_j − z_jᵀα)².
///
/// `basis` is n×q with row j equal to z_j.
pub fn solve_weighted_ls(basis: &Matrix, weights: &[f64], response: &[f64]) -> Result<Vec<f64>> {
    let n = basis.rows();
    let q = basis.cols();
    if weights.len() != n || response.len() != n {
        return Err(FdaError::InvalidInput(format!(
            "weighted LS with {} rows but {} weights and {} responses",
            n,
            weights.len(),
            response.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(FdaError::InvalidInput(
            "weights must be finite and nonnegative".into(),
        ));
    }
    let active = weights.iter().filter(|&&w| w > 0.0).count();
    if active < q {
        return Err(FdaError::SingularSystem { rcond: 0.0 });
    }
    let mut gram = Matrix::zeros(q, q);
    let mut rhs = vec![0.0; q];
    for ((z, &w), &y) in basis.iter_rows().zip(weights).zip(response) {
        if w == 0.0 {
            continue;
        }
        for a in 0..q {
            rhs[a] += w * z[a] * y;
            for b in a..q {
                gram[(a, b)] += w * z[a] * z[b];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    solve_symmetric(&gram, &rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn diag_two_one() {
        let eig = sym_eigen(&Matrix::from_diag(&[1.0, 2.0])).unwrap();
        assert_eq!(eig.values, vec![2.0, 1.0]);
        assert_close(eig.vectors[(1, 0)].abs(), 1.0, 1e-15);
        assert_close(eig.vectors[(0, 1)].abs(), 1.0, 1e-15);
    }

    #[test]
    fn identity_three() {
        let eig = sym_eigen(&Matrix::identity(3)).unwrap();
        assert_eq!(eig.values, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn rank_one() {
        let v = [0.6, 0.0, 0.8];
        let a = Matrix::from_fn(3, 3, |i, j| v[i] * v[j]);
        let eig = sym_eigen(&a).unwrap();
        assert_close(eig.values[0], 1.0, 1e-14);
        assert_close(eig.values[1], 0.0, 1e-14);
        assert_close(eig.values[2], 0.0, 1e-14);
    }

    #[test]
    fn asymmetric_rejected() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigen(&a), Err(FdaError::NotSymmetric { .. })));
    }

    #[test]
    fn inv_sqrt_diag() {
        let b = inv_sqrt_psd(&Matrix::from_diag(&[4.0, 9.0])).unwrap();
        assert_close(b[(0, 0)], 0.5, 1e-15);
        assert_close(b[(1, 1)], 1.0 / 3.0, 1e-15);
        assert_close(b[(0, 1)], 0.0, 1e-15);
        let one = inv_sqrt_psd(&Matrix::from_diag(&[4.0])).unwrap();
        assert_close(one[(0, 0)], 0.5, 1e-15);
        let id = inv_sqrt_psd(&Matrix::identity(3)).unwrap();
        assert_eq!(id, Matrix::identity(3));
    }

    #[test]
    fn inv_sqrt_rejects_singular() {
        let a = Matrix::from_diag(&[1.0, 0.0]);
        assert!(matches!(
            inv_sqrt_psd(&a),
            Err(FdaError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn wls_reproduces_line() {
        let t = [0.0, 0.3, 0.5, 0.9, 1.4];
        let basis = Matrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { t[i] });
        let y: Vec<f64> = t.iter().map(|t| 2.0 + 3.0 * t).collect();
        let w = [0.2, 1.5, 3.0, 0.7, 0.01];
        let coef = solve_weighted_ls(&basis, &w, &y).unwrap();
        assert_close(coef[0], 2.0, 1e-12);
        assert_close(coef[1], 3.0, 1e-12);
    }

    #[test]
    fn wls_equal_weights_is_ols() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 2.0, 5.0];
        let basis = Matrix::from_fn(4, 2, |i, j| if j == 0 { 1.0 } else { t[i] });
        let coef = solve_weighted_ls(&basis, &[2.5; 4], &y).unwrap();
        // OLS: slope = Sxy/Sxx = 5.5/5, intercept = ybar - slope*tbar
        assert_close(coef[1], 1.1, 1e-12);
        assert_close(coef[0], 2.75 - 1.1 * 1.5, 1e-12);
    }

    #[test]
    fn wls_single_point() {
        let basis = Matrix::from_fn(3, 1, |_, _| 1.0);
        let coef = solve_weighted_ls(&basis, &[0.0, 1.0, 0.0], &[5.0, 7.0, 9.0]).unwrap();
        assert_close(coef[0], 7.0, 1e-14);
    }

    #[test]
    fn wls_singular() {
        let basis = Matrix::from_fn(3, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let r = solve_weighted_ls(&basis, &[0.0, 1.0, 0.0], &[1.0, 2.0, 3.0]);
        assert!(matches!(r, Err(FdaError::SingularSystem { .. })));
        let collinear = Matrix::from_fn(3, 2, |_, _| 1.0);
        let r = solve_weighted_ls(&collinear, &[1.0; 3], &[1.0, 2.0, 3.0]);
        assert!(matches!(r, Err(FdaError::SingularSystem { .. })));
    }
}
