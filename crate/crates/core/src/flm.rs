//! Functional linear model `f_i(t) = x_iᵀβ(t) + v_i(t)` fitted pointwise
//! on the grid by least squares.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::EvaluationGrid;
use crate::error::{FdaError, Result};
use crate::estimation::CovarianceEstimate;
use crate::numerics::{inverse_spd, sym_eigen, Matrix, RCOND_THRESHOLD};
use crate::smoothing::CurveSet;

/// Scalar covariates, one row per subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    matrix: Matrix,
    labels: Vec<String>,
}

impl DesignMatrix {
    /// Validates finiteness and full column rank.
    pub fn new(matrix: Matrix, labels: Vec<String>) -> Result<Self> {
        if labels.len() != matrix.cols() {
            return Err(FdaError::InvalidInput(format!(
                "{} labels for {} covariate columns",
                labels.len(),
                matrix.cols()
            )));
        }
        if matrix.cols() == 0 || matrix.rows() == 0 {
            return Err(FdaError::InvalidInput("empty design matrix".into()));
        }
        if !matrix.is_finite() {
            return Err(FdaError::InvalidInput(
                "design matrix has non-finite entries".into(),
            ));
        }
        let rcond = sym_eigen(&matrix.gram())?.rcond();
        if !(rcond > RCOND_THRESHOLD) {
            return Err(FdaError::RankDeficientDesign { rcond });
        }
        Ok(DesignMatrix { matrix, labels })
    }

    /// A single column of ones.
    pub fn intercept(n: usize) -> Result<Self> {
        DesignMatrix::new(Matrix::from_fn(n, 1, |_, _| 1.0), vec!["intercept".into()])
    }

    /// Cell-means coding: column `g` indicates membership in group `g`.
    pub fn group_indicators(groups: &[usize], n_groups: usize) -> Result<Self> {
        if let Some(&g) = groups.iter().find(|&&g| g >= n_groups) {
            return Err(FdaError::InvalidInput(format!("group {g} out of range")));
        }
        let matrix = Matrix::from_fn(groups.len(), n_groups, |i, g| f64::from(groups[i] == g));
        DesignMatrix::new(matrix, (1..=n_groups).map(|g| format!("group{g}")).collect())
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn q(&self) -> usize {
        self.matrix.cols()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlmFit {
    pub grid: EvaluationGrid,
    pub x: DesignMatrix,
    /// q×M, row r is `β̂_r` on the grid.
    pub beta: Matrix,
    /// n×M, `v̂_i = f̂_i − x_iᵀβ̂`.
    pub residual_curves: Matrix,
    /// Residual covariance with divisor `n − q`.
    pub gamma: CovarianceEstimate,
    pub xtx_inv: Matrix,
}

impl FlmFit {
    /// `(XᵀX)⁻¹Xᵀ F` for any n×M curve matrix `F`.
    pub fn estimate_coefficients(&self, curves: &Matrix) -> Result<Matrix> {
        projector(&self.x, &self.xtx_inv)?.matmul(curves)
    }

    /// `Xβ` for a q×M coefficient matrix.
    pub fn fitted(&self, beta: &Matrix) -> Result<Matrix> {
        self.x.matrix().matmul(beta)
    }

    /// The fit on a contiguous block of grid points.
    pub fn restrict(&self, range: Range<usize>, grid: EvaluationGrid) -> Result<FlmFit> {
        Ok(FlmFit {
            gamma: self.gamma.restrict(range.clone(), grid.clone())?,
            beta: self.beta.columns(range.clone()),
            residual_curves: self.residual_curves.columns(range),
            grid,
            x: self.x.clone(),
            xtx_inv: self.xtx_inv.clone(),
        })
    }
}

fn projector(x: &DesignMatrix, xtx_inv: &Matrix) -> Result<Matrix> {
    xtx_inv.matmul(&x.matrix().transpose())
}

/// Least-squares fit of the reconstructed curves on the covariates.
pub fn fit_flm(curves: &CurveSet, x: &DesignMatrix) -> Result<FlmFit> {
    let n = curves.n_subjects();
    if x.n() != n {
        return Err(FdaError::InvalidInput(format!(
            "design has {} rows for {n} subjects",
            x.n()
        )));
    }
    if n <= x.q() {
        return Err(FdaError::TooFewSubjects {
            required: x.q() + 1,
            actual: n,
        });
    }
    let xtx_inv = inverse_spd(&x.matrix().gram()).map_err(|e| match e {
        FdaError::SingularSystem { rcond } => FdaError::RankDeficientDesign { rcond },
        other => other,
    })?;
    let beta = projector(x, &xtx_inv)?.matmul(&curves.curves)?;
    let residual_curves = curves.curves.sub(&x.matrix().matmul(&beta)?)?;
    let gamma = CovarianceEstimate::from_deviations(curves.grid.clone(), residual_curves.clone(), n - x.q())?;
    Ok(FlmFit {
        grid: curves.grid.clone(),
        x: x.clone(),
        beta,
        residual_curves,
        gamma,
        xtx_inv,
    })
}

/// Linear hypothesis `Cβ(t) = c(t)` for `t` in a sub-interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Restriction {
    /// k×q, full row rank.
    pub contrast: Matrix,
    /// k×M, `c(t)` on the grid.
    pub rhs: Matrix,
    pub interval: (f64, f64),
}

impl Restriction {
    pub fn new(contrast: Matrix, rhs: Matrix, interval: (f64, f64)) -> Result<Self> {
        let k = contrast.rows();
        if k == 0 || k > contrast.cols() {
            return Err(FdaError::InvalidInput(format!(
                "contrast must have 1..=q rows, got {k}x{}",
                contrast.cols()
            )));
        }
        if rhs.rows() != k {
            return Err(FdaError::InvalidInput(format!(
                "right-hand side has {} rows for {k} contrasts",
                rhs.rows()
            )));
        }
        if !contrast.is_finite() || !rhs.is_finite() {
            return Err(FdaError::InvalidInput(
                "restriction has non-finite entries".into(),
            ));
        }
        let rcond = sym_eigen(&contrast.transpose().gram())?.rcond();
        if !(rcond > RCOND_THRESHOLD) {
            return Err(FdaError::SingularRestriction);
        }
        let (lower, upper) = interval;
        if !(lower < upper) {
            return Err(FdaError::EmptyInterval { lower, upper });
        }
        Ok(Restriction {
            contrast,
            rhs,
            interval,
        })
    }

    /// `c(t) ≡ values` on a grid of `m` points.
    pub fn constant(contrast: Matrix, values: &[f64], m: usize, interval: (f64, f64)) -> Result<Self> {
        let rhs = Matrix::from_fn(values.len(), m, |l, _| values[l]);
        Restriction::new(contrast, rhs, interval)
    }

    /// `c(t) ≡ 0` on a grid of `m` points.
    pub fn zero(contrast: Matrix, m: usize, interval: (f64, f64)) -> Result<Self> {
        let k = contrast.rows();
        Restriction::new(contrast, Matrix::zeros(k, m), interval)
    }

    pub fn k(&self) -> usize {
        self.contrast.rows()
    }

    pub(crate) fn check(&self, fit: &FlmFit) -> Result<()> {
        if self.contrast.cols() != fit.x.q() {
            return Err(FdaError::InvalidInput(format!(
                "contrast has {} columns but the model has {} covariates",
                self.contrast.cols(),
                fit.x.q()
            )));
        }
        if self.rhs.cols() != fit.grid.len() {
            return Err(FdaError::GridMismatch(format!(
                "right-hand side has {} points on a grid of {}",
                self.rhs.cols(),
                fit.grid.len()
            )));
        }
        Ok(())
    }

    /// `C(XᵀX)⁻¹Cᵀ`.
    pub(crate) fn middle(&self, fit: &FlmFit) -> Result<Matrix> {
        self.contrast
            .matmul(&fit.xtx_inv)?
            .matmul(&self.contrast.transpose())
    }
}

/// Least-squares coefficients under the constraint `Cβ(τ) = c(τ)`:
/// `β̂₀ = β̂ − (XᵀX)⁻¹Cᵀ[C(XᵀX)⁻¹Cᵀ]⁻¹(Cβ̂ − c)`.
pub fn restricted_fit(fit: &FlmFit, restriction: &Restriction) -> Result<Matrix> {
    restriction.check(fit)?;
    let middle_inv = inverse_spd(&restriction.middle(fit)?).map_err(|_| FdaError::SingularRestriction)?;
    let gap = restriction.contrast.matmul(&fit.beta)?.sub(&restriction.rhs)?;
    let correction = fit
        .xtx_inv
        .matmul(&restriction.contrast.transpose())?
        .matmul(&middle_inv)?
        .matmul(&gap)?;
    fit.beta.sub(&correction)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientBands {
    pub level: f64,
    pub lower: Matrix,
    pub upper: Matrix,
}

/// Pointwise normal bands `β̂_r(τ) ± z·√(γ̂(τ,τ)[(XᵀX)⁻¹]_rr)`.
pub fn coefficient_bands(fit: &FlmFit, level: f64) -> Result<CoefficientBands> {
    if !(level > 0.0 && level < 1.0) {
        return Err(FdaError::InvalidInput(format!(
            "band level {level} not in (0, 1)"
        )));
    }
    let z = Normal::standard().inverse_cdf(0.5 * (1.0 + level));
    let var = fit.gamma.diagonal();
    let half = Matrix::from_fn(fit.beta.rows(), fit.beta.cols(), |r, j| {
        z * (var[j].max(0.0) * fit.xtx_inv[(r, r)]).sqrt()
    });
    let lower = Matrix::from_fn(half.rows(), half.cols(), |r, j| fit.beta[(r, j)] - half[(r, j)]);
    let upper = Matrix::from_fn(half.rows(), half.cols(), |r, j| fit.beta[(r, j)] + half[(r, j)]);
    Ok(CoefficientBands { level, lower, upper })
}
