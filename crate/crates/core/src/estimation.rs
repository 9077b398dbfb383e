//! Mean, covariance and noise-variance functions estimated from
//! reconstructed curves, plus simulation-only oracles (the "ideal"
//! estimators computed from the true curves, and the leading-order
//! reconstruction MSE).

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dataset::{EvaluationGrid, FunctionalDataset};
use crate::error::{FdaError, Result};
use crate::kernels::{equivalent_kernel, KernelFamily, SmootherSpec};
use crate::numerics::Matrix;
use crate::smoothing::CurveSet;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub grid: EvaluationGrid,
    pub values: Vec<f64>,
    pub n: usize,
}

/// Covariance on the grid. A sample estimate keeps the deviation curves it
/// was built from (`Γ̂ = DᵀD / divisor`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub grid: EvaluationGrid,
    pub matrix: Matrix,
    /// `n − 1` for the one-sample path, `n − q` for a linear model fit.
    pub divisor: usize,
    /// n×M centered (or residual) curves; absent for a known covariance.
    pub deviations: Option<Matrix>,
}

impl CovarianceEstimate {
    pub fn from_deviations(grid: EvaluationGrid, deviations: Matrix, divisor: usize) -> Result<Self> {
        if deviations.cols() != grid.len() {
            return Err(FdaError::GridMismatch(format!(
                "{} deviation columns on a grid of {} points",
                deviations.cols(),
                grid.len()
            )));
        }
        if divisor == 0 {
            return Err(FdaError::TooFewSubjects {
                required: deviations.rows(),
                actual: deviations.rows(),
            });
        }
        let matrix = deviations.gram().scale(1.0 / divisor as f64);
        Ok(CovarianceEstimate {
            grid,
            matrix,
            divisor,
            deviations: Some(deviations),
        })
    }

    /// A covariance given directly as a matrix, e.g. a known `γ` on the grid.
    pub fn from_matrix(grid: EvaluationGrid, matrix: Matrix, divisor: usize) -> Result<Self> {
        let m = grid.len();
        if matrix.rows() != m || matrix.cols() != m {
            return Err(FdaError::GridMismatch(format!(
                "{}x{} covariance on a grid of {m} points",
                matrix.rows(),
                matrix.cols()
            )));
        }
        if !matrix.is_finite() {
            return Err(FdaError::InvalidInput("covariance has non-finite entries".into()));
        }
        let tol = 1e-10 * matrix.max_abs();
        for j in 0..m {
            for l in 0..j {
                let gap = (matrix[(j, l)] - matrix[(l, j)]).abs();
                if gap > tol {
                    return Err(FdaError::NotSymmetric { asymmetry: gap });
                }
            }
        }
        Ok(CovarianceEstimate {
            grid,
            matrix,
            divisor,
            deviations: None,
        })
    }

    /// The estimate on a contiguous block of grid points.
    pub fn restrict(&self, range: Range<usize>, grid: EvaluationGrid) -> Result<Self> {
        if range.len() != grid.len() || range.end > self.grid.len() {
            return Err(FdaError::GridMismatch(
                "restriction range does not match grid".into(),
            ));
        }
        Ok(CovarianceEstimate {
            grid,
            matrix: self.matrix.principal(range.clone()),
            divisor: self.divisor,
            deviations: self.deviations.as_ref().map(|d| d.columns(range)),
        })
    }

    /// `γ̂(τ_j, τ_j)`.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.matrix.rows()).map(|j| self.matrix[(j, j)]).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceFunctionEstimate {
    pub grid: EvaluationGrid,
    /// `None` where the kernel window holds no design point.
    pub values: Vec<Option<f64>>,
    pub bandwidth: f64,
    pub family: KernelFamily,
}

fn row_mean(curves: &Matrix) -> Vec<f64> {
    let n = curves.rows() as f64;
    let mut mean = vec![0.0; curves.cols()];
    for row in curves.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

fn centered(curves: &Matrix, mean: &[f64]) -> Matrix {
    Matrix::from_fn(curves.rows(), curves.cols(), |i, j| curves[(i, j)] - mean[j])
}

fn mean_of(curves: &Matrix, grid: &EvaluationGrid) -> Result<MeanEstimate> {
    if curves.rows() == 0 {
        return Err(FdaError::EmptyDataset);
    }
    if curves.cols() != grid.len() {
        return Err(FdaError::GridMismatch("curves do not match grid".into()));
    }
    Ok(MeanEstimate {
        grid: grid.clone(),
        values: row_mean(curves),
        n: curves.rows(),
    })
}

fn covariance_of(curves: &Matrix, mean: &MeanEstimate) -> Result<CovarianceEstimate> {
    let n = curves.rows();
    if n < 2 {
        return Err(FdaError::TooFewSubjects {
            required: 1,
            actual: n,
        });
    }
    if mean.values.len() != curves.cols() {
        return Err(FdaError::GridMismatch("mean does not match curves".into()));
    }
    CovarianceEstimate::from_deviations(mean.grid.clone(), centered(curves, &mean.values), n - 1)
}

/// `η̂(τ) = n⁻¹ Σ_i f̂_i(τ)`.
pub fn estimate_mean(curves: &CurveSet) -> Result<MeanEstimate> {
    mean_of(&curves.curves, &curves.grid)
}

/// `γ̂(s, t) = (n − 1)⁻¹ Σ_i (f̂_i(s) − η̂(s))(f̂_i(t) − η̂(t))`.
pub fn estimate_covariance(curves: &CurveSet, mean: &MeanEstimate) -> Result<CovarianceEstimate> {
    covariance_of(&curves.curves, mean)
}

/// Mean of the true curves (simulation only).
pub fn ideal_mean(true_curves: &Matrix, grid: &EvaluationGrid) -> Result<MeanEstimate> {
    mean_of(true_curves, grid)
}

/// Covariance of the true curves with divisor `n − 1` (simulation only).
pub fn ideal_covariance(true_curves: &Matrix, grid: &EvaluationGrid) -> Result<CovarianceEstimate> {
    let mean = mean_of(true_curves, grid)?;
    covariance_of(true_curves, &mean)
}

/// Default bandwidth for the noise-variance smoother: `(b − a)·N^{−1/5}`.
pub fn default_noise_bandwidth(dataset: &FunctionalDataset) -> f64 {
    let (a, b) = dataset.interval();
    (b - a) * (dataset.total_observations() as f64).powf(-0.2)
}

/// Kernel estimate of `σ²(τ)` from the squared LPK residuals:
/// `Σ H_b(t_ij − τ) ε̂²_ij / Σ H_b(t_ij − τ)`.
///
/// Grid points whose window is empty are reported as `None`; if every grid
/// point is empty the call fails with [`FdaError::EmptyWindow`].
pub fn estimate_noise_variance(
    dataset: &FunctionalDataset,
    curves: &CurveSet,
    bandwidth: f64,
    family: KernelFamily,
) -> Result<VarianceFunctionEstimate> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(FdaError::InvalidInput(format!(
            "invalid noise bandwidth {bandwidth}"
        )));
    }
    let subjects = dataset.subjects();
    if curves.fitted_at_design.len() != subjects.len()
        || subjects
            .iter()
            .zip(&curves.fitted_at_design)
            .any(|(s, f)| s.len() != f.len())
    {
        return Err(FdaError::InvalidInput(
            "curve set was not reconstructed from this dataset".into(),
        ));
    }
    let residuals: Vec<(f64, f64)> = subjects
        .iter()
        .zip(&curves.fitted_at_design)
        .flat_map(|(s, fitted)| {
            s.times
                .iter()
                .zip(s.values.iter().zip(fitted))
                .map(|(&t, (y, f))| (t, (y - f) * (y - f)))
        })
        .collect();

    let values: Vec<Option<f64>> = curves
        .grid
        .points()
        .iter()
        .map(|&tau| {
            let (num, den) = residuals.iter().fold((0.0, 0.0), |(num, den), &(t, e2)| {
                let k = family.eval((t - tau) / bandwidth);
                (num + k * e2, den + k)
            });
            (den > 0.0).then(|| num / den)
        })
        .collect();
    if values.iter().all(Option::is_none) {
        return Err(FdaError::EmptyWindow);
    }
    Ok(VarianceFunctionEstimate {
        grid: curves.grid.clone(),
        values,
        bandwidth,
        family,
    })
}

/// Population quantities entering the leading-order reconstruction MSE.
pub struct TheoreticalAmseInputs<'a> {
    /// `η^{(p+1)}(t)`.
    pub mean_derivative: &'a dyn Fn(f64) -> f64,
    /// `γ_{p+1,p+1}(t, t)`.
    pub covariance_derivative: &'a dyn Fn(f64) -> f64,
    /// `σ²(t)`.
    pub noise_variance: &'a dyn Fn(f64) -> f64,
    /// Design density `π(t)`.
    pub design_density: &'a dyn Fn(f64) -> f64,
    /// Harmonic mean `m̃` of the per-subject counts.
    pub harmonic_mean_points: f64,
}

/// Leading terms of the average conditional MSE of the reconstructions at `t`:
///
/// `B²_{p+1}(K*)[(η^{(p+1)})² + γ_{p+1,p+1}] / ((p+1)!)² · h^{2(p+1)}
///   + V(K*)σ²/π · (m̃h)⁻¹`.
pub fn theoretical_amse(inputs: &TheoreticalAmseInputs<'_>, spec: &SmootherSpec, t: f64) -> Result<f64> {
    if !(inputs.harmonic_mean_points > 0.0) {
        return Err(FdaError::InvalidInput(
            "harmonic mean of n_i must be positive".into(),
        ));
    }
    let density = (inputs.design_density)(t);
    if !(density > 0.0) {
        return Err(FdaError::InvalidInput(format!(
            "design density is not positive at {t}"
        )));
    }
    let p = spec.order();
    let h = spec.bandwidth();
    let functionals = equivalent_kernel(spec)?.functionals(p + 1);
    let b = functionals.moment(p + 1);
    let fact: f64 = (1..=p + 1).map(|k| k as f64).product();
    let drift = (inputs.mean_derivative)(t);
    let bias2 = b * b * (drift * drift + (inputs.covariance_derivative)(t)) / (fact * fact)
        * h.powi(2 * (p as i32 + 1));
    let variance =
        functionals.roughness() * (inputs.noise_variance)(t) / (density * inputs.harmonic_mean_points * h);
    Ok(bias2 + variance)
}
