//! Global L² test of `Cβ(t) = c(t)`: the standardized process, its
//! statistic `T_n`, the covariance eigenstructure, and three ways to get a
//! null p-value (cumulant-matched χ², direct mixture simulation, and a
//! restricted-fit residual bootstrap).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dataset::EvaluationGrid;
use crate::error::{FdaError, Result};
use crate::estimation::CovarianceEstimate;
use crate::flm::{restricted_fit, FlmFit, Restriction};
use crate::numerics::{
    inv_sqrt_psd, spawn_stream, sym_eigen, trapezoid_integrate, trapezoid_weights, ChiSquareSampler, Matrix,
    RngStream,
};

/// Replicates per parallel task in the Monte Carlo p-values. Results are
/// reproducible for a fixed seed, replication count and chunk size.
pub const SIM_CHUNK: usize = 4096;
pub const BOOT_CHUNK: usize = 64;

/// `{C(XᵀX)⁻¹Cᵀ}^{-1/2}`.
fn whitening(fit: &FlmFit, restriction: &Restriction) -> Result<Matrix> {
    restriction.check(fit)?;
    inv_sqrt_psd(&restriction.middle(fit)?).map_err(|_| FdaError::SingularRestriction)
}

/// `w(τ) = {C(XᵀX)⁻¹Cᵀ}^{-1/2}(Cβ̂(τ) − c(τ))`, a k×M matrix.
pub fn standardized_process(fit: &FlmFit, restriction: &Restriction) -> Result<Matrix> {
    let root = whitening(fit, restriction)?;
    let gap = restriction.contrast.matmul(&fit.beta)?.sub(&restriction.rhs)?;
    root.matmul(&gap)
}

/// `T_n = Σ_l ∫_{a'}^{b'} w_l²(t) dt` by the trapezoid rule over the grid
/// points inside `interval`.
pub fn test_statistic(w: &Matrix, grid: &EvaluationGrid, interval: (f64, f64)) -> Result<f64> {
    if w.cols() != grid.len() {
        return Err(FdaError::GridMismatch(format!(
            "process has {} points on a grid of {}",
            w.cols(),
            grid.len()
        )));
    }
    let (range, sub) = grid.restrict(interval.0, interval.1)?;
    let mut total = 0.0;
    for row in w.iter_rows() {
        let sq: Vec<f64> = row[range.clone()].iter().map(|v| v * v).collect();
        total += trapezoid_integrate(&sq, sub.points())?;
    }
    Ok(total)
}

/// How many leading eigenpairs enter the null mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retention {
    /// Smallest count whose eigenvalues reach this share of the trace.
    TraceFraction(f64),
    /// Every eigenvalue above `1e-10·λ̂₁`.
    PositiveCount,
}

impl Default for Retention {
    fn default() -> Self {
        Retention::TraceFraction(0.9999)
    }
}

/// Quadrature-weighted eigenanalysis of a covariance on the grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenStructure {
    pub grid: EvaluationGrid,
    /// All eigenvalues, descending, clipped at zero.
    pub eigenvalues: Vec<f64>,
    /// m_hat × M, row r is `φ̂_r` with `∫φ̂_r² = 1`.
    pub eigenfunctions: Matrix,
    pub m_hat: usize,
    /// Share of the trace carried by the retained eigenvalues.
    pub trace_fraction: f64,
}

impl EigenStructure {
    pub fn retained(&self) -> &[f64] {
        &self.eigenvalues[..self.m_hat]
    }

    pub fn total(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// `ξ_r = ∫ f φ̂_r` for the retained eigenfunctions.
    pub fn scores(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.eigenfunctions
            .iter_rows()
            .map(|phi| {
                let prod: Vec<f64> = phi.iter().zip(f).map(|(a, b)| a * b).collect();
                trapezoid_integrate(&prod, self.grid.points())
            })
            .collect()
    }
}

/// Eigenpairs of `∫γ̂(s,t)φ(t)dt = λφ(s)` with trapezoid weights `W`.
///
/// The symmetric form `W^{1/2}Γ̂W^{1/2}` is diagonalized directly, or through
/// the n×n Gram matrix `DWDᵀ/divisor` when the deviation curves are stored
/// and fewer than the grid size. The retained count never exceeds the
/// divisor for sample covariances.
pub fn covariance_eigen(gamma: &CovarianceEstimate, retention: Retention) -> Result<EigenStructure> {
    let grid = &gamma.grid;
    let m = grid.len();
    let w = trapezoid_weights(grid.points())?;
    let sqrt_w: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();

    let (mut values, functions, cap) = match &gamma.deviations {
        Some(d) if d.rows() < m => {
            let div = gamma.divisor as f64;
            let weighted = Matrix::from_fn(d.rows(), m, |i, j| d[(i, j)] * sqrt_w[j]);
            let eig = sym_eigen(&weighted.transpose().gram().scale(1.0 / div))?;
            let values = eig.values.clone();
            let functions = move |r: usize, lambda: f64| -> Vec<f64> {
                let c = (div * lambda).sqrt();
                (0..m)
                    .map(|j| {
                        (0..d.rows())
                            .map(|i| d[(i, j)] * eig.vectors[(i, r)])
                            .sum::<f64>()
                            / c
                    })
                    .collect()
            };
            (
                values,
                Box::new(functions) as Box<dyn Fn(usize, f64) -> Vec<f64> + '_>,
                gamma.divisor,
            )
        }
        other => {
            let sym = Matrix::from_fn(m, m, |j, l| sqrt_w[j] * gamma.matrix[(j, l)] * sqrt_w[l]);
            let eig = sym_eigen(&sym)?;
            let values = eig.values.clone();
            let functions = move |r: usize, _: f64| -> Vec<f64> {
                (0..m).map(|j| eig.vectors[(j, r)] / sqrt_w[j]).collect()
            };
            let cap = if other.is_some() { gamma.divisor } else { m };
            (
                values,
                Box::new(functions) as Box<dyn Fn(usize, f64) -> Vec<f64> + '_>,
                cap,
            )
        }
    };
    values.iter_mut().for_each(|v| *v = v.max(0.0));
    let total: f64 = values.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(FdaError::ZeroTrace);
    }
    let positive = values.iter().take_while(|&&v| v > 1e-10 * values[0]).count();
    let m_hat = match retention {
        Retention::PositiveCount => positive,
        Retention::TraceFraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(FdaError::InvalidInput(format!(
                    "trace fraction {f} not in (0, 1]"
                )));
            }
            let mut acc = 0.0;
            let mut count = values.len();
            for (r, v) in values.iter().enumerate() {
                acc += v;
                if acc >= f * total * (1.0 - 1e-12) {
                    count = r + 1;
                    break;
                }
            }
            count.min(positive)
        }
    }
    .min(cap)
    .max(1);

    let mut eigenfunctions = Matrix::zeros(m_hat, m);
    for r in 0..m_hat {
        eigenfunctions
            .row_mut(r)
            .copy_from_slice(&functions(r, values[r]));
    }
    let trace_fraction = values[..m_hat].iter().sum::<f64>() / total;
    Ok(EigenStructure {
        grid: grid.clone(),
        eigenvalues: values,
        eigenfunctions,
        m_hat,
        trace_fraction,
    })
}

/// `Σ_r λ_r A_r` with `A_r ~ χ²_k` independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureNull {
    pub lambdas: Vec<f64>,
    pub k: usize,
}

impl MixtureNull {
    pub fn new(lambdas: Vec<f64>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(FdaError::InvalidInput("mixture needs k >= 1".into()));
        }
        if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(FdaError::InvalidInput(
                "mixture weights must be finite and >= 0".into(),
            ));
        }
        if !lambdas.iter().any(|&l| l > 0.0) {
            return Err(FdaError::DegenerateMixture);
        }
        Ok(MixtureNull { lambdas, k })
    }

    /// The retained eigenvalues with `k` degrees of freedom per term.
    pub fn from_eigen(eigen: &EigenStructure, k: usize) -> Result<Self> {
        MixtureNull::new(eigen.retained().to_vec(), k)
    }

    /// `κ_j = 2^{j−1}(j−1)! k Σλ^j` for j = 1, 2, 3.
    pub fn cumulants(&self) -> [f64; 3] {
        let k = self.k as f64;
        let s = |p: i32| self.lambdas.iter().map(|l| l.powi(p)).sum::<f64>();
        [k * s(1), 2.0 * k * s(2), 8.0 * k * s(3)]
    }
}

/// `αχ²_d + β` matching the first three cumulants of a mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareApprox {
    pub alpha: f64,
    pub d: f64,
    pub beta: f64,
}

pub fn chi2_approx_params(mixture: &MixtureNull) -> Result<ChiSquareApprox> {
    let [k1, k2, k3] = mixture.cumulants();
    if !(k3 > 0.0) {
        return Err(FdaError::DegenerateMixture);
    }
    let alpha = k3 / (4.0 * k2);
    let d = 8.0 * k2.powi(3) / (k3 * k3);
    Ok(ChiSquareApprox {
        alpha,
        d,
        beta: k1 - alpha * d,
    })
}

/// `P(χ²_d > (T_n − β)/α)`; 1 when the argument is not positive.
pub fn p_value_chi2(approx: &ChiSquareApprox, statistic: f64) -> f64 {
    let x = (statistic - approx.beta) / approx.alpha;
    if !(x > 0.0) {
        return 1.0;
    }
    ChiSquared::new(approx.d)
        .map(|dist| dist.sf(x))
        .unwrap_or(f64::NAN)
        .clamp(0.0, 1.0)
}

fn chunked<T: Send>(
    total: usize,
    chunk: usize,
    seed: u64,
    task: impl Fn(usize, &mut RngStream) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let chunks = total.div_ceil(chunk);
    let parts: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut stream = spawn_stream(seed, c as u64);
            let len = chunk.min(total - c * chunk);
            (0..len).map(|_| task(c, &mut stream)).collect::<Result<Vec<T>>>()
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// `B` independent draws of the mixture.
pub fn sample_mixture(mixture: &MixtureNull, draws: usize, stream: &mut RngStream) -> Vec<f64> {
    let sampler = ChiSquareSampler::new(mixture.k);
    let seed = stream.fork_seed();
    chunked(draws, SIM_CHUNK, seed, |_, s| {
        Ok(mixture.lambdas.iter().map(|l| l * sampler.sample(s)).sum::<f64>())
    })
    .expect("mixture sampling is infallible")
}

fn add_one(exceed: usize, b: usize) -> f64 {
    (1 + exceed) as f64 / (b + 1) as f64
}

/// `(1 + #{S_b ≥ T_n})/(B + 1)` over `B` simulated mixture draws.
pub fn p_value_sim(
    mixture: &MixtureNull,
    statistic: f64,
    replicates: usize,
    stream: &mut RngStream,
) -> Result<f64> {
    if replicates == 0 {
        return Err(FdaError::InvalidInput("B must be at least 1".into()));
    }
    let draws = sample_mixture(mixture, replicates, stream);
    Ok(add_one(
        draws.iter().filter(|&&s| s >= statistic).count(),
        replicates,
    ))
}

/// Statistics `T*_n` from curve-level bootstrap samples drawn under the
/// restricted fit: `f*_i = x_iᵀβ̂₀ + v*_i` with `v*_i` resampled from the
/// residual curves, the coefficients refitted and `T*_n` recomputed.
pub fn bootstrap_statistics(
    fit: &FlmFit,
    restriction: &Restriction,
    replicates: usize,
    stream: &mut RngStream,
) -> Result<Vec<f64>> {
    let root = whitening(fit, restriction)?;
    let (range, sub) = fit
        .grid
        .restrict(restriction.interval.0, restriction.interval.1)?;
    let beta0 = restricted_fit(fit, restriction)?.columns(range.clone());
    let base = fit.fitted(&beta0)?;
    let residuals = fit.residual_curves.columns(range.clone());
    let rhs = restriction.rhs.columns(range);
    let projector = fit.xtx_inv.matmul(&fit.x.matrix().transpose())?;
    let n = fit.x.n();
    let m = sub.len();
    let seed = stream.fork_seed();
    chunked(replicates, BOOT_CHUNK, seed, |_, s| {
        let mut curves = base.clone();
        for i in 0..n {
            let src = residuals.row(s.index(n));
            for (c, v) in curves.row_mut(i).iter_mut().zip(src) {
                *c += v;
            }
        }
        let beta = projector.matmul(&curves)?;
        let w = root.matmul(&restriction.contrast.matmul(&beta)?.sub(&rhs)?)?;
        let mut total = 0.0;
        for row in w.iter_rows() {
            let sq: Vec<f64> = row.iter().map(|v| v * v).collect();
            total += trapezoid_integrate(&sq, &sub.points()[..m])?;
        }
        Ok(total)
    })
}

/// `(1 + #{T*_n ≥ T_n})/(B + 1)` over `B` bootstrap replicates.
pub fn p_value_boot(
    fit: &FlmFit,
    restriction: &Restriction,
    statistic: f64,
    replicates: usize,
    stream: &mut RngStream,
) -> Result<f64> {
    if replicates == 0 {
        return Err(FdaError::InvalidInput("B must be at least 1".into()));
    }
    let stats = bootstrap_statistics(fit, restriction, replicates, stream)?;
    Ok(add_one(
        stats.iter().filter(|&&s| s >= statistic).count(),
        replicates,
    ))
}

/// `u²_r = λ̂_r⁻¹ ‖∫η_w φ̂_r‖²` for `r = 1..=count`.
pub fn noncentrality(eigen: &EigenStructure, eta_w: &Matrix, count: usize) -> Result<Vec<f64>> {
    if eta_w.cols() != eigen.grid.len() {
        return Err(FdaError::GridMismatch(
            "drift does not match the eigenfunction grid".into(),
        ));
    }
    if count > eigen.m_hat {
        return Err(FdaError::ZeroEigenvalue {
            index: count,
            m_hat: eigen.m_hat,
        });
    }
    let scores: Vec<Vec<f64>> = eta_w
        .iter_rows()
        .map(|row| eigen.scores(row))
        .collect::<Result<_>>()?;
    (0..count)
        .map(|r| {
            let lambda = eigen.eigenvalues[r];
            if !(lambda > 0.0) {
                return Err(FdaError::ZeroEigenvalue {
                    index: r + 1,
                    m_hat: eigen.m_hat,
                });
            }
            Ok(scores.iter().map(|s| s[r] * s[r]).sum::<f64>() / lambda)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Methods {
    pub chi2: bool,
    pub sim: bool,
    pub boot: bool,
}

impl Methods {
    pub fn all() -> Self {
        Methods {
            chi2: true,
            sim: true,
            boot: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestOptions {
    pub methods: Methods,
    pub b_sim: usize,
    pub b_boot: usize,
    pub seed: u64,
    pub retention: Retention,
}

impl Default for TestOptions {
    fn default() -> Self {
        TestOptions {
            methods: Methods::all(),
            b_sim: 10_000,
            b_boot: 10_000,
            seed: 0,
            retention: Retention::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PValues {
    pub chi2: Option<f64>,
    pub sim: Option<f64>,
    pub boot: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub interval: (f64, f64),
    pub eigenvalues: Vec<f64>,
    pub m_hat: usize,
    pub mixture: MixtureNull,
    pub chi2_approx: Option<ChiSquareApprox>,
    pub p_values: PValues,
    pub b_sim: Option<usize>,
    pub b_boot: Option<usize>,
    pub seed: u64,
    /// Free-form echo of the run configuration.
    #[serde(default)]
    pub config: serde_json::Value,
}

/// Runs the global test on the restriction's sub-interval with the
/// requested null approximations.
pub fn global_test(fit: &FlmFit, restriction: &Restriction, options: &TestOptions) -> Result<TestReport> {
    let w = standardized_process(fit, restriction)?;
    let statistic = test_statistic(&w, &fit.grid, restriction.interval)?;
    let (range, sub) = fit
        .grid
        .restrict(restriction.interval.0, restriction.interval.1)?;
    let eigen = covariance_eigen(&fit.gamma.restrict(range, sub)?, options.retention)?;
    let mixture = MixtureNull::from_eigen(&eigen, restriction.k())?;

    let methods = options.methods;
    let chi2_approx = if methods.chi2 {
        Some(chi2_approx_params(&mixture)?)
    } else {
        None
    };
    let mut p_values = PValues {
        chi2: chi2_approx.map(|a| p_value_chi2(&a, statistic)),
        ..PValues::default()
    };
    if methods.sim {
        let mut stream = spawn_stream(options.seed, 0);
        p_values.sim = Some(p_value_sim(&mixture, statistic, options.b_sim, &mut stream)?);
    }
    if methods.boot {
        let mut stream = spawn_stream(options.seed, 1);
        p_values.boot = Some(p_value_boot(
            fit,
            restriction,
            statistic,
            options.b_boot,
            &mut stream,
        )?);
    }
    Ok(TestReport {
        statistic,
        interval: restriction.interval,
        eigenvalues: eigen.retained().to_vec(),
        m_hat: eigen.m_hat,
        mixture,
        chi2_approx,
        p_values,
        b_sim: methods.sim.then_some(options.b_sim),
        b_boot: methods.boot.then_some(options.b_boot),
        seed: options.seed,
        config: serde_json::Value::Null,
    })
}
