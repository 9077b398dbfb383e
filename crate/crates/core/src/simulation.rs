//! Simulated functional data and Monte Carlo studies.
//!
//! The model is `y_ij = η(t_ij) + v_i(t_ij) + ε_ij` with
//! `η(t) = a₀ + a₁cos(2πt) + a₂sin(2πt)`, subject effects
//! `v_i(t) = b_i0 + b_i1 cos(2πt) + b_i2 sin(2πt)`, `b_i ~ N(0, diag(σ₀², σ₁², σ₂²))`,
//! and heteroscedastic noise `ε_ij ~ N(0, σ_ε²(1 + t_ij))`. Subjects are
//! scheduled at `t_j = j/(m+1)` and each point is dropped with probability
//! `r_miss`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{EvaluationGrid, FunctionalDataset, Subject};
use crate::error::{FdaError, Result};
use crate::estimation::{estimate_mean, ideal_mean, MeanEstimate};
use crate::flm::{fit_flm, DesignMatrix, Restriction};
use crate::inference::{global_test, TestOptions};
use crate::kernels::SmootherSpec;
use crate::numerics::{spawn_stream, Matrix, RngStream};
use crate::smoothing::{default_candidates, gcv_score, reconstruct, select_bandwidth, CurveSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    /// Scheduled design points per subject.
    pub m: usize,
    pub r_miss: f64,
    /// `(a₀, a₁, a₂)`.
    pub a_coeffs: [f64; 3],
    /// `(σ₀², σ₁², σ₂², σ_ε²)`.
    pub sigma2s: [f64; 4],
    /// Size of the uniform metric grid on [0, 1].
    pub grid_size: usize,
    pub seed: u64,
    /// Subjects thinned below this count are redrawn.
    pub min_points: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 20,
            m: 40,
            r_miss: 0.1,
            a_coeffs: [1.2, 2.3, 4.2],
            sigma2s: [1.0, 2.0, 3.0, 0.1],
            grid_size: 400,
            seed: 1,
            min_points: 4,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(FdaError::InvalidInput("simulation needs n >= 2".into()));
        }
        if self.m < 4 {
            return Err(FdaError::InvalidInput("simulation needs m >= 4".into()));
        }
        if !(0.0..1.0).contains(&self.r_miss) {
            return Err(FdaError::InvalidInput(format!(
                "r_miss {} not in [0, 1)",
                self.r_miss
            )));
        }
        if self.sigma2s.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(FdaError::InvalidInput("variances must be finite and >= 0".into()));
        }
        if self.a_coeffs.iter().any(|a| !a.is_finite()) {
            return Err(FdaError::InvalidInput("mean coefficients must be finite".into()));
        }
        if self.grid_size < 2 {
            return Err(FdaError::InvalidInput(
                "metric grid needs at least 2 points".into(),
            ));
        }
        if self.min_points > self.m {
            return Err(FdaError::InvalidInput(format!(
                "min_points {} exceeds m = {}",
                self.min_points, self.m
            )));
        }
        Ok(())
    }

    pub fn eta(&self, t: f64) -> f64 {
        let [a0, a1, a2] = self.a_coeffs;
        a0 + a1 * (2.0 * PI * t).cos() + a2 * (2.0 * PI * t).sin()
    }

    /// `γ(s, t) = σ₀² + σ₁²cos(2πs)cos(2πt) + σ₂²sin(2πs)sin(2πt)`.
    pub fn gamma(&self, s: f64, t: f64) -> f64 {
        let [s0, s1, s2, _] = self.sigma2s;
        let (a, b) = (2.0 * PI * s, 2.0 * PI * t);
        s0 + s1 * a.cos() * b.cos() + s2 * a.sin() * b.sin()
    }

    pub fn noise_variance(&self, t: f64) -> f64 {
        self.sigma2s[3] * (1.0 + t)
    }

    pub fn metric_grid(&self) -> Result<EvaluationGrid> {
        EvaluationGrid::uniform(0.0, 1.0, self.grid_size)
    }

    pub fn design(&self) -> Vec<f64> {
        (1..=self.m).map(|j| j as f64 / (self.m + 1) as f64).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SimSample {
    pub dataset: FunctionalDataset,
    pub grid: EvaluationGrid,
    /// n×M, `f_i(τ_j)` including any mean offsets.
    pub true_curves: Matrix,
    /// `η(τ_j)`.
    pub true_mean: Vec<f64>,
    /// `γ(τ_j, τ_l)`.
    pub true_gamma: Matrix,
}

/// One draw from the model with the default common mean.
pub fn generate_sample(config: &SimConfig, stream: &mut RngStream) -> Result<SimSample> {
    generate_with_offsets(config, |_, _| 0.0, stream)
}

/// One draw with subject-specific mean offsets `δ(i, t)` added to `η`.
pub fn generate_with_offsets(
    config: &SimConfig,
    offset: impl Fn(usize, f64) -> f64,
    stream: &mut RngStream,
) -> Result<SimSample> {
    config.validate()?;
    let grid = config.metric_grid()?;
    let design = config.design();
    let sd: Vec<f64> = config.sigma2s[..3].iter().map(|v| v.sqrt()).collect();
    let width = (config.n - 1).to_string().len();
    let mut subjects = Vec::with_capacity(config.n);
    let mut true_curves = Matrix::zeros(config.n, grid.len());
    for i in 0..config.n {
        let b: Vec<f64> = sd.iter().map(|s| s * stream.standard_normal()).collect();
        let f = |t: f64| {
            config.eta(t) + offset(i, t) + b[0] + b[1] * (2.0 * PI * t).cos() + b[2] * (2.0 * PI * t).sin()
        };
        let kept = loop {
            let kept: Vec<f64> = design
                .iter()
                .copied()
                .filter(|_| stream.uniform() >= config.r_miss)
                .collect();
            if kept.len() >= config.min_points {
                break kept;
            }
        };
        let values = kept
            .iter()
            .map(|&t| f(t) + config.noise_variance(t).sqrt() * stream.standard_normal())
            .collect();
        subjects.push(Subject::new(format!("s{i:0width$}"), kept, values));
        for (c, &tau) in true_curves.row_mut(i).iter_mut().zip(grid.points()) {
            *c = f(tau);
        }
    }
    let dataset = FunctionalDataset::new(subjects, (0.0, 1.0))?;
    let p = grid.points();
    Ok(SimSample {
        true_mean: p.iter().map(|&t| config.eta(t)).collect(),
        true_gamma: Matrix::from_fn(p.len(), p.len(), |j, l| config.gamma(p[j], p[l])),
        true_curves,
        grid,
        dataset,
    })
}

fn check_grid(grid: &EvaluationGrid, sample: &SimSample) -> Result<()> {
    if grid != &sample.grid {
        return Err(FdaError::GridMismatch(
            "estimate is not on the sample's metric grid".into(),
        ));
    }
    Ok(())
}

/// `(nM)⁻¹ ΣΣ (f̂_i(τ_j) − f_i(τ_j))²`.
pub fn mse_f(curves: &CurveSet, sample: &SimSample) -> Result<f64> {
    check_grid(&curves.grid, sample)?;
    if curves.curves.rows() != sample.true_curves.rows() {
        return Err(FdaError::InvalidInput(
            "curve count differs from the sample".into(),
        ));
    }
    let diff = curves.curves.sub(&sample.true_curves)?;
    Ok(diff.as_slice().iter().map(|d| d * d).sum::<f64>() / diff.as_slice().len() as f64)
}

/// `M⁻¹ Σ (η̂(τ_j) − η(τ_j))²`.
pub fn mse_eta(mean: &MeanEstimate, sample: &SimSample) -> Result<f64> {
    check_grid(&mean.grid, sample)?;
    let m = mean.values.len() as f64;
    Ok(mean
        .values
        .iter()
        .zip(&sample.true_mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / m)
}

pub const BANDWIDTH_MULTIPLIERS: [f64; 5] = [0.5, 0.8, 1.0, 1.25, 2.0];

/// One replicate at one bandwidth multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthRow {
    pub replicate: usize,
    pub multiplier: f64,
    pub h_star: f64,
    pub bandwidth: f64,
    pub gcv: f64,
    pub mse_f: f64,
    pub mse_eta: f64,
    /// MSE of the mean of the true curves, the same for every multiplier.
    pub mse_eta_ideal: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandwidthStudy {
    pub rows: Vec<BandwidthRow>,
    /// Replicates whose smoothing failed, with the error text.
    pub dropped: Vec<(usize, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSummary {
    pub multiplier: f64,
    pub median_gcv: f64,
    pub median_mse_f: f64,
    pub median_mse_eta: f64,
    pub median_mse_eta_ideal: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl BandwidthStudy {
    /// Medians per multiplier, in the order the multipliers first appear.
    pub fn summary(&self) -> Vec<BandwidthSummary> {
        let mut mults: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !mults.contains(&r.multiplier) {
                mults.push(r.multiplier);
            }
        }
        mults
            .into_iter()
            .map(|m| {
                let rows: Vec<&BandwidthRow> = self.rows.iter().filter(|r| r.multiplier == m).collect();
                let col =
                    |f: fn(&BandwidthRow) -> f64| median(&mut rows.iter().map(|r| f(r)).collect::<Vec<_>>());
                BandwidthSummary {
                    multiplier: m,
                    median_gcv: col(|r| r.gcv),
                    median_mse_f: col(|r| r.mse_f),
                    median_mse_eta: col(|r| r.mse_eta),
                    median_mse_eta_ideal: col(|r| r.mse_eta_ideal),
                }
            })
            .collect()
    }
}

fn bandwidth_replicate(
    config: &SimConfig,
    template: &SmootherSpec,
    multipliers: &[f64],
    replicate: usize,
) -> Result<Vec<BandwidthRow>> {
    let mut stream = spawn_stream(config.seed, replicate as u64);
    let sample = generate_sample(config, &mut stream)?;
    let candidates = default_candidates(&sample.dataset)?;
    let h_star = select_bandwidth(&sample.dataset, template, &candidates)?.h_star;
    let ideal = mse_eta(&ideal_mean(&sample.true_curves, &sample.grid)?, &sample)?;
    multipliers
        .iter()
        .map(|&mult| {
            let spec = template.with_bandwidth(mult * h_star)?;
            let curves = reconstruct(&sample.dataset, &sample.grid, &spec)?;
            Ok(BandwidthRow {
                replicate,
                multiplier: mult,
                h_star,
                bandwidth: spec.bandwidth(),
                gcv: gcv_score(&sample.dataset, &spec)?,
                mse_f: mse_f(&curves, &sample)?,
                mse_eta: mse_eta(&estimate_mean(&curves)?, &sample)?,
                mse_eta_ideal: ideal,
            })
        })
        .collect()
}

/// Bandwidth study: per replicate, select `h*` by GCV and score the
/// reconstructions at each `multiplier·h*`. Replicate `r` draws from
/// `spawn_stream(config.seed, r)`.
pub fn run_bandwidth_study(
    config: &SimConfig,
    replicates: usize,
    multipliers: &[f64],
    template: &SmootherSpec,
) -> Result<BandwidthStudy> {
    config.validate()?;
    if replicates == 0 {
        return Err(FdaError::InvalidInput("need at least one replicate".into()));
    }
    let results: Vec<Result<Vec<BandwidthRow>>> = (0..replicates)
        .into_par_iter()
        .map(|r| bandwidth_replicate(config, template, multipliers, r))
        .collect();
    let mut study = BandwidthStudy {
        rows: Vec::new(),
        dropped: Vec::new(),
    };
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(rows) => study.rows.extend(rows),
            Err(e) => study.dropped.push((r, e.to_string())),
        }
    }
    Ok(study)
}

/// `γ*(s₁,t₁,s₂,t₂) = γ(s₁,t₂)γ(s₂,t₁) + γ(s₁,s₂)γ(t₁,t₂)`, the covariance of
/// the limiting process of `√n(γ̂ − γ)` for Gaussian subject effects.
pub fn gaussian_gamma_star(gamma: impl Fn(f64, f64) -> f64, s1: f64, t1: f64, s2: f64, t2: f64) -> f64 {
    gamma(s1, t2) * gamma(s2, t1) + gamma(s1, s2) * gamma(t1, t2)
}

/// Two-group functional linear model built on the simulation model: the
/// second group's mean is `η(t) + shift`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlmScenario {
    pub config: SimConfig,
    pub shift: f64,
    /// Fixed reconstruction bandwidth; `None` selects it by GCV per replicate.
    pub bandwidth: Option<f64>,
    pub template: SmootherSpec,
    pub interval: (f64, f64),
}

impl FlmScenario {
    /// Subjects alternate between the two groups.
    pub fn groups(&self) -> Vec<usize> {
        (0..self.config.n).map(|i| i % 2).collect()
    }

    pub fn draw(&self, stream: &mut RngStream) -> Result<SimSample> {
        let shift = self.shift;
        generate_with_offsets(&self.config, |i, _| if i % 2 == 1 { shift } else { 0.0 }, stream)
    }

    /// Draws, reconstructs and fits one replicate; returns the fit and the
    /// zero-difference restriction on the scenario interval.
    pub fn fit(&self, stream: &mut RngStream) -> Result<(crate::flm::FlmFit, Restriction)> {
        let sample = self.draw(stream)?;
        let spec = match self.bandwidth {
            Some(h) => self.template.with_bandwidth(h)?,
            None => {
                let cands = default_candidates(&sample.dataset)?;
                let h = select_bandwidth(&sample.dataset, &self.template, &cands)?.h_star;
                self.template.with_bandwidth(h)?
            }
        };
        let curves = reconstruct(&sample.dataset, &sample.grid, &spec)?;
        let x = DesignMatrix::group_indicators(&self.groups(), 2)?;
        let fit = fit_flm(&curves, &x)?;
        let contrast = Matrix::from_rows(&[vec![1.0, -1.0]])?;
        let restriction = Restriction::zero(contrast, sample.grid.len(), self.interval)?;
        Ok((fit, restriction))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectionRate {
    pub rejections: usize,
    pub replicates: usize,
    pub rate: f64,
    /// Binomial standard error `√(rate(1 − rate)/replicates)`.
    pub std_error: f64,
}

impl RejectionRate {
    fn new(rejections: usize, replicates: usize) -> Self {
        let rate = rejections as f64 / replicates as f64;
        RejectionRate {
            rejections,
            replicates,
            rate,
            std_error: (rate * (1.0 - rate) / replicates as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SizePowerResult {
    pub chi2: Option<RejectionRate>,
    pub sim: Option<RejectionRate>,
    pub boot: Option<RejectionRate>,
    pub dropped: usize,
}

/// Empirical rejection rates at `level` for each requested p-value method.
/// Replicate `r` draws data from `spawn_stream(seed, r)` and uses
/// `options.seed + r` for its p-value streams.
pub fn size_power_study(
    scenario: &FlmScenario,
    level: f64,
    replicates: usize,
    options: &TestOptions,
    seed: u64,
) -> Result<SizePowerResult> {
    if replicates == 0 {
        return Err(FdaError::InvalidInput("need at least one replicate".into()));
    }
    let reports: Vec<Option<[Option<bool>; 3]>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut stream = spawn_stream(seed, r as u64);
            let (fit, restriction) = scenario.fit(&mut stream).ok()?;
            let opts = TestOptions {
                seed: options.seed.wrapping_add(r as u64),
                ..options.clone()
            };
            let report = global_test(&fit, &restriction, &opts).ok()?;
            let p = report.p_values;
            Some([p.chi2, p.sim, p.boot].map(|v| v.map(|p| p <= level)))
        })
        .collect();
    let done: Vec<[Option<bool>; 3]> = reports.iter().flatten().copied().collect();
    let rate = |k: usize| -> Option<RejectionRate> {
        let decided: Vec<bool> = done.iter().filter_map(|d| d[k]).collect();
        (!decided.is_empty())
            .then(|| RejectionRate::new(decided.iter().filter(|&&b| b).count(), decided.len()))
    };
    Ok(SizePowerResult {
        chi2: rate(0),
        sim: rate(1),
        boot: rate(2),
        dropped: replicates - done.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::Methods;
    use crate::kernels::KernelFamily;

    fn small() -> SimConfig {
        SimConfig {
            n: 6,
            m: 12,
            grid_size: 21,
            ..SimConfig::default()
        }
    }

    #[test]
    fn noiseless_sample_is_the_mean() {
        let cfg = SimConfig {
            sigma2s: [0.0; 4],
            ..small()
        };
        let s = generate_sample(&cfg, &mut spawn_stream(1, 0)).unwrap();
        for subj in s.dataset.subjects() {
            for (t, y) in subj.times.iter().zip(&subj.values) {
                assert_eq!(*y, cfg.eta(*t));
            }
        }
    }

    #[test]
    fn no_missingness_keeps_all_points() {
        let cfg = SimConfig {
            r_miss: 0.0,
            ..small()
        };
        let s = generate_sample(&cfg, &mut spawn_stream(2, 0)).unwrap();
        assert!(s.dataset.subjects().iter().all(|x| x.len() == 12));
    }

    #[test]
    fn deterministic_and_redraws_sparse_subjects() {
        let cfg = SimConfig {
            r_miss: 0.7,
            min_points: 5,
            ..small()
        };
        let a = generate_sample(&cfg, &mut spawn_stream(3, 4)).unwrap();
        let b = generate_sample(&cfg, &mut spawn_stream(3, 4)).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.true_curves, b.true_curves);
        assert!(a.dataset.subjects().iter().all(|x| x.len() >= 5));
    }

    #[test]
    fn true_gamma_formula() {
        let cfg = small();
        let s = generate_sample(&cfg, &mut spawn_stream(1, 1)).unwrap();
        let p = s.grid.points();
        for j in [0, 5, 20] {
            for l in [0, 7, 13] {
                let expected = 1.0
                    + 2.0 * (2.0 * PI * p[j]).cos() * (2.0 * PI * p[l]).cos()
                    + 3.0 * (2.0 * PI * p[j]).sin() * (2.0 * PI * p[l]).sin();
                assert!((s.true_gamma[(j, l)] - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mse_metrics() {
        let cfg = small();
        let s = generate_sample(&cfg, &mut spawn_stream(1, 2)).unwrap();
        let spec = SmootherSpec::new(KernelFamily::Gaussian, 1, 0.1).unwrap();
        let exact = CurveSet::from_curves(s.grid.clone(), s.true_curves.clone(), spec).unwrap();
        assert_eq!(mse_f(&exact, &s).unwrap(), 0.0);
        let shifted = Matrix::from_fn(6, 21, |i, j| s.true_curves[(i, j)] + 0.3);
        let cs = CurveSet::from_curves(s.grid.clone(), shifted, spec).unwrap();
        assert!((mse_f(&cs, &s).unwrap() - 0.09).abs() < 1e-12);
        let big = SimConfig {
            grid_size: 4001,
            ..small()
        };
        let s = generate_sample(&big, &mut spawn_stream(1, 2)).unwrap();
        let tilted = MeanEstimate {
            grid: s.grid.clone(),
            values: s
                .grid
                .points()
                .iter()
                .zip(&s.true_mean)
                .map(|(t, e)| e + 2.0 * t)
                .collect(),
            n: 6,
        };
        assert!((mse_eta(&tilted, &s).unwrap() - 4.0 / 3.0).abs() < 1e-3);
        let other = EvaluationGrid::uniform(0.0, 1.0, 5).unwrap();
        let wrong = MeanEstimate {
            grid: other,
            values: vec![0.0; 5],
            n: 6,
        };
        assert!(matches!(mse_eta(&wrong, &s), Err(FdaError::GridMismatch(_))));
    }

    #[test]
    fn gamma_star_examples() {
        let g = |s: f64, t: f64| 1.0 + s * t + (s - t).cos();
        let t = 0.3;
        assert!((gaussian_gamma_star(g, t, t, t, t) - 2.0 * g(t, t).powi(2)).abs() < 1e-14);
        let a = gaussian_gamma_star(g, 0.1, 0.4, 0.7, 0.2);
        let b = gaussian_gamma_star(g, 0.7, 0.2, 0.1, 0.4);
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn bandwidth_study_single_replicate() {
        let cfg = small();
        let spec = SmootherSpec::new(KernelFamily::Gaussian, 1, 0.1).unwrap();
        let study = run_bandwidth_study(&cfg, 1, &BANDWIDTH_MULTIPLIERS, &spec).unwrap();
        assert_eq!(study.rows.len(), 5);
        assert_eq!(study.summary().len(), 5);
        assert!(study
            .rows
            .iter()
            .all(|r| r.mse_eta_ideal == study.rows[0].mse_eta_ideal));
    }

    #[test]
    fn level_one_always_rejects() {
        let scenario = FlmScenario {
            config: SimConfig { n: 10, ..small() },
            shift: 0.0,
            bandwidth: Some(0.1),
            template: SmootherSpec::new(KernelFamily::Gaussian, 1, 0.1).unwrap(),
            interval: (0.0, 1.0),
        };
        let opts = TestOptions {
            methods: Methods {
                chi2: true,
                sim: true,
                boot: false,
            },
            b_sim: 200,
            ..TestOptions::default()
        };
        let res = size_power_study(&scenario, 1.0, 5, &opts, 7).unwrap();
        assert_eq!(res.sim.unwrap().rate, 1.0);
        assert_eq!(res.chi2.unwrap().rate, 1.0);
        assert!(res.boot.is_none());
    }
}
