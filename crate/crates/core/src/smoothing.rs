//! Per-subject p-order local polynomial kernel (LPK) reconstruction with a
//! common bandwidth, and GCV bandwidth selection.
//!
//! At an evaluation point `t` the fit regresses `y_ij` on the scaled local
//! basis `((t_ij − t)/h)ʳ`, `r = 0..p`, with kernel weights `K((t_ij − t)/h)`.
//! The level coefficient is `f̂_i(t) = Σ_j w_j y_ij`, and the weights satisfy
//! `Σ w_j = 1`, `Σ w_j (t_ij − t)ʳ = 0` for `r = 1..p` exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{EvaluationGrid, FunctionalDataset, Subject};
use crate::error::{FdaError, Result};
use crate::kernels::{KernelFamily, SmootherSpec};
use crate::numerics::{solve_symmetric, Matrix};

/// Bandwidth multipliers tried when a local system is singular.
const WIDENING: [f64; 7] = [1.0, 1.5, 2.25, 3.375, 5.0625, 7.59375, 8.0];

/// Ratio `tr(A_i)/n_i` at or above which a fit counts as interpolation.
pub const INTERPOLATION_GUARD: f64 = 1.0 - 1e-8;

/// Number of default GCV candidates.
pub const DEFAULT_CANDIDATES: usize = 30;

const REFINEMENT_STEPS: usize = 2;

/// Writes the weights at `t` into `out` (same length as `times`); returns
/// `false` if even the widest fallback bandwidth leaves a singular system.
///
/// The local polynomial is expressed in `v = (s − c)/d`, with `c` and `d` the
/// kernel-weighted centre and spread of the active points; the weights do
/// not depend on the basis, and this one keeps the Gram matrix well scaled
/// when `t` sits at the edge of the data.
fn fill_weights(times: &[f64], t: f64, spec: &SmootherSpec, out: &mut [f64]) -> bool {
    let q = spec.order() + 1;
    let family = spec.family();
    for factor in WIDENING {
        let h = spec.bandwidth() * factor;
        let (lo, hi) = window(times, t, h, family);
        if hi - lo < q {
            continue;
        }
        let active: Vec<(usize, f64)> = (lo..hi)
            .filter_map(|j| {
                let k = family.eval((times[j] - t) / h);
                (k > 0.0).then_some((j, k))
            })
            .collect();
        if active.len() < q {
            continue;
        }
        let mass: f64 = active.iter().map(|&(_, k)| k).sum();
        let centre = active.iter().map(|&(j, k)| k * times[j]).sum::<f64>() / mass;
        let spread = active
            .iter()
            .map(|&(j, k)| k * (times[j] - centre).powi(2))
            .sum::<f64>()
            / mass;
        if !(spread > 0.0) {
            continue;
        }
        let spread = spread.sqrt();
        let v: Vec<f64> = active
            .iter()
            .map(|&(j, _)| (times[j] - centre) / spread)
            .collect();

        // moments Σ k_j v_j^r for r = 0..2p, normalized by the kernel mass
        let mut moments = vec![0.0; 2 * q - 1];
        for (&(_, k), &vj) in active.iter().zip(&v) {
            let mut pw = k / mass;
            for m in moments.iter_mut() {
                *m += pw;
                pw *= vj;
            }
        }
        let gram = Matrix::from_fn(q, q, |a, b| moments[a + b]);
        let v0 = (t - centre) / spread;
        let target: Vec<f64> = (0..q).map(|r| v0.powi(r as i32)).collect();
        let Ok(mut coef) = solve_symmetric(&gram, &target) else {
            continue;
        };
        let weight =
            |coef: &[f64], k: f64, vj: f64| k / mass * coef.iter().rev().fold(0.0, |acc, c| acc * vj + c);
        // iterative refinement against the reproducing identities
        for _ in 0..REFINEMENT_STEPS {
            let mut residual = target.clone();
            for (&(_, k), &vj) in active.iter().zip(&v) {
                let mut pw = weight(&coef, k, vj);
                for r in residual.iter_mut() {
                    *r -= pw;
                    pw *= vj;
                }
            }
            let Ok(delta) = solve_symmetric(&gram, &residual) else {
                break;
            };
            coef.iter_mut().zip(&delta).for_each(|(c, d)| *c += d);
        }
        out.iter_mut().for_each(|w| *w = 0.0);
        for (&(j, k), &vj) in active.iter().zip(&v) {
            out[j] = weight(&coef, k, vj);
        }
        return true;
    }
    false
}

/// Index range of design times that can carry kernel weight at `t`.
fn window(times: &[f64], t: f64, h: f64, family: KernelFamily) -> (usize, usize) {
    if !family.is_compact() {
        return (0, times.len());
    }
    let lo = times.partition_point(|&s| s < t - h);
    let hi = times.partition_point(|&s| s <= t + h);
    (lo, hi)
}

/// Empirical equivalent-kernel weights of one subject's design at `t`.
pub fn lpk_weights(times: &[f64], t: f64, spec: &SmootherSpec) -> Result<Vec<f64>> {
    let mut out = vec![0.0; times.len()];
    if fill_weights(times, t, spec, &mut out) {
        Ok(out)
    } else {
        Err(FdaError::InsufficientLocalData {
            subject: String::new(),
            location: t,
        })
    }
}

/// Fitted values at the design points and `tr(A_i)`.
fn design_fit(subject: &Subject, spec: &SmootherSpec) -> Result<(Vec<f64>, f64)> {
    let n = subject.len();
    let mut w = vec![0.0; n];
    let mut fitted = Vec::with_capacity(n);
    let mut trace = 0.0;
    for (j, &tj) in subject.times.iter().enumerate() {
        if !fill_weights(&subject.times, tj, spec, &mut w) {
            return Err(FdaError::InsufficientLocalData {
                subject: subject.id.clone(),
                location: tj,
            });
        }
        fitted.push(w.iter().zip(&subject.values).map(|(a, y)| a * y).sum());
        trace += w[j];
    }
    Ok((fitted, trace))
}

/// Reconstructed curves on a common grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveSet {
    pub grid: EvaluationGrid,
    pub subject_ids: Vec<String>,
    /// n×M matrix of `f̂_i(τ_j)`.
    pub curves: Matrix,
    /// `ŷ_ij` at each subject's own design points.
    pub fitted_at_design: Vec<Vec<f64>>,
    /// `tr(A_i)`.
    pub traces: Vec<f64>,
    pub spec: SmootherSpec,
}

impl CurveSet {
    pub fn n_subjects(&self) -> usize {
        self.curves.rows()
    }

    /// Builds a curve set from curves already on the grid (no design data).
    pub fn from_curves(grid: EvaluationGrid, curves: Matrix, spec: SmootherSpec) -> Result<Self> {
        if curves.cols() != grid.len() {
            return Err(FdaError::GridMismatch(format!(
                "{} curve columns on a grid of {} points",
                curves.cols(),
                grid.len()
            )));
        }
        let n = curves.rows();
        Ok(CurveSet {
            grid,
            subject_ids: (0..n).map(|i| i.to_string()).collect(),
            curves,
            fitted_at_design: vec![Vec::new(); n],
            traces: vec![0.0; n],
            spec,
        })
    }
}

/// LPK reconstruction of every subject on `grid` with the common `spec`.
pub fn reconstruct(
    dataset: &FunctionalDataset,
    grid: &EvaluationGrid,
    spec: &SmootherSpec,
) -> Result<CurveSet> {
    let per_subject: Vec<(Vec<f64>, Vec<f64>, f64)> = dataset
        .subjects()
        .par_iter()
        .map(|s| {
            let mut w = vec![0.0; s.len()];
            let mut curve = Vec::with_capacity(grid.len());
            for &tau in grid.points() {
                if !fill_weights(&s.times, tau, spec, &mut w) {
                    return Err(FdaError::InsufficientLocalData {
                        subject: s.id.clone(),
                        location: tau,
                    });
                }
                curve.push(w.iter().zip(&s.values).map(|(a, y)| a * y).sum());
            }
            let (fitted, trace) = design_fit(s, spec)?;
            Ok((curve, fitted, trace))
        })
        .collect::<Result<_>>()?;

    let m = grid.len();
    let mut curves = Matrix::zeros(per_subject.len(), m);
    let mut fitted_at_design = Vec::with_capacity(per_subject.len());
    let mut traces = Vec::with_capacity(per_subject.len());
    for (i, (curve, fitted, trace)) in per_subject.into_iter().enumerate() {
        curves.row_mut(i).copy_from_slice(&curve);
        fitted_at_design.push(fitted);
        traces.push(trace);
    }
    Ok(CurveSet {
        grid: grid.clone(),
        subject_ids: dataset.subjects().iter().map(|s| s.id.clone()).collect(),
        curves,
        fitted_at_design,
        traces,
        spec: *spec,
    })
}

/// `GCV(h) = n⁻¹ Σ_i ‖y_i − ŷ_i‖² / (1 − tr(A_i)/n_i)²`.
///
/// Bandwidths that interpolate some subject (`tr(A_i)/n_i ≥ 1 − 1e-8`) or
/// leave a local system singular score `+∞`.
pub fn gcv_score(dataset: &FunctionalDataset, spec: &SmootherSpec) -> Result<f64> {
    match gcv_strict(dataset, spec) {
        Ok(v) => Ok(v),
        Err(FdaError::DegenerateFit { .. }) | Err(FdaError::InsufficientLocalData { .. }) => {
            Ok(f64::INFINITY)
        }
        Err(e) => Err(e),
    }
}

/// Like [`gcv_score`] but reports infeasible bandwidths as errors.
pub fn gcv_strict(dataset: &FunctionalDataset, spec: &SmootherSpec) -> Result<f64> {
    let terms: Vec<f64> = dataset
        .subjects()
        .par_iter()
        .map(|s| {
            let (fitted, trace) = design_fit(s, spec)?;
            let ratio = trace / s.len() as f64;
            if ratio >= INTERPOLATION_GUARD {
                return Err(FdaError::DegenerateFit {
                    subject: s.id.clone(),
                    ratio,
                });
            }
            let rss: f64 = s.values.iter().zip(&fitted).map(|(y, f)| (y - f) * (y - f)).sum();
            Ok(rss / (1.0 - ratio).powi(2))
        })
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GcvResult {
    pub candidates: Vec<f64>,
    pub scores: Vec<f64>,
    pub h_star: f64,
}

/// Minimizes GCV over `candidates`; ties go to the smaller bandwidth.
///
/// Only the family and order of `template` are used.
pub fn select_bandwidth(
    dataset: &FunctionalDataset,
    template: &SmootherSpec,
    candidates: &[f64],
) -> Result<GcvResult> {
    if candidates.is_empty() {
        return Err(FdaError::InvalidInput("no bandwidth candidates".into()));
    }
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|&h| gcv_score(dataset, &template.with_bandwidth(h)?))
        .collect::<Result<_>>()?;
    let h_star = argmin_bandwidth(candidates, &scores).ok_or(FdaError::NoFeasibleBandwidth)?;
    Ok(GcvResult {
        candidates: candidates.to_vec(),
        scores,
        h_star,
    })
}

fn argmin_bandwidth(candidates: &[f64], scores: &[f64]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (&h, &s) in candidates.iter().zip(scores) {
        if !s.is_finite() {
            continue;
        }
        best = match best {
            None => Some((h, s)),
            Some((bh, bs)) if s < bs || (s == bs && h < bh) => Some((h, s)),
            keep => keep,
        };
    }
    best.map(|(h, _)| h)
}

/// `count` log-spaced values from `lower` to `upper` inclusive.
pub fn log_spaced(lower: f64, upper: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lower];
    }
    let (la, lb) = (lower.ln(), upper.ln());
    (0..count)
        .map(|i| (la + (lb - la) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Default GCV candidates: 30 log-spaced bandwidths from half the median
/// within-subject gap to a quarter of the interval length.
pub fn default_candidates(dataset: &FunctionalDataset) -> Result<Vec<f64>> {
    let (a, b) = dataset.interval();
    let upper = 0.25 * (b - a);
    let gap = dataset.median_gap().ok_or_else(|| {
        FdaError::InvalidInput("every subject has a single observation; no gap to scale by".into())
    })?;
    let lower = (0.5 * gap).min(upper);
    Ok(log_spaced(lower, upper, DEFAULT_CANDIDATES))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(family: KernelFamily, p: usize, h: f64) -> SmootherSpec {
        SmootherSpec::new(family, p, h).unwrap()
    }

    fn uniform_times(n: usize) -> Vec<f64> {
        (1..=n).map(|j| j as f64 / (n + 1) as f64).collect()
    }

    #[test]
    fn weights_sum_to_one() {
        let times = [0.05, 0.11, 0.2, 0.33, 0.41, 0.6, 0.72, 0.9];
        for family in [
            KernelFamily::Gaussian,
            KernelFamily::Epanechnikov,
            KernelFamily::Uniform,
        ] {
            for p in [1, 3] {
                let w = lpk_weights(&times, 0.37, &spec(family, p, 0.3)).unwrap();
                let s: f64 = w.iter().sum();
                assert!((s - 1.0).abs() < 1e-10, "{family} p={p}: {s}");
            }
        }
    }

    #[test]
    fn isolated_point_fallback() {
        // the window cannot reach 0.5 even after widening by 8
        let times = [0.0, 0.5, 10.0];
        let r = lpk_weights(&times, 10.0, &spec(KernelFamily::Uniform, 1, 0.1));
        assert!(matches!(r, Err(FdaError::InsufficientLocalData { .. })));
        // here widening to 1.5h reaches the neighbour at 9.9
        let times = [9.0, 9.9, 10.0];
        let w = lpk_weights(&times, 10.0, &spec(KernelFamily::Uniform, 1, 0.08)).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((w[2] - 1.0).abs() < 1e-12, "weight {w:?}");
    }

    #[test]
    fn symmetric_design_symmetric_weights() {
        let times = [0.2, 0.35, 0.5, 0.65, 0.8];
        let w = lpk_weights(&times, 0.5, &spec(KernelFamily::Epanechnikov, 1, 0.4)).unwrap();
        for j in 0..5 {
            assert!((w[j] - w[4 - j]).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_and_linear_reproduced() {
        let times = uniform_times(15);
        let grid = EvaluationGrid::uniform(0.0, 1.0, 41).unwrap();
        let subjects = vec![
            Subject::new("c", times.clone(), vec![4.2; 15]),
            Subject::new("l", times.clone(), times.iter().map(|t| 2.0 + 3.0 * t).collect()),
        ];
        let ds = FunctionalDataset::new(subjects, (0.0, 1.0)).unwrap();
        let cs = reconstruct(&ds, &grid, &spec(KernelFamily::Gaussian, 1, 0.1)).unwrap();
        for (j, &tau) in grid.points().iter().enumerate() {
            assert!((cs.curves[(0, j)] - 4.2).abs() < 1e-12);
            assert!((cs.curves[(1, j)] - (2.0 + 3.0 * tau)).abs() < 1e-9);
        }
        for i in 0..2 {
            assert!(cs.traces[i] > 0.0 && cs.traces[i] <= 15.0);
        }
    }

    #[test]
    fn gcv_zero_for_exact_fit() {
        let times = uniform_times(12);
        let ds = FunctionalDataset::new(
            vec![Subject::new(
                "l",
                times.clone(),
                times.iter().map(|t| 1.0 - t).collect(),
            )],
            (0.0, 1.0),
        )
        .unwrap();
        let g = gcv_score(&ds, &spec(KernelFamily::Gaussian, 1, 0.2)).unwrap();
        assert!(g.abs() < 1e-25, "{g}");
    }

    #[test]
    fn gcv_tiny_uniform_bandwidth_is_infinite() {
        let times = uniform_times(10);
        let ds = FunctionalDataset::new(
            vec![Subject::new(
                "a",
                times.clone(),
                times.iter().map(|t| t.sin()).collect(),
            )],
            (0.0, 1.0),
        )
        .unwrap();
        let g = gcv_score(&ds, &spec(KernelFamily::Uniform, 1, 1e-4)).unwrap();
        assert!(g.is_infinite());
        assert!(matches!(
            select_bandwidth(&ds, &spec(KernelFamily::Uniform, 1, 1.0), &[1e-4, 2e-4]),
            Err(FdaError::NoFeasibleBandwidth)
        ));
    }

    #[test]
    fn gcv_large_bandwidth_matches_ols() {
        // Oracle: per-subject straight-line OLS residuals, hat trace 2. A
        // uniform kernel wider than the interval weights every point equally.
        let designs = [
            vec![0.1, 0.2, 0.45, 0.5, 0.8, 0.95],
            vec![0.0, 0.3, 0.31, 0.6, 0.7, 0.75, 1.0],
        ];
        let values = [
            vec![1.0, 0.4, 2.2, 1.9, 0.3, 1.1],
            vec![-1.0, 0.5, 0.2, 0.9, 2.5, 1.7, 0.0],
        ];
        let mut oracle = 0.0;
        let mut subjects = Vec::new();
        for (k, (t, y)) in designs.iter().zip(&values).enumerate() {
            let n = t.len() as f64;
            let tb = t.iter().sum::<f64>() / n;
            let yb = y.iter().sum::<f64>() / n;
            let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - tb) * (b - yb)).sum();
            let sxx: f64 = t.iter().map(|a| (a - tb) * (a - tb)).sum();
            let slope = sxy / sxx;
            let rss: f64 = t
                .iter()
                .zip(y)
                .map(|(a, b)| (b - yb - slope * (a - tb)).powi(2))
                .sum();
            oracle += rss / (1.0 - 2.0 / n).powi(2);
            subjects.push(Subject::new(k.to_string(), t.clone(), y.clone()));
        }
        oracle /= 2.0;
        let ds = FunctionalDataset::new(subjects, (0.0, 1.0)).unwrap();
        let g = gcv_score(&ds, &spec(KernelFamily::Uniform, 1, 10.0)).unwrap();
        assert!((g - oracle).abs() < 1e-9 * oracle, "{g} vs {oracle}");
    }

    #[test]
    fn selection_rules() {
        let times = uniform_times(20);
        let ds = FunctionalDataset::new(
            vec![Subject::new(
                "a",
                times.clone(),
                times
                    .iter()
                    .map(|t| (6.0 * t).sin() + 0.1 * (37.0 * t).cos())
                    .collect(),
            )],
            (0.0, 1.0),
        )
        .unwrap();
        let tmpl = spec(KernelFamily::Gaussian, 1, 1.0);
        let single = select_bandwidth(&ds, &tmpl, &[0.07]).unwrap();
        assert_eq!(single.h_star, 0.07);
        assert_eq!(argmin_bandwidth(&[0.2, 0.1, 0.3], &[1.0, 1.0, 2.0]), Some(0.1));
        assert_eq!(argmin_bandwidth(&[0.2, 0.1], &[f64::INFINITY, 3.0]), Some(0.1));
        assert_eq!(argmin_bandwidth(&[0.2], &[f64::INFINITY]), None);
    }

    #[test]
    fn default_candidate_range() {
        let times = uniform_times(40);
        let ds = FunctionalDataset::new(vec![Subject::new("a", times.clone(), vec![0.0; 40])], (0.0, 1.0))
            .unwrap();
        let c = default_candidates(&ds).unwrap();
        assert_eq!(c.len(), 30);
        assert!((c[0] - 0.5 / 41.0).abs() < 1e-12);
        assert!((c[29] - 0.25).abs() < 1e-12);
    }
}
