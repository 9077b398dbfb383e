//! Ragged per-subject observations and evaluation grids.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{FdaError, Result};

/// One subject's design times and responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Subject {
    pub fn new(id: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Self {
        Subject {
            id: id.into(),
            times,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Noisy discrete observations `y_ij` at `t_ij` for subjects on `[a, b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDataset {
    subjects: Vec<Subject>,
    interval: (f64, f64),
}

impl FunctionalDataset {
    /// Validates and assembles a dataset. Times must be strictly increasing
    /// within each subject and lie inside `interval`.
    pub fn new(subjects: Vec<Subject>, interval: (f64, f64)) -> Result<Self> {
        let (a, b) = interval;
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(FdaError::InvalidInput(format!("invalid interval [{a}, {b}]")));
        }
        if subjects.is_empty() {
            return Err(FdaError::EmptyDataset);
        }
        for s in &subjects {
            if s.times.len() != s.values.len() {
                return Err(FdaError::InvalidInput(format!(
                    "subject {}: {} times but {} values",
                    s.id,
                    s.times.len(),
                    s.values.len()
                )));
            }
            if s.is_empty() {
                return Err(FdaError::InvalidInput(format!(
                    "subject {} has no observations",
                    s.id
                )));
            }
            if s.times.iter().chain(&s.values).any(|x| !x.is_finite()) {
                return Err(FdaError::InvalidInput(format!(
                    "subject {} has non-finite observations",
                    s.id
                )));
            }
            for w in s.times.windows(2) {
                if w[1] == w[0] {
                    return Err(FdaError::DuplicateTimePoint {
                        subject: s.id.clone(),
                        t: w[0],
                    });
                }
                if w[1] < w[0] {
                    return Err(FdaError::InvalidInput(format!(
                        "subject {}: times are not increasing",
                        s.id
                    )));
                }
            }
            if s.times[0] < a || s.times[s.len() - 1] > b {
                return Err(FdaError::InvalidInput(format!(
                    "subject {} has times outside [{a}, {b}]",
                    s.id
                )));
            }
        }
        Ok(FunctionalDataset { subjects, interval })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    /// `N = Σ n_i`.
    pub fn total_observations(&self) -> usize {
        self.subjects.iter().map(Subject::len).sum()
    }

    /// `m̃ = (n⁻¹ Σ n_i⁻¹)⁻¹`.
    pub fn harmonic_mean_points(&self) -> f64 {
        let n = self.subjects.len() as f64;
        n / self.subjects.iter().map(|s| 1.0 / s.len() as f64).sum::<f64>()
    }

    /// Median of all consecutive within-subject time gaps.
    pub fn median_gap(&self) -> Option<f64> {
        let mut gaps: Vec<f64> = self
            .subjects
            .iter()
            .flat_map(|s| s.times.windows(2).map(|w| w[1] - w[0]))
            .collect();
        if gaps.is_empty() {
            return None;
        }
        gaps.sort_by(f64::total_cmp);
        let mid = gaps.len() / 2;
        Some(if gaps.len() % 2 == 1 {
            gaps[mid]
        } else {
            0.5 * (gaps[mid - 1] + gaps[mid])
        })
    }

    /// Same design, responses replaced subject by subject.
    pub fn with_values(&self, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != self.subjects.len() {
            return Err(FdaError::InvalidInput("value set does not match subjects".into()));
        }
        let subjects = self
            .subjects
            .iter()
            .zip(values)
            .map(|(s, v)| Subject::new(s.id.clone(), s.times.clone(), v))
            .collect();
        FunctionalDataset::new(subjects, self.interval)
    }
}

/// Uniform evaluation points `τ_1 < … < τ_M` with `τ_1 = a`, `τ_M = b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationGrid {
    points: Vec<f64>,
}

impl EvaluationGrid {
    pub fn uniform(a: f64, b: f64, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(FdaError::GridMismatch(format!("grid needs M >= 2, got {m}")));
        }
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(FdaError::GridMismatch(format!("invalid grid range [{a}, {b}]")));
        }
        let step = (b - a) / (m - 1) as f64;
        let mut points: Vec<f64> = (0..m).map(|j| a + step * j as f64).collect();
        points[m - 1] = b;
        Ok(EvaluationGrid { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn spacing(&self) -> f64 {
        (self.end() - self.start()) / (self.len() - 1) as f64
    }

    /// Index range and sub-grid of the points lying in `[lower, upper]`.
    pub fn restrict(&self, lower: f64, upper: f64) -> Result<(Range<usize>, EvaluationGrid)> {
        let tol = 1e-9 * self.spacing();
        let start = self.points.partition_point(|&t| t < lower - tol);
        let end = self.points.partition_point(|&t| t <= upper + tol);
        if end < start + 2 {
            return Err(FdaError::EmptyInterval { lower, upper });
        }
        Ok((
            start..end,
            EvaluationGrid {
                points: self.points[start..end].to_vec(),
            },
        ))
    }
}
