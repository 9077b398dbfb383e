//! Kernel families, their standard functionals and the equivalent kernel of
//! a p-order local polynomial fit.
//!
//! For a kernel `K` the functionals are the moments `B_r = ∫K(t)tʳdt`, the
//! roughness `V = ∫K(t)²dt` and the self-convolution
//! `K⁽¹⁾(t) = ∫K(s)K(s+t)ds`. The equivalent kernel of order `p` is
//! `K*(t) = e₁ᵀS⁻¹(1, t, …, tᵖ)ᵀ K(t)` with `S_ab = B_{a+b}` (0-based).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FdaError, Result};
use crate::numerics::{simpson, solve_symmetric, Matrix};

/// Quadrature nodes used for functionals without closed forms.
pub const QUADRATURE_POINTS: usize = 2001;

/// Half-width of the integration range used for the Gaussian kernel.
pub const GAUSSIAN_TRUNCATION: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    Epanechnikov,
    Uniform,
}

impl KernelFamily {
    #[inline]
    pub fn eval(self, t: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => (-0.5 * t * t).exp() / (2.0 * PI).sqrt(),
            KernelFamily::Epanechnikov => {
                if t.abs() <= 1.0 {
                    0.75 * (1.0 - t * t)
                } else {
                    0.0
                }
            }
            KernelFamily::Uniform => {
                if t.abs() <= 1.0 {
                    0.5
                } else {
                    0.0
                }
            }
        }
    }

    /// Radius of the region carrying (numerically) all of the kernel's mass.
    pub fn effective_radius(self) -> f64 {
        match self {
            KernelFamily::Gaussian => GAUSSIAN_TRUNCATION,
            _ => 1.0,
        }
    }

    pub fn is_compact(self) -> bool {
        !matches!(self, KernelFamily::Gaussian)
    }

    /// `∫K(t)tʳdt`.
    pub fn moment(self, r: usize) -> f64 {
        if r % 2 == 1 {
            return 0.0;
        }
        let rf = r as f64;
        match self {
            // (r-1)!! for the standard normal
            KernelFamily::Gaussian => (1..r).step_by(2).map(|k| k as f64).product(),
            KernelFamily::Epanechnikov => 1.5 * (1.0 / (rf + 1.0) - 1.0 / (rf + 3.0)),
            KernelFamily::Uniform => 1.0 / (rf + 1.0),
        }
    }

    /// `∫K(t)²dt`.
    pub fn roughness(self) -> f64 {
        match self {
            KernelFamily::Gaussian => 1.0 / (2.0 * PI.sqrt()),
            KernelFamily::Epanechnikov => 0.6,
            KernelFamily::Uniform => 0.5,
        }
    }

    /// `∫K(s)K(s+t)ds`.
    pub fn self_convolution(self, t: f64) -> f64 {
        let a = t.abs();
        match self {
            KernelFamily::Gaussian => (-0.25 * t * t).exp() / (2.0 * PI.sqrt()),
            KernelFamily::Epanechnikov => {
                if a >= 2.0 {
                    0.0
                } else {
                    3.0 / 160.0 * (2.0 - a).powi(3) * (a * a + 6.0 * a + 4.0)
                }
            }
            KernelFamily::Uniform => {
                if a >= 2.0 {
                    0.0
                } else {
                    (2.0 - a) / 4.0
                }
            }
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Epanechnikov => "epanechnikov",
            KernelFamily::Uniform => "uniform",
        };
        f.write_str(name)
    }
}

impl FromStr for KernelFamily {
    type Err = FdaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(KernelFamily::Gaussian),
            "epanechnikov" | "epa" => Ok(KernelFamily::Epanechnikov),
            "uniform" | "box" => Ok(KernelFamily::Uniform),
            other => Err(FdaError::InvalidInput(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// Kernel family, odd polynomial order and bandwidth of an LPK smoother.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmootherSpec {
    family: KernelFamily,
    order: usize,
    bandwidth: f64,
}

impl SmootherSpec {
    pub fn new(family: KernelFamily, order: usize, bandwidth: f64) -> Result<Self> {
        if order.is_multiple_of(2) {
            return Err(FdaError::InvalidInput(format!(
                "polynomial order must be odd, got {order}"
            )));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(FdaError::InvalidInput(format!(
                "bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(SmootherSpec {
            family,
            order,
            bandwidth,
        })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn with_bandwidth(&self, bandwidth: f64) -> Result<Self> {
        SmootherSpec::new(self.family, self.order, bandwidth)
    }
}

pub fn eval_kernel(spec: &SmootherSpec, t: f64) -> f64 {
    spec.family.eval(t)
}

#[derive(Debug, Clone)]
enum Source {
    Family(KernelFamily),
    Equivalent(EquivalentKernel),
}

/// Moments, roughness and self-convolution of a kernel.
#[derive(Debug, Clone)]
pub struct KernelFunctionals {
    moments: Vec<f64>,
    roughness: f64,
    source: Source,
}

impl KernelFunctionals {
    /// `B_r`; panics if `r` exceeds the computed range.
    pub fn moment(&self, r: usize) -> f64 {
        self.moments[r]
    }

    pub fn max_moment(&self) -> usize {
        self.moments.len() - 1
    }

    /// `V = ∫K²`.
    pub fn roughness(&self) -> f64 {
        self.roughness
    }

    /// `K⁽¹⁾(t)`.
    pub fn self_convolution(&self, t: f64) -> f64 {
        match &self.source {
            Source::Family(f) => f.self_convolution(t),
            Source::Equivalent(k) => {
                let r = k.spec.family.effective_radius();
                let lo = (-r).max(-r - t);
                let hi = r.min(r - t);
                if hi <= lo {
                    return 0.0;
                }
                simpson(|s| k.eval(s) * k.eval(s + t), lo, hi, QUADRATURE_POINTS)
            }
        }
    }
}

/// Functionals of the spec's kernel, moments up to `max(max_r, p + 1)`.
pub fn kernel_functionals(spec: &SmootherSpec, max_r: usize) -> KernelFunctionals {
    let top = max_r.max(spec.order + 1);
    KernelFunctionals {
        moments: (0..=top).map(|r| spec.family.moment(r)).collect(),
        roughness: spec.family.roughness(),
        source: Source::Family(spec.family),
    }
}

/// The p-order equivalent kernel `K*`.
#[derive(Debug, Clone)]
pub struct EquivalentKernel {
    spec: SmootherSpec,
    moment_matrix: Matrix,
    // S⁻¹e₁
    coefficients: Vec<f64>,
}

impl EquivalentKernel {
    pub fn spec(&self) -> &SmootherSpec {
        &self.spec
    }

    pub fn moment_matrix(&self) -> &Matrix {
        &self.moment_matrix
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.spec.family.eval(t);
        if k == 0.0 {
            return 0.0;
        }
        // Horner on the polynomial part
        let poly = self.coefficients.iter().rev().fold(0.0, |acc, c| acc * t + c);
        poly * k
    }

    /// Functionals of `K*` by composite Simpson quadrature over the support.
    pub fn functionals(&self, max_r: usize) -> KernelFunctionals {
        let top = max_r.max(self.spec.order + 1);
        let r = self.spec.family.effective_radius();
        let moments = (0..=top)
            .map(|p| {
                if p % 2 == 1 {
                    0.0
                } else {
                    simpson(|t| self.eval(t) * t.powi(p as i32), -r, r, QUADRATURE_POINTS)
                }
            })
            .collect();
        let roughness = simpson(|t| self.eval(t).powi(2), -r, r, QUADRATURE_POINTS);
        KernelFunctionals {
            moments,
            roughness,
            source: Source::Equivalent(self.clone()),
        }
    }
}

pub fn equivalent_kernel(spec: &SmootherSpec) -> Result<EquivalentKernel> {
    let q = spec.order + 1;
    let moment_matrix = Matrix::from_fn(q, q, |a, b| spec.family.moment(a + b));
    let mut e1 = vec![0.0; q];
    e1[0] = 1.0;
    let coefficients = solve_symmetric(&moment_matrix, &e1)?;
    Ok(EquivalentKernel {
        spec: *spec,
        moment_matrix,
        coefficients,
    })
}
