#![allow(dead_code)]

use std::f64::consts::PI;

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + h * i as f64);
    }
    s * h / 3.0
}

fn phi(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

/// CDF of `l1·χ²₁ + l2·(χ²₁ + χ²₁)` (independent terms).
///
/// The pair sums to `l2·χ²₂`, an exponential with mean `2·l2`; conditioning
/// on the first term with `χ²₁ = U²` gives a smooth one-dimensional integral.
pub fn mixture_cdf_one_two(l1: f64, l2: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let upper = (x / l1).sqrt();
    simpson(
        |u| 2.0 * phi(u) * (1.0 - (-(x - l1 * u * u) / (2.0 * l2)).exp()),
        0.0,
        upper,
        4000,
    )
}

/// Solves `f(x) = target` for increasing `f` by bisection on `[lo, hi]`.
pub fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with divisor `n − 1`.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Standard normal CDF by Simpson integration of the density.
pub fn normal_cdf(z: f64) -> f64 {
    if z < 0.0 {
        return 1.0 - normal_cdf(-z);
    }
    0.5 + simpson(phi, 0.0, z, 2000)
}

/// Anderson–Darling statistic for normality with estimated mean and
/// variance, including the small-sample correction `1 + 0.75/n + 2.25/n²`.
pub fn anderson_darling_normal(sample: &[f64]) -> f64 {
    let n = sample.len();
    let m = mean(sample);
    let sd = variance(sample).sqrt();
    let mut z: Vec<f64> = sample.iter().map(|x| (x - m) / sd).collect();
    z.sort_by(f64::total_cmp);
    let nf = n as f64;
    let s: f64 = (0..n)
        .map(|i| {
            let f_lo = normal_cdf(z[i]).clamp(1e-300, 1.0 - 1e-16);
            let f_hi = normal_cdf(z[n - 1 - i]).clamp(1e-300, 1.0 - 1e-16);
            (2 * i + 1) as f64 * (f_lo.ln() + (1.0 - f_hi).ln())
        })
        .sum();
    let a2 = -nf - s / nf;
    a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf))
}
