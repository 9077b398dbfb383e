use crate::error::{FdaError, Result};

/// Composite trapezoid rule on a strictly increasing grid.
pub fn trapezoid_integrate(values: &[f64], grid: &[f64]) -> Result<f64> {
    check_grid(values.len(), grid)?;
    Ok(grid
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum())
}

/// Per-node weights of the composite trapezoid rule, so that
/// `Σ ω_j v_j == trapezoid_integrate(v, grid)`.
pub fn trapezoid_weights(grid: &[f64]) -> Result<Vec<f64>> {
    check_grid(grid.len(), grid)?;
    let m = grid.len();
    let mut w = vec![0.0; m];
    for j in 0..m - 1 {
        let half = 0.5 * (grid[j + 1] - grid[j]);
        w[j] += half;
        w[j + 1] += half;
    }
    Ok(w)
}

fn check_grid(len: usize, grid: &[f64]) -> Result<()> {
    if len != grid.len() {
        return Err(FdaError::GridMismatch(format!(
            "{} values on a grid of {} points",
            len,
            grid.len()
        )));
    }
    if grid.len() < 2 {
        return Err(FdaError::GridMismatch("grid needs at least two points".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(FdaError::GridMismatch("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Composite Simpson rule with `points` nodes (rounded up to odd) on `[a, b]`.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, points: usize) -> f64 {
    let n = (points.max(3) - 1) / 2 * 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let x = a + h * i as f64;
        acc += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    acc * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(a: f64, b: f64, m: usize) -> Vec<f64> {
        (0..m).map(|j| a + (b - a) * j as f64 / (m - 1) as f64).collect()
    }

    #[test]
    fn constant_exact() {
        let g = uniform(-1.0, 2.5, 17);
        let v = vec![3.0; 17];
        assert!((trapezoid_integrate(&v, &g).unwrap() - 10.5).abs() < 1e-14);
    }

    #[test]
    fn linear_exact() {
        let g = uniform(0.0, 1.0, 11);
        assert!((trapezoid_integrate(&g, &g).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn square_close() {
        // ∫₀¹ t² dt = 1/3; trapezoid error is (b-a)h²/12 · 2 = 1/(6·400²) ≈ 1.04e-6
        let g = uniform(0.0, 1.0, 401);
        let v: Vec<f64> = g.iter().map(|t| t * t).collect();
        assert!((trapezoid_integrate(&v, &g).unwrap() - 1.0 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn mismatch_errors() {
        let g = uniform(0.0, 1.0, 5);
        assert!(matches!(
            trapezoid_integrate(&[1.0; 4], &g),
            Err(FdaError::GridMismatch(_))
        ));
        assert!(trapezoid_integrate(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn weights_match_rule() {
        let g = vec![0.0, 0.1, 0.35, 0.4, 1.0];
        let v = vec![1.0, -2.0, 0.5, 3.0, 4.0];
        let w = trapezoid_weights(&g).unwrap();
        let s: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((s - trapezoid_integrate(&v, &g).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn simpson_cubic_exact() {
        let v = simpson(|x| x * x * x - x, 0.0, 2.0, 11);
        assert!((v - 2.0).abs() < 1e-13);
    }
}
