//! Cubic spline interpolation with natural or clamped boundary conditions.
//!
//! A spline through (τ₀,y₀)…(τₙ₋₁,yₙ₋₁) is determined by the second
//! derivatives M at the knots, which solve a tridiagonal system. Natural
//! boundaries set M = 0 at the ends; clamped boundaries prescribe the end
//! slopes instead (and therefore reproduce any cubic polynomial exactly,
//! which natural boundaries do not).

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Boundary {
    Natural,
    Clamped { start_slope: f64, end_slope: f64 },
}

/// Second derivatives of the interpolating cubic spline at the knots.
pub fn second_derivatives(tau: &[f64], y: &[f64], boundary: Boundary) -> Result<Vec<f64>> {
    let n = tau.len();
    if n < 2 || y.len() != n {
        return Err(Error::Shape(format!(
            "spline needs matching knot/value arrays of length >= 2 (got {} / {})",
            n,
            y.len()
        )));
    }
    if tau.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("spline knot times must be strictly increasing".into()));
    }
    // Tridiagonal system rows: sub[i]·M[i−1] + diag[i]·M[i] + sup[i]·M[i+1] = rhs[i].
    let h: Vec<f64> = tau.windows(2).map(|w| w[1] - w[0]).collect();
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for i in 1..n - 1 {
        sub[i] = h[i - 1] / 6.0;
        diag[i] = (h[i - 1] + h[i]) / 3.0;
        sup[i] = h[i] / 6.0;
        rhs[i] = (y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1];
    }
    match boundary {
        Boundary::Natural => {
            diag[0] = 1.0;
            diag[n - 1] = 1.0;
        }
        Boundary::Clamped {
            start_slope,
            end_slope,
        } => {
            diag[0] = h[0] / 3.0;
            sup[0] = h[0] / 6.0;
            rhs[0] = (y[1] - y[0]) / h[0] - start_slope;
            sub[n - 1] = h[n - 2] / 6.0;
            diag[n - 1] = h[n - 2] / 3.0;
            rhs[n - 1] = end_slope - (y[n - 1] - y[n - 2]) / h[n - 2];
        }
    }
    // Thomas algorithm.
    let mut c_star = vec![0.0; n];
    let mut d_star = vec![0.0; n];
    c_star[0] = sup[0] / diag[0];
    d_star[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c_star[i - 1];
        c_star[i] = sup[i] / m;
        d_star[i] = (rhs[i] - sub[i] * d_star[i - 1]) / m;
    }
    let mut m2 = vec![0.0; n];
    m2[n - 1] = d_star[n - 1];
    for i in (0..n - 1).rev() {
        m2[i] = d_star[i] - c_star[i] * m2[i + 1];
    }
    Ok(m2)
}

/// Index j and barycentric pair (a, b) of the segment containing t, with
/// a = (τ_{j+1}−t)/h, b = (t−τ_j)/h. t outside [τ₀, τₙ₋₁] clamps to the
/// nearest segment (extrapolation is never used by callers).
pub fn locate(tau: &[f64], t: f64) -> (usize, f64, f64, f64) {
    let n = tau.len();
    let j = tau.partition_point(|&g| g <= t).clamp(1, n - 1) - 1;
    let h = tau[j + 1] - tau[j];
    let a = (tau[j + 1] - t) / h;
    let b = (t - tau[j]) / h;
    (j, a, b, h)
}

/// Spline value and first derivative at t given knot values and second
/// derivatives.
pub fn eval_with_deriv(tau: &[f64], y: &[f64], m2: &[f64], t: f64) -> (f64, f64) {
    let (j, a, b, h) = locate(tau, t);
    eval_segment(y, m2, j, a, b, h)
}

/// Same as [`eval_with_deriv`] with the segment already located — lets
/// callers evaluate many splines on a shared knot grid with one lookup.
#[inline]
pub fn eval_segment(y: &[f64], m2: &[f64], j: usize, a: f64, b: f64, h: f64) -> (f64, f64) {
    let value = a * y[j]
        + b * y[j + 1]
        + ((a * a * a - a) * m2[j] + (b * b * b - b) * m2[j + 1]) * h * h / 6.0;
    let deriv = (y[j + 1] - y[j]) / h
        + ((-3.0 * a * a + 1.0) * m2[j] + (3.0 * b * b - 1.0) * m2[j + 1]) * h / 6.0;
    (value, deriv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn interpolates_knots_exactly() {
        let tau = vec![0.0, 0.2, 0.55, 0.8, 1.0];
        let y = vec![1.0, -0.5, 2.0, 0.3, 0.9];
        for &bc in &[
            Boundary::Natural,
            Boundary::Clamped {
                start_slope: 2.0,
                end_slope: -1.0,
            },
        ] {
            let m2 = second_derivatives(&tau, &y, bc).unwrap();
            for (i, &t) in tau.iter().enumerate() {
                let (v, _) = eval_with_deriv(&tau, &y, &m2, t);
                assert_abs_diff_eq!(v, y[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn natural_spline_through_collinear_points_is_the_line() {
        let tau = grid(9);
        let y: Vec<f64> = tau.iter().map(|&t| -3.0 + 5.0 * t).collect();
        let m2 = second_derivatives(&tau, &y, Boundary::Natural).unwrap();
        for k in 0..=100 {
            let t = k as f64 / 100.0;
            let (v, dv) = eval_with_deriv(&tau, &y, &m2, t);
            assert_abs_diff_eq!(v, -3.0 + 5.0 * t, epsilon = 1e-10);
            assert_abs_diff_eq!(dv, 5.0, epsilon = 1e-10);
        }
    }

    /// Clamped boundaries reproduce polynomials up to cubic exactly; the
    /// quadratic ν²t(1−t) with end slopes ±ν² is the case the variance
    /// spline relies on.
    #[test]
    fn clamped_spline_reproduces_bridge_variance_exactly() {
        let nu2 = 1.3f64 * 1.3;
        let tau = grid(10);
        let y: Vec<f64> = tau.iter().map(|&t| nu2 * t * (1.0 - t)).collect();
        let m2 = second_derivatives(
            &tau,
            &y,
            Boundary::Clamped {
                start_slope: nu2,
                end_slope: -nu2,
            },
        )
        .unwrap();
        for k in 0..=500 {
            let t = k as f64 / 500.0;
            let (v, dv) = eval_with_deriv(&tau, &y, &m2, t);
            assert_abs_diff_eq!(v, nu2 * t * (1.0 - t), epsilon = 1e-13);
            assert_abs_diff_eq!(dv, nu2 * (1.0 - 2.0 * t), epsilon = 1e-12);
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let tau = vec![0.0, 0.3, 0.6, 1.0];
        let y = vec![0.0, 1.0, -1.0, 0.5];
        let m2 = second_derivatives(&tau, &y, Boundary::Natural).unwrap();
        let h = 1e-6;
        for &t in &[0.1, 0.35, 0.5, 0.77, 0.95] {
            let (_, dv) = eval_with_deriv(&tau, &y, &m2, t);
            let (vp, _) = eval_with_deriv(&tau, &y, &m2, t + h);
            let (vm, _) = eval_with_deriv(&tau, &y, &m2, t - h);
            assert_abs_diff_eq!(dv, (vp - vm) / (2.0 * h), epsilon = 1e-6);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(second_derivatives(&[0.0], &[1.0], Boundary::Natural).is_err());
        assert!(second_derivatives(&[0.0, 0.0], &[1.0, 2.0], Boundary::Natural).is_err());
        assert!(second_derivatives(&[0.0, 1.0], &[1.0], Boundary::Natural).is_err());
    }
}
