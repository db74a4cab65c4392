//! Gaussian conditional bridges N(I_t, σ_t² I_d) pinned at both endpoints.
//!
//! The mean curve I_t is a natural cubic spline through the endpoints and K
//! interior knots. The variance curve is parameterized through its square:
//! v_t = σ_t² is a clamped cubic spline through (0,0), (t_k, σ_k²), (1,0)
//! with end slopes +ν² and −ν². Clamped splines reproduce cubics exactly, so
//! the base bridge variance ν²t(1−t) is representable with zero error — and
//! the end slopes ±ν² are exactly the small-time variance growth rate of a
//! bridge with diffusion scale ν, which keeps the conditional drift finite
//! and correct near the endpoints.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::paths::spline::{self, Boundary};

/// Hard cap on interior knots.
pub const MAX_KNOTS: usize = 30;
/// Lower clamp on σ_t inside drift denominators (v is clamped at its square).
pub const SIGMA_FLOOR: f64 = 1e-6;
/// Time draws for objectives and drift-matching targets are restricted to
/// [TIME_MARGIN, 1 − TIME_MARGIN] to stay clear of the σ_t → 0 endpoints.
pub const TIME_MARGIN: f64 = 1e-3;

/// One draw X_t = I(t) + σ(t)·z from the conditional path.
#[derive(Debug, Clone)]
pub struct PathSample {
    pub t: f64,
    pub x_t: Array1<f64>,
    /// The standard-normal draw used, so the sample is reproducible.
    pub z: Array1<f64>,
}

/// Spline-parameterized Gaussian conditional path between fixed endpoints.
/// Immutable once constructed; spline coefficients are precomputed.
#[derive(Debug, Clone)]
pub struct ConditionalPath {
    x0: Array1<f64>,
    x1: Array1<f64>,
    knot_times: Array1<f64>,
    mean_knots: Array2<f64>,
    std_knots: Array1<f64>,
    nu: f64,
    diverged: bool,
    /// Full knot grid [0, knot_times…, 1].
    tau: Vec<f64>,
    /// (K+2)×d mean values on the full grid and their spline second derivs.
    mean_vals: Array2<f64>,
    mean_m2: Array2<f64>,
    /// Variance values σ_k² on the full grid (0 at the ends) + second derivs.
    var_vals: Vec<f64>,
    var_m2: Vec<f64>,
}

impl ConditionalPath {
    pub fn new(
        x0: Array1<f64>,
        x1: Array1<f64>,
        knot_times: Array1<f64>,
        mean_knots: Array2<f64>,
        std_knots: Array1<f64>,
        nu: f64,
    ) -> Result<Self> {
        let d = x0.len();
        let k = knot_times.len();
        if d == 0 || x1.len() != d {
            return Err(Error::Shape("path endpoints must share a dimension >= 1".into()));
        }
        if k > MAX_KNOTS {
            return Err(Error::Domain(format!(
                "at most {MAX_KNOTS} interior knots supported, got {k}"
            )));
        }
        if mean_knots.dim() != (k, d) || std_knots.len() != k {
            return Err(Error::Shape(format!(
                "knot arrays must be {k}x{d} and {k}, got {:?} and {}",
                mean_knots.dim(),
                std_knots.len()
            )));
        }
        if knot_times.iter().any(|&t| t <= 0.0 || t >= 1.0)
            || knot_times.windows(2).into_iter().any(|w| w[1] <= w[0])
        {
            return Err(Error::Domain(
                "knot times must be strictly increasing inside (0,1)".into(),
            ));
        }
        if std_knots.iter().any(|&s| !s.is_finite() || s < 0.0) {
            return Err(Error::Domain("std knots must be finite and >= 0".into()));
        }
        if !nu.is_finite() || nu <= 0.0 {
            return Err(Error::Domain(format!("nu must be finite and > 0, got {nu}")));
        }
        if x0.iter().chain(x1.iter()).chain(mean_knots.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("path data must be finite".into()));
        }

        let mut tau = Vec::with_capacity(k + 2);
        tau.push(0.0);
        tau.extend(knot_times.iter().copied());
        tau.push(1.0);

        let mut mean_vals = Array2::zeros((k + 2, d));
        for j in 0..d {
            mean_vals[(0, j)] = x0[j];
            for i in 0..k {
                mean_vals[(i + 1, j)] = mean_knots[(i, j)];
            }
            mean_vals[(k + 1, j)] = x1[j];
        }
        let mut mean_m2 = Array2::zeros((k + 2, d));
        let mut col = vec![0.0; k + 2];
        for j in 0..d {
            for i in 0..k + 2 {
                col[i] = mean_vals[(i, j)];
            }
            let m2 = spline::second_derivatives(&tau, &col, Boundary::Natural)?;
            for i in 0..k + 2 {
                mean_m2[(i, j)] = m2[i];
            }
        }

        let mut var_vals = vec![0.0; k + 2];
        for i in 0..k {
            var_vals[i + 1] = std_knots[i] * std_knots[i];
        }
        let var_m2 = spline::second_derivatives(
            &tau,
            &var_vals,
            Boundary::Clamped {
                start_slope: nu * nu,
                end_slope: -nu * nu,
            },
        )?;

        Ok(Self {
            x0,
            x1,
            knot_times,
            mean_knots,
            std_knots,
            nu,
            diverged: false,
            tau,
            mean_vals,
            mean_m2,
            var_vals,
            var_m2,
        })
    }

    pub fn x0(&self) -> ArrayView1<'_, f64> {
        self.x0.view()
    }

    pub fn x1(&self) -> ArrayView1<'_, f64> {
        self.x1.view()
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn knot_times(&self) -> ArrayView1<'_, f64> {
        self.knot_times.view()
    }

    pub fn mean_knots(&self) -> ArrayView2<'_, f64> {
        self.mean_knots.view()
    }

    pub fn std_knots(&self) -> ArrayView1<'_, f64> {
        self.std_knots.view()
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// True when the spline optimizer aborted and returned its initialization.
    pub fn diverged(&self) -> bool {
        self.diverged
    }

    pub(crate) fn mark_diverged(mut self) -> Self {
        self.diverged = true;
        self
    }

    /// Mean, mean time-derivative, σ, and σ time-derivative at t ∈ [0,1].
    ///
    /// σ is exactly 0 at t ∈ {0,1}; its reported derivative applies the
    /// [`SIGMA_FLOOR`] clamp in the denominator, so it is only meaningful
    /// where σ is not vanishing.
    pub fn spline_eval(&self, t: f64) -> Result<(Array1<f64>, Array1<f64>, f64, f64)> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("spline_eval time must be in [0,1], got {t}")));
        }
        let (j, a, b, h) = spline::locate(&self.tau, t);
        let d = self.dim();
        let mut mean = Array1::zeros(d);
        let mut dmean = Array1::zeros(d);
        let mut yj = [0.0; 2];
        let mut mj = [0.0; 2];
        for c in 0..d {
            yj[0] = self.mean_vals[(j, c)];
            yj[1] = self.mean_vals[(j + 1, c)];
            mj[0] = self.mean_m2[(j, c)];
            mj[1] = self.mean_m2[(j + 1, c)];
            let (v, dv) = spline::eval_segment(&yj, &mj, 0, a, b, h);
            mean[c] = v;
            dmean[c] = dv;
        }
        let (v, vp) = self.variance_at(t);
        let sigma = if t == 0.0 || t == 1.0 { 0.0 } else { v.max(0.0).sqrt() };
        let dsigma = vp / (2.0 * sigma.max(SIGMA_FLOOR));
        Ok((mean, dmean, sigma, dsigma))
    }

    /// Raw variance spline value and derivative (value may dip slightly
    /// negative between knots; drift code clamps it).
    fn variance_at(&self, t: f64) -> (f64, f64) {
        spline::eval_with_deriv(&self.tau, &self.var_vals, &self.var_m2, t)
    }

    /// X_t = I(t) + σ(t)·z with z ~ N(0, I_d).
    pub fn sample_conditional<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> Result<PathSample> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Domain(format!(
                "sample_conditional time must be in (0,1), got {t}"
            )));
        }
        let (mean, _, sigma, _) = self.spline_eval(t)?;
        let z = Array1::from_shape_fn(self.dim(), |_| rng.sample::<f64, _>(StandardNormal));
        let x_t = Array1::from_shape_fn(self.dim(), |j| mean[j] + sigma * z[j]);
        Ok(PathSample { t, x_t, z })
    }

    /// Forward conditional drift
    /// u(x,t) = ∂_t I + (∂_tσ/σ − ν²/(2σ²))·(x − I), computed through the
    /// variance spline as u = I' + (v' − ν²)/(2v)·(x − I).
    pub fn conditional_drift(&self, x_t: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
        self.drift_parts(x_t, t, false)
    }

    /// Drift of the time-reversed bridge at the same (x, t):
    /// −u(x,t) + ν²·(I − x)/σ², i.e. the reverse SDE drift −u + ν²∇log p_t
    /// with the Gaussian score analytic. Positive sign convention for
    /// integration in reversed time s = 1 − t.
    pub fn reverse_conditional_drift(&self, x_t: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
        self.drift_parts(x_t, t, true)
    }

    fn drift_parts(&self, x_t: ArrayView1<f64>, t: f64, reverse: bool) -> Result<Array1<f64>> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Domain(format!(
                "conditional drift is singular outside (0,1), got t={t}"
            )));
        }
        if x_t.len() != self.dim() {
            return Err(Error::Shape("drift input dimension mismatch".into()));
        }
        let (mean, dmean, _, _) = self.spline_eval(t)?;
        let (v, vp) = self.variance_at(t);
        let vc = v.max(SIGMA_FLOOR * SIGMA_FLOOR);
        let nu2 = self.nu * self.nu;
        let c = (vp - nu2) / (2.0 * vc);
        Ok(Array1::from_shape_fn(self.dim(), |j| {
            let u = dmean[j] + c * (x_t[j] - mean[j]);
            if reverse {
                -u + nu2 * (mean[j] - x_t[j]) / vc
            } else {
                u
            }
        }))
    }
}

/// Times of K interior knots, uniformly spaced inside (0,1).
pub fn uniform_knot_times(k: usize) -> Array1<f64> {
    Array1::from_shape_fn(k, |i| (i + 1) as f64 / (k + 1) as f64)
}

/// The base bridge between x0 and x1 with diffusion scale ν: mean knots on
/// the straight line, σ knots at ν√(t(1−t)). Its conditional drift is
/// exactly (x1 − x)/(1 − t).
pub fn brownian_bridge_path(
    x0: ArrayView1<f64>,
    x1: ArrayView1<f64>,
    nu: f64,
    k_knots: usize,
) -> Result<ConditionalPath> {
    let times = uniform_knot_times(k_knots);
    let d = x0.len();
    let mean_knots = Array2::from_shape_fn((k_knots, d), |(i, j)| {
        (1.0 - times[i]) * x0[j] + times[i] * x1[j]
    });
    let std_knots = Array1::from_shape_fn(k_knots, |i| nu * (times[i] * (1.0 - times[i])).sqrt());
    ConditionalPath::new(
        x0.to_owned(),
        x1.to_owned(),
        times,
        mean_knots,
        std_knots,
        nu,
    )
}
