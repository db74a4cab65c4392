//! Keypoint bookkeeping and guidance math.
//!
//! A small set of aligned keypoint pairs — each with a fixed trajectory
//! connecting its source point to its target point — steers the transport of
//! all remaining samples. A sample starting at x₀ is assigned the keypoint
//! whose source point is nearest in L2, and the guidance potential penalizes
//! changes of the L1 distance to that keypoint along the way:
//!
//! ```text
//! G(x_t, x₀) = α · (d₁(x_t, x_tⁱ) − d₁(x₀, x₀ⁱ))²
//! ```
//!
//! Because the coefficient of ∇G in the controlled dynamics is the clipped
//! projection [`g_coefficient`], the associated [`hamiltonian`] is the convex
//! conjugate of the running cost L(u) = ½‖u‖² + |uᵀ∇G| + (σ²/2)ΔG, with
//! maximizer u* = a − g·∇G.

use ndarray::{Array1, Array2, Array3, ArrayView1};

use crate::error::{Error, Result};

/// Tie-break-free metric used to assign each sample to a keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssignmentMetric {
    #[default]
    L2,
}

/// Metric inside the guidance potential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuidanceMetric {
    #[default]
    L1,
}

/// Aligned keypoint pairs with their fixed trajectories on a shared time grid.
#[derive(Debug, Clone)]
pub struct KeypointSet {
    source_points: Array2<f64>,
    target_points: Array2<f64>,
    /// N×T×d positions; row 0 of each trajectory is the source point, row T−1
    /// the target point.
    trajectories: Array3<f64>,
    time_grid: Array1<f64>,
}

impl KeypointSet {
    pub fn new(
        source_points: Array2<f64>,
        target_points: Array2<f64>,
        trajectories: Array3<f64>,
        time_grid: Array1<f64>,
    ) -> Result<Self> {
        let (n, d) = source_points.dim();
        let t = time_grid.len();
        if n == 0 {
            return Err(Error::Shape("keypoint set must be non-empty".into()));
        }
        if target_points.dim() != (n, d) {
            return Err(Error::Shape("keypoint source/target shape mismatch".into()));
        }
        if trajectories.dim() != (n, t, d) {
            return Err(Error::Shape(format!(
                "keypoint trajectories must be {}x{}x{}, got {:?}",
                n,
                t,
                d,
                trajectories.dim()
            )));
        }
        if t < 2 || time_grid[0] != 0.0 || time_grid[t - 1] != 1.0 {
            return Err(Error::Domain(
                "keypoint time grid must start at 0 and end at 1 with >= 2 points".into(),
            ));
        }
        if time_grid.windows(2).into_iter().any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("keypoint time grid must be increasing".into()));
        }
        if source_points.iter().any(|v| !v.is_finite())
            || target_points.iter().any(|v| !v.is_finite())
            || trajectories.iter().any(|v| !v.is_finite())
        {
            return Err(Error::Domain("keypoint data must be finite".into()));
        }
        for i in 0..n {
            for j in 0..d {
                if trajectories[(i, 0, j)] != source_points[(i, j)]
                    || trajectories[(i, t - 1, j)] != target_points[(i, j)]
                {
                    return Err(Error::Domain(format!(
                        "trajectory {i} does not start/end at its source/target point"
                    )));
                }
            }
        }
        Ok(Self {
            source_points,
            target_points,
            trajectories,
            time_grid,
        })
    }

    /// Keypoints whose trajectories are straight lines sampled on a uniform
    /// grid of `t_count` points.
    pub fn linear(
        source_points: Array2<f64>,
        target_points: Array2<f64>,
        t_count: usize,
    ) -> Result<Self> {
        let (n, d) = source_points.dim();
        if t_count < 2 {
            return Err(Error::Domain("linear trajectories need >= 2 grid points".into()));
        }
        let time_grid =
            Array1::from_shape_fn(t_count, |k| k as f64 / (t_count - 1) as f64);
        let mut trajectories = Array3::zeros((n, t_count, d));
        for i in 0..n {
            for (k, &t) in time_grid.iter().enumerate() {
                for j in 0..d {
                    let (a, b) = (source_points[(i, j)], target_points[(i, j)]);
                    trajectories[(i, k, j)] = if k == 0 {
                        a
                    } else if k == t_count - 1 {
                        b
                    } else {
                        (1.0 - t) * a + t * b
                    };
                }
            }
        }
        Self::new(source_points, target_points, trajectories, time_grid)
    }

    pub fn len(&self) -> usize {
        self.source_points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // construction enforces N >= 1
    }

    pub fn dim(&self) -> usize {
        self.source_points.ncols()
    }

    pub fn source_points(&self) -> &Array2<f64> {
        &self.source_points
    }

    pub fn target_points(&self) -> &Array2<f64> {
        &self.target_points
    }

    pub fn trajectories(&self) -> &Array3<f64> {
        &self.trajectories
    }

    pub fn time_grid(&self) -> &Array1<f64> {
        &self.time_grid
    }
}

/// Immutable bundle of keypoints plus the guidance strength α. All methods
/// are pure; the context can be shared freely across threads.
#[derive(Debug, Clone)]
pub struct GuidanceContext {
    pub keypoints: KeypointSet,
    pub alpha: f64,
    pub assignment_metric: AssignmentMetric,
    pub guidance_metric: GuidanceMetric,
}

impl GuidanceContext {
    pub fn new(keypoints: KeypointSet, alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::Domain(format!(
                "guidance strength must be finite and >= 0, got {alpha}"
            )));
        }
        Ok(Self {
            keypoints,
            alpha,
            assignment_metric: AssignmentMetric::L2,
            guidance_metric: GuidanceMetric::L1,
        })
    }

    /// Index of the keypoint whose source point is L2-nearest to `x0`;
    /// ties break to the lowest index.
    pub fn assign_keypoint(&self, x0: ArrayView1<f64>) -> usize {
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for (i, row) in self.keypoints.source_points.outer_iter().enumerate() {
            let mut d2 = 0.0;
            for (a, b) in x0.iter().zip(row.iter()) {
                let diff = a - b;
                d2 += diff * diff;
            }
            if d2 < best {
                best = d2;
                arg = i;
            }
        }
        arg
    }

    /// Position of keypoint `i` at time `t`, linearly interpolated on the
    /// trajectory's time grid.
    pub fn keypoint_position(&self, i: usize, t: f64) -> Result<Array1<f64>> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!(
                "keypoint_position time must lie in [0,1], got {t}"
            )));
        }
        let grid = &self.keypoints.time_grid;
        let traj = self.keypoints.trajectories.index_axis(ndarray::Axis(0), i);
        let t_len = grid.len();
        // First grid index with grid[idx] >= t.
        let hi = grid.as_slice().unwrap().partition_point(|&g| g < t);
        if hi == 0 {
            return Ok(traj.row(0).to_owned());
        }
        if hi >= t_len {
            return Ok(traj.row(t_len - 1).to_owned());
        }
        if grid[hi] == t {
            return Ok(traj.row(hi).to_owned());
        }
        let (t0, t1) = (grid[hi - 1], grid[hi]);
        let w = (t - t0) / (t1 - t0);
        let (a, b) = (traj.row(hi - 1), traj.row(hi));
        Ok(Array1::from_shape_fn(a.len(), |j| {
            (1.0 - w) * a[j] + w * b[j]
        }))
    }

    /// G(x_t, x₀) = α·(d₁(x_t, x_tⁱ) − d₁(x₀, x₀ⁱ))².
    pub fn guidance_value(
        &self,
        x_t: ArrayView1<f64>,
        t: f64,
        x0: ArrayView1<f64>,
        i: usize,
    ) -> Result<f64> {
        let x_ti = self.keypoint_position(i, t)?;
        let u = l1_distance(x_t, x_ti.view());
        let c = l1_distance(x0, self.keypoints.source_points.row(i));
        let diff = u - c;
        Ok(self.alpha * diff * diff)
    }

    /// ∇G w.r.t. x_t: 2α·(u−c)·sign(x_t − x_tⁱ), with sign(0) := 0.
    pub fn guidance_grad(
        &self,
        x_t: ArrayView1<f64>,
        t: f64,
        x0: ArrayView1<f64>,
        i: usize,
    ) -> Result<Array1<f64>> {
        let x_ti = self.keypoint_position(i, t)?;
        let u = l1_distance(x_t, x_ti.view());
        let c = l1_distance(x0, self.keypoints.source_points.row(i));
        let scale = 2.0 * self.alpha * (u - c);
        Ok(Array1::from_shape_fn(x_t.len(), |j| {
            scale * sign0(x_t[j] - x_ti[j])
        }))
    }

    /// ΔG a.e.: 2α·m with m the number of components where x_t differs from
    /// the keypoint position (the kink set has measure zero and is dropped).
    pub fn guidance_laplacian(
        &self,
        x_t: ArrayView1<f64>,
        t: f64,
        _x0: ArrayView1<f64>,
        i: usize,
    ) -> Result<f64> {
        let x_ti = self.keypoint_position(i, t)?;
        let m = x_t
            .iter()
            .zip(x_ti.iter())
            .filter(|(a, b)| *a != *b)
            .count();
        Ok(2.0 * self.alpha * m as f64)
    }
}

fn l1_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum()
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Squared-norm threshold below which the projection coefficient is defined
/// as 0 (continuous extension of the 0/0 ratio).
pub const GRAD_NORM_FLOOR: f64 = 1e-12;

/// Clipped projection coefficient of `a` onto `grad_g`:
/// aᵀ∇G/‖∇G‖² when that ratio lies in [−1, 1], otherwise its sign.
/// Always in [−1, 1]; 0 when ‖∇G‖² is below [`GRAD_NORM_FLOOR`].
pub fn g_coefficient(a: ArrayView1<f64>, grad_g: ArrayView1<f64>) -> f64 {
    let n2: f64 = grad_g.iter().map(|x| x * x).sum();
    if n2 < GRAD_NORM_FLOOR {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(grad_g.iter()).map(|(x, y)| x * y).sum();
    if dot.abs() <= n2 {
        dot / n2
    } else {
        dot.signum()
    }
}

/// H(a) = ½‖a − g·∇G‖² − (σ²/2)·ΔG — the convex conjugate of
/// L(u) = ½‖u‖² + |uᵀ∇G| + (σ²/2)ΔG, attained at u* = a − g·∇G.
pub fn hamiltonian(
    a: ArrayView1<f64>,
    grad_g: ArrayView1<f64>,
    laplacian_g: f64,
    sigma: f64,
) -> f64 {
    let g = g_coefficient(a, grad_g);
    let mut sq = 0.0;
    for (ai, gi) in a.iter().zip(grad_g.iter()) {
        let r = ai - g * gi;
        sq += r * r;
    }
    0.5 * sq - 0.5 * sigma * sigma * laplacian_g
}
