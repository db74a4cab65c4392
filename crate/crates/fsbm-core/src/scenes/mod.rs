//! Benchmark scenes: S-tunnel and V-neck crowd navigation (obstacles,
//! perturbed initial conditions) and high-dimensional opinion
//! depolarization (polarizing base drift), plus keypoint-set generation.

mod keypoints;
mod obstacles;
mod opinion;

pub use keypoints::{generate_keypoints, KeypointGenOpts};
pub use obstacles::{penetration_cost, Obstacle, ObstacleMarginCost, OBSTACLE_WEIGHT};
pub use opinion::polarize_drift;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Crowd-navigation source distribution: N([−11, −1], 0.5²·I).
pub const CROWD_SOURCE_MEAN: [f64; 2] = [-11.0, -1.0];
/// Crowd-navigation target distribution: N([11, 1], 0.5²·I).
pub const CROWD_TARGET_MEAN: [f64; 2] = [11.0, 1.0];
/// Standard deviation of the crowd source/target Gaussians.
pub const CROWD_STD: f64 = 0.5;
/// SDE diffusion for the crowd scenes.
pub const CROWD_SIGMA: f64 = 1.0;
/// Mean of the perturbed-mean initial condition: N([−11, −4], 0.5²·I).
pub const PERTURBED_MEAN: [f64; 2] = [-11.0, -4.0];
/// Standard deviation of the perturbed-STD initial condition: N([−11, −1], 3²·I).
pub const PERTURBED_STD: f64 = 3.0;
/// Half-width of the uniform initial condition square centred at the source mean.
pub const UNIFORM_HALFWIDTH: f64 = 2.0;
/// Opinion source distribution: N(0, 0.25·I) (std 0.5).
pub const OPINION_SOURCE_STD: f64 = 0.5;
/// Opinion target distribution: N(0, 4·I) (std 2).
pub const OPINION_TARGET_STD: f64 = 2.0;
/// SDE diffusion for the opinion scene.
pub const OPINION_SIGMA: f64 = 0.5;

/// S-tunnel corridor: three axis-aligned slabs forcing an S-shaped detour
/// between the source (lower left) and target (upper right).
pub const STUNNEL_SLABS: [[f64; 4]; 3] = [
    [-8.0, -6.0, -14.0, 4.0],
    [-1.0, 1.0, -4.0, 14.0],
    [6.0, 8.0, -14.0, 4.0],
];

/// Waypoints threading the S-tunnel corridor, used to initialize keypoint
/// trajectory synthesis (a straight initialization cannot escape the first
/// slab's local minimum).
pub const STUNNEL_WAYPOINTS: [[f64; 2]; 3] = [[-7.0, 6.0], [0.0, -6.0], [7.0, 6.0]];

/// V-neck gap half-width at the origin.
pub const VNECK_OFFSET: f64 = 1.0;
/// V-neck wedge slope.
pub const VNECK_SLOPE: f64 = 1.0;

/// A simple distribution sampler producing d-vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    /// Isotropic Gaussian with scalar standard deviation.
    Gaussian { mean: Vec<f64>, std: f64 },
    /// Uniform on an axis-aligned cube centred at `center`.
    UniformCube { center: Vec<f64>, halfwidth: f64 },
}

impl Sampler {
    pub fn dim(&self) -> usize {
        match self {
            Sampler::Gaussian { mean, .. } => mean.len(),
            Sampler::UniformCube { center, .. } => center.len(),
        }
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Array2<f64> {
        match self {
            Sampler::Gaussian { mean, std } => Array2::from_shape_fn((n, mean.len()), |(_, j)| {
                mean[j] + std * rng.sample::<f64, _>(StandardNormal)
            }),
            Sampler::UniformCube { center, halfwidth } => {
                Array2::from_shape_fn((n, center.len()), |(_, j)| {
                    center[j] + rng.gen_range(-halfwidth..=*halfwidth)
                })
            }
        }
    }
}

/// Which benchmark a [`Scene`] instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    STunnel,
    VNeck,
    Opinion,
}

/// A transport benchmark: marginals, diffusion, and scene-specific
/// structure (obstacles for crowd navigation, polarizing base drift for
/// the opinion scene).
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    kind: SceneKind,
    name: String,
    dim: usize,
    sigma: f64,
    source: Sampler,
    target: Sampler,
    obstacles: Vec<Obstacle>,
}

/// Crowd-navigation scene with the S-shaped three-slab corridor.
pub fn stunnel_scene() -> Scene {
    Scene {
        kind: SceneKind::STunnel,
        name: "stunnel".into(),
        dim: 2,
        sigma: CROWD_SIGMA,
        source: Sampler::Gaussian {
            mean: CROWD_SOURCE_MEAN.to_vec(),
            std: CROWD_STD,
        },
        target: Sampler::Gaussian {
            mean: CROWD_TARGET_MEAN.to_vec(),
            std: CROWD_STD,
        },
        obstacles: STUNNEL_SLABS
            .iter()
            .map(|&[xmin, xmax, ymin, ymax]| Obstacle::Slab {
                xmin,
                xmax,
                ymin,
                ymax,
            })
            .collect(),
    }
}

/// Crowd-navigation scene with two wedges pinching a narrow passage at the
/// origin.
pub fn vneck_scene() -> Scene {
    Scene {
        kind: SceneKind::VNeck,
        name: "vneck".into(),
        dim: 2,
        sigma: CROWD_SIGMA,
        source: Sampler::Gaussian {
            mean: CROWD_SOURCE_MEAN.to_vec(),
            std: CROWD_STD,
        },
        target: Sampler::Gaussian {
            mean: CROWD_TARGET_MEAN.to_vec(),
            std: CROWD_STD,
        },
        obstacles: vec![Obstacle::WedgePair {
            offset: VNECK_OFFSET,
            slope: VNECK_SLOPE,
        }],
    }
}

/// Opinion-depolarization scene in dimension `d ≥ 2`: a tight unimodal
/// source spreading to a broad unimodal target against the polarizing
/// base drift.
pub fn opinion_scene(d: usize) -> Result<Scene> {
    if d < 2 {
        return Err(Error::Domain(format!(
            "opinion scene needs dimension >= 2, got {d}"
        )));
    }
    Ok(Scene {
        kind: SceneKind::Opinion,
        name: format!("opinion{d}"),
        dim: d,
        sigma: OPINION_SIGMA,
        source: Sampler::Gaussian {
            mean: vec![0.0; d],
            std: OPINION_SOURCE_STD,
        },
        target: Sampler::Gaussian {
            mean: vec![0.0; d],
            std: OPINION_TARGET_STD,
        },
        obstacles: Vec::new(),
    })
}

impl Scene {
    pub fn kind(&self) -> SceneKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn source_sampler(&self) -> &Sampler {
        &self.source
    }

    pub fn target_sampler(&self) -> &Sampler {
        &self.target
    }

    pub fn sample_source(&self, n: usize, rng: &mut impl Rng) -> Array2<f64> {
        self.source.sample(n, rng)
    }

    pub fn sample_target(&self, n: usize, rng: &mut impl Rng) -> Array2<f64> {
        self.target.sample(n, rng)
    }

    /// Replaces the obstacle set (config override). Crowd scenes must keep
    /// at least one obstacle; the opinion scene none.
    pub fn override_obstacles(&mut self, obstacles: Vec<Obstacle>) -> Result<()> {
        match self.kind {
            SceneKind::Opinion if !obstacles.is_empty() => {
                Err(Error::Domain("opinion scene cannot carry obstacles".into()))
            }
            SceneKind::STunnel | SceneKind::VNeck if obstacles.is_empty() => Err(Error::Domain(
                "crowd-navigation scenes need at least one obstacle".into(),
            )),
            _ => {
                self.obstacles = obstacles;
                Ok(())
            }
        }
    }

    /// Overrides the SDE diffusion coefficient.
    pub fn override_sigma(&mut self, sigma: f64) -> Result<()> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
        }
        self.sigma = sigma;
        Ok(())
    }

    /// Squared-penetration obstacle penalty at a point. Only defined for
    /// crowd-navigation scenes.
    pub fn obstacle_cost(&self, point: ArrayView1<'_, f64>) -> Result<f64> {
        if self.kind == SceneKind::Opinion {
            return Err(Error::Domain(
                "obstacle cost is undefined for the opinion scene".into(),
            ));
        }
        if point.len() != 2 {
            return Err(Error::Shape(format!(
                "obstacle cost needs a 2-vector, got length {}",
                point.len()
            )));
        }
        Ok(penetration_cost(&self.obstacles, point[0], point[1]))
    }

    /// State-dependent reference drift of the scene's uncontrolled
    /// dynamics: the polarizing drift for the opinion scene, `None` (zero
    /// drift) for the crowd scenes.
    pub fn base_drift(
        &self,
        batch: ArrayView2<'_, f64>,
        xi: ArrayView1<'_, f64>,
    ) -> Option<Result<Array2<f64>>> {
        match self.kind {
            SceneKind::Opinion => Some(polarize_drift(batch, xi)),
            _ => None,
        }
    }
}

/// Initial conditions for crowd-navigation robustness runs. `Vanilla`
/// matches the scene's own source; the others perturb it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    Vanilla,
    PerturbedMean,
    PerturbedStd,
    Uniform,
}

impl InitialCondition {
    pub const ALL: [InitialCondition; 4] = [
        InitialCondition::Vanilla,
        InitialCondition::PerturbedMean,
        InitialCondition::PerturbedStd,
        InitialCondition::Uniform,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            InitialCondition::Vanilla => "vanilla",
            InitialCondition::PerturbedMean => "perturbed_mean",
            InitialCondition::PerturbedStd => "perturbed_std",
            InitialCondition::Uniform => "uniform",
        }
    }

    /// The source sampler this initial condition induces for a scene.
    /// Perturbations are defined for the crowd scenes only.
    pub fn source_sampler(&self, scene: &Scene) -> Result<Sampler> {
        if scene.kind() == SceneKind::Opinion {
            return match self {
                InitialCondition::Vanilla => Ok(scene.source_sampler().clone()),
                _ => Err(Error::Domain(format!(
                    "initial condition {} is only defined for crowd scenes",
                    self.label()
                ))),
            };
        }
        Ok(match self {
            InitialCondition::Vanilla => scene.source_sampler().clone(),
            InitialCondition::PerturbedMean => Sampler::Gaussian {
                mean: PERTURBED_MEAN.to_vec(),
                std: CROWD_STD,
            },
            InitialCondition::PerturbedStd => Sampler::Gaussian {
                mean: CROWD_SOURCE_MEAN.to_vec(),
                std: PERTURBED_STD,
            },
            InitialCondition::Uniform => Sampler::UniformCube {
                center: CROWD_SOURCE_MEAN.to_vec(),
                halfwidth: UNIFORM_HALFWIDTH,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};
    use crate::transport::exact_w2;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1, Axis};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vanilla_sampler_mean_matches_declared_source() {
        let scene = stunnel_scene();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws = scene.sample_source(100_000, &mut rng);
        let mean = draws.mean_axis(Axis(0)).unwrap();
        assert!((mean[0] - CROWD_SOURCE_MEAN[0]).abs() < 0.01, "mean x {}", mean[0]);
        assert!((mean[1] - CROWD_SOURCE_MEAN[1]).abs() < 0.01, "mean y {}", mean[1]);
    }

    #[test]
    fn perturbed_std_sampler_has_declared_spread() {
        let scene = vneck_scene();
        let sampler = InitialCondition::PerturbedStd.source_sampler(&scene).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = sampler.sample(100_000, &mut rng);
        for j in 0..2 {
            let col = draws.column(j);
            let m = col.mean().unwrap();
            let std = (col.mapv(|v| (v - m) * (v - m)).mean().unwrap()).sqrt();
            assert!(
                (std - PERTURBED_STD).abs() / PERTURBED_STD < 0.02,
                "component {j} std {std}"
            );
        }
    }

    #[test]
    fn initial_condition_parameters_are_exact_constants() {
        let scene = stunnel_scene();
        assert_eq!(
            InitialCondition::Vanilla.source_sampler(&scene).unwrap(),
            Sampler::Gaussian { mean: vec![-11.0, -1.0], std: 0.5 }
        );
        assert_eq!(
            InitialCondition::PerturbedMean.source_sampler(&scene).unwrap(),
            Sampler::Gaussian { mean: vec![-11.0, -4.0], std: 0.5 }
        );
        assert_eq!(
            InitialCondition::PerturbedStd.source_sampler(&scene).unwrap(),
            Sampler::Gaussian { mean: vec![-11.0, -1.0], std: 3.0 }
        );
        assert_eq!(
            InitialCondition::Uniform.source_sampler(&scene).unwrap(),
            Sampler::UniformCube { center: vec![-11.0, -1.0], halfwidth: 2.0 }
        );
        let opinion = opinion_scene(4).unwrap();
        assert!(InitialCondition::PerturbedMean.source_sampler(&opinion).is_err());
        assert_eq!(
            InitialCondition::Vanilla.source_sampler(&opinion).unwrap(),
            Sampler::Gaussian { mean: vec![0.0; 4], std: 0.5 }
        );
    }

    #[test]
    fn origin_sits_in_the_vneck_gap() {
        let scene = vneck_scene();
        for obs in scene.obstacles() {
            assert_eq!(obs.penetration_depth(0.0, 0.0), 0.0);
        }
        assert_eq!(scene.obstacle_cost(array![0.0, 0.0].view()).unwrap(), 0.0);
        // And the straight source-target line is blocked: its midpoint (0, 0)
        // is free but the slab corridor / wedges must obstruct *some* probe
        // high above the gap.
        assert!(scene.obstacle_cost(array![0.0, 3.0].view()).unwrap() > 0.0);
    }

    #[test]
    fn slab_depth_cost_formula() {
        let scene = stunnel_scene();
        // Depth 0.1 below the top face of the first slab.
        let cost = scene.obstacle_cost(array![-7.0, 3.9].view()).unwrap();
        assert_abs_diff_eq!(cost, 15.0, epsilon = 1e-9);
        // Far away: exactly zero.
        assert_eq!(scene.obstacle_cost(array![-11.0, -1.0].view()).unwrap(), 0.0);
        assert_eq!(scene.obstacle_cost(array![100.0, 100.0].view()).unwrap(), 0.0);
    }

    #[test]
    fn obstacle_cost_continuous_across_boundaries() {
        let stunnel = stunnel_scene();
        let vneck = vneck_scene();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        use rand::Rng;
        // 100 rays crossing a boundary: just inside must tend to 0 as the
        // probe depth shrinks.
        for _ in 0..100 {
            // Slab: random point on the top face of the middle slab.
            let x = rng.gen_range(-0.9..0.9);
            for delta in [1e-3, 1e-5] {
                let inside = stunnel.obstacle_cost(array![x, 14.0 - delta].view()).unwrap();
                assert!(inside <= OBSTACLE_WEIGHT * delta * delta + 1e-12);
                let outside = stunnel.obstacle_cost(array![x, 14.0 + delta].view()).unwrap();
                assert_eq!(outside, 0.0);
            }
            // Wedge: random point on the upper wedge face y = 1 + |x|.
            let wx: f64 = rng.gen_range(-3.0..3.0);
            let boundary_y = VNECK_OFFSET + VNECK_SLOPE * wx.abs();
            for delta in [1e-3, 1e-5] {
                let inside = vneck.obstacle_cost(array![wx, boundary_y + delta].view()).unwrap();
                assert!(inside <= OBSTACLE_WEIGHT * delta * delta + 1e-12);
                let outside = vneck.obstacle_cost(array![wx, boundary_y - delta].view()).unwrap();
                assert_eq!(outside, 0.0);
            }
        }
    }

    #[test]
    fn obstacle_cost_undefined_for_opinion() {
        let scene = opinion_scene(10).unwrap();
        assert!(scene.obstacle_cost(array![0.0, 0.0].view()).is_err());
        assert!(scene.obstacles().is_empty());
        // Crowd scenes have no base drift.
        let batch = array![[0.0, 0.0]];
        let xi = array![1.0, 0.0];
        assert!(stunnel_scene().base_drift(batch.view(), xi.view()).is_none());
        assert!(scene.base_drift(array![[0.0; 10]].view(), Array1::zeros(10).view()).is_some());
    }

    #[test]
    fn opinion_scene_dimensions_and_moments() {
        assert!(opinion_scene(100).is_ok());
        assert!(opinion_scene(1).is_err());
        let scene = opinion_scene(10).unwrap();
        assert_eq!(scene.sigma(), OPINION_SIGMA);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = scene.sample_source(100_000, &mut rng);
        let mean = draws.mean_axis(Axis(0)).unwrap();
        for j in 0..10 {
            assert!(mean[j].abs() < 0.01);
        }
        // Covariance ≈ 0.25·I within 5% on the diagonal.
        for j in 0..10 {
            let col = draws.column(j);
            let var = col.mapv(|v| v * v).mean().unwrap() - mean[j] * mean[j];
            assert!((var - 0.25).abs() / 0.25 < 0.05, "var[{j}] = {var}");
        }
        for a in 0..10 {
            for b in (a + 1)..10 {
                let cov = draws
                    .column(a)
                    .iter()
                    .zip(draws.column(b).iter())
                    .map(|(x, y)| (x - mean[a]) * (y - mean[b]))
                    .sum::<f64>()
                    / 100_000.0;
                assert!(cov.abs() < 0.0125, "cov[{a},{b}] = {cov}");
            }
        }
    }

    #[test]
    fn polarize_singleton_is_self_agreement() {
        let x = array![[3.0, 4.0]];
        let xi = array![1.0, 0.0];
        let drift = polarize_drift(x.view(), xi.view()).unwrap();
        // ȳ = y/‖y‖^{1/2}, ‖y‖ = 5.
        let scale = 1.0 / 5f64.sqrt();
        assert_abs_diff_eq!(drift[(0, 0)], 3.0 * scale, epsilon = 1e-14);
        assert_abs_diff_eq!(drift[(0, 1)], 4.0 * scale, epsilon = 1e-14);
    }

    #[test]
    fn polarize_antipodal_pushes_outward() {
        let v = array![2.0, 1.0];
        let batch = ndarray::stack![Axis(0), v, -&v];
        let xi = array![1.0, 0.5];
        let drift = polarize_drift(batch.view(), xi.view()).unwrap();
        let norm = (5.0f64).sqrt();
        let vbar = &v / norm.sqrt();
        for j in 0..2 {
            assert_abs_diff_eq!(drift[(0, j)], vbar[j], epsilon = 1e-14);
            assert_abs_diff_eq!(drift[(1, j)], -vbar[j], epsilon = 1e-14);
        }
    }

    #[test]
    fn polarize_handles_zero_opinion() {
        let batch = array![[0.0, 0.0], [1.0, 1.0]];
        let xi = array![1.0, 0.0];
        let drift = polarize_drift(batch.view(), xi.view()).unwrap();
        assert!(drift.iter().all(|v| v.is_finite()));
        // Zero opinion disagrees with the positive one (sign 0 vs +):
        // drift(0) = (a(0,0)·0̄ + a(0,y)·ȳ)/2 = −ȳ/2.
        let ybar = 2f64.sqrt().powf(-0.5);
        assert_abs_diff_eq!(drift[(0, 0)], -0.5 * ybar, epsilon = 1e-14);
    }

    #[test]
    fn polarize_is_permutation_invariant_and_xi_sign_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        use rand::Rng;
        let n = 17;
        let d = 5;
        let batch = ndarray::Array2::from_shape_fn((n, d), |_| rng.gen_range(-2.0..2.0));
        let xi = Array1::from_shape_fn(d, |_| rng.gen_range(-1.0..1.0));
        let base = polarize_drift(batch.view(), xi.view()).unwrap();

        // Same batch, reversed row order.
        let mut reversed = batch.clone();
        reversed.invert_axis(Axis(0));
        let rev = polarize_drift(reversed.view(), xi.view()).unwrap();
        for i in 0..n {
            for j in 0..d {
                // Reordered accumulation shifts the result by rounding only.
                assert_abs_diff_eq!(base[(i, j)], rev[(n - 1 - i, j)], epsilon = 1e-14);
            }
        }

        // a(x, y, ξ) = a(x, y, −ξ), so the drift is ξ-sign invariant.
        let flipped = polarize_drift(batch.view(), (-&xi).view()).unwrap();
        for (a, b) in base.iter().zip(flipped.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    /// Uncontrolled opinion dynamics polarize: the variance of the
    /// projection onto a fixed direction grows monotonically across five
    /// checkpoints (averaged over 10 seeds), and the projection's
    /// bimodality coefficient ends above its initial value.
    #[test]
    fn uncontrolled_opinion_dynamics_polarize() {
        let d = 2;
        let n = 400;
        let steps = 500;
        let dt = 0.01;
        let sigma = OPINION_SIGMA;
        let n_seeds = 10;
        let mut var_sum = [0.0; 5];
        let mut bimod0_sum = 0.0;
        let mut bimod1_sum = 0.0;
        for seed in 0..n_seeds {
            let scene = opinion_scene(d).unwrap();
            let mut rng = substream(seed, Domain::Scene, 0, 0);
            use rand::Rng;
            let mut x = scene.sample_source(n, &mut rng);
            let mut checkpoint = 0;
            for step in 0..=steps {
                if step % (steps / 4) == 0 {
                    let proj: Vec<f64> = x.column(0).iter().copied().collect();
                    let m = proj.iter().sum::<f64>() / n as f64;
                    let var = proj.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
                    var_sum[checkpoint] += var / n_seeds as f64;
                    let bimod = bimodality(&proj);
                    if checkpoint == 0 {
                        bimod0_sum += bimod / n_seeds as f64;
                    } else if checkpoint == 4 {
                        bimod1_sum += bimod / n_seeds as f64;
                    }
                    checkpoint += 1;
                }
                if step == steps {
                    break;
                }
                let xi = Array1::from_shape_fn(d, |_| {
                    rng.sample::<f64, _>(rand_distr::StandardNormal)
                });
                let drift = scene
                    .base_drift(x.view(), xi.view())
                    .expect("opinion scene has a base drift")
                    .unwrap();
                for i in 0..n {
                    for j in 0..d {
                        let noise: f64 = rng.sample(rand_distr::StandardNormal);
                        x[(i, j)] += dt * drift[(i, j)] + sigma * dt.sqrt() * noise;
                    }
                }
            }
            assert_eq!(checkpoint, 5);
        }
        for w in var_sum.windows(2) {
            assert!(
                w[1] > w[0],
                "directional variance not increasing: {var_sum:?}"
            );
        }
        assert!(
            bimod1_sum > bimod0_sum,
            "bimodality did not grow: {bimod0_sum} -> {bimod1_sum}"
        );
    }

    /// Sarle's bimodality coefficient (skewness² + 1)/kurtosis.
    fn bimodality(samples: &[f64]) -> f64 {
        let n = samples.len() as f64;
        let m = samples.iter().sum::<f64>() / n;
        let m2 = samples.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        let m3 = samples.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
        let m4 = samples.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
        let skew = m3 / m2.powf(1.5);
        let kurt = m4 / (m2 * m2);
        (skew * skew + 1.0) / kurt
    }

    #[test]
    fn stunnel_keypoints_avoid_obstacles() {
        let scene = stunnel_scene();
        let opts = KeypointGenOpts::for_scene(&scene);
        let kp = generate_keypoints(&scene, 6, &opts, 11).unwrap();
        assert_eq!(kp.len(), 6);
        let mut worst: f64 = 0.0;
        for i in 0..kp.len() {
            for ti in 0..kp.time_grid().len() {
                let p = kp.trajectories().slice(ndarray::s![i, ti, ..]);
                worst = worst.max(scene.obstacle_cost(p).unwrap());
            }
        }
        assert!(worst <= 1e-4, "worst obstacle cost along keypoints: {worst}");
    }

    #[test]
    fn vneck_keypoints_avoid_obstacles() {
        let scene = vneck_scene();
        let opts = KeypointGenOpts::for_scene(&scene);
        let kp = generate_keypoints(&scene, 20, &opts, 12).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..kp.len() {
            for ti in 0..kp.time_grid().len() {
                let p = kp.trajectories().slice(ndarray::s![i, ti, ..]);
                worst = worst.max(scene.obstacle_cost(p).unwrap());
            }
        }
        assert!(worst <= 1e-2, "worst obstacle cost along keypoints: {worst}");
    }

    #[test]
    fn single_keypoint_pins_its_pair() {
        let scene = vneck_scene();
        let opts = KeypointGenOpts::for_scene(&scene);
        let kp = generate_keypoints(&scene, 1, &opts, 13).unwrap();
        assert_eq!(kp.len(), 1);
        let t_last = kp.time_grid().len() - 1;
        for j in 0..2 {
            assert_eq!(kp.trajectories()[(0, 0, j)], kp.source_points()[(0, j)]);
            assert_eq!(kp.trajectories()[(0, t_last, j)], kp.target_points()[(0, j)]);
        }
    }

    #[test]
    fn pairing_cost_close_to_exact_assignment() {
        let scene = vneck_scene();
        let n_kp = 64;
        let opts = KeypointGenOpts {
            epsilon: 0.01,
            ..KeypointGenOpts::for_scene(&scene)
        };
        let kp = generate_keypoints(&scene, n_kp, &opts, 14).unwrap();
        // Reproduce the same sampled clouds (documented substreams).
        let sources = scene.sample_source(n_kp, &mut substream(14, Domain::Keypoints, 0, 0));
        let targets = scene.sample_target(n_kp, &mut substream(14, Domain::Keypoints, 1, 0));
        let exact = exact_w2(sources.view(), targets.view()).unwrap();
        let exact_mean_sq = exact * exact;
        let mut pair_mean_sq = 0.0;
        for i in 0..n_kp {
            let diff = &kp.target_points().row(i) - &kp.source_points().row(i);
            pair_mean_sq += diff.dot(&diff) / n_kp as f64;
        }
        assert!(
            pair_mean_sq <= 1.05 * exact_mean_sq,
            "sampled pairing cost {pair_mean_sq} vs exact {exact_mean_sq}"
        );
    }

    #[test]
    fn opinion_keypoints_are_straight_lines() {
        let scene = opinion_scene(10).unwrap();
        let opts = KeypointGenOpts {
            t_count: 65, // odd count puts t = 1/2 on the grid
            ..KeypointGenOpts::for_scene(&scene)
        };
        let kp = generate_keypoints(&scene, 8, &opts, 15).unwrap();
        let mid = 32;
        assert_eq!(kp.time_grid()[mid], 0.5);
        for i in 0..kp.len() {
            for j in 0..10 {
                let expected = (kp.source_points()[(i, j)] + kp.target_points()[(i, j)]) / 2.0;
                assert_eq!(kp.trajectories()[(i, mid, j)], expected);
            }
        }
    }

    #[test]
    fn keypoint_generation_rejects_bad_inputs() {
        let scene = stunnel_scene();
        let opts = KeypointGenOpts::for_scene(&scene);
        assert!(generate_keypoints(&scene, 0, &opts, 0).is_err());
        let bad = KeypointGenOpts { epsilon: 0.0, ..opts };
        assert!(generate_keypoints(&scene, 2, &bad, 0).is_err());
        let bad = KeypointGenOpts { t_count: 1, ..opts };
        assert!(generate_keypoints(&scene, 2, &bad, 0).is_err());
    }

    #[test]
    fn scene_overrides_validate() {
        let mut scene = stunnel_scene();
        assert!(scene.override_obstacles(vec![]).is_err());
        assert!(scene
            .override_obstacles(vec![Obstacle::Slab {
                xmin: -1.0,
                xmax: 1.0,
                ymin: -1.0,
                ymax: 1.0
            }])
            .is_ok());
        assert!(scene.override_sigma(0.0).is_err());
        assert!(scene.override_sigma(2.0).is_ok());
        assert_eq!(scene.sigma(), 2.0);
        let mut opinion = opinion_scene(3).unwrap();
        assert!(opinion
            .override_obstacles(vec![Obstacle::WedgePair { offset: 1.0, slope: 1.0 }])
            .is_err());
    }
}
