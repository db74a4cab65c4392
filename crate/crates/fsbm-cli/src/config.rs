//! Run configuration: one TOML file describes the scene, guidance, training,
//! path-optimization, and evaluation knobs of a run. Unknown keys are
//! rejected so a config cannot silently misspell a field.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use fsbm_core::guidance::GuidanceContext;
use fsbm_core::matching::MatchConfig;
use fsbm_core::scenes::{
    opinion_scene, stunnel_scene, vneck_scene, InitialCondition, Obstacle, Scene,
};

use crate::keypoint_io::read_keypoints;

pub const METRIC_NAMES: [&str; 2] = ["w2", "knn_kl"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Run directory for training artifacts (default: runs/<scene>-seed<seed>).
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub scene: SceneConfig,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// "stunnel", "vneck", or "opinion".
    pub name: String,
    /// Opinion-space dimension; only meaningful for the opinion scene.
    #[serde(default)]
    pub dim: Option<usize>,
    /// SDE diffusion override.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Obstacle geometry override (crowd scenes only).
    #[serde(default)]
    pub obstacles: Option<Vec<Obstacle>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    /// Guidance strength α; 0 disables keypoint feedback entirely.
    pub alpha: f64,
    /// Keypoints to synthesize with generate-keypoints (default per scene).
    pub n_keypoints: Option<usize>,
    /// Keypoint file consumed by train; required whenever α > 0.
    pub keypoint_file: Option<PathBuf>,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { alpha: 0.0, n_keypoints: None, keypoint_file: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub pairs_per_epoch: usize,
    pub inner_steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub sde_steps: usize,
    /// Mandatory for train/generate-keypoints/simulate (here or via --seed).
    pub seed: Option<u64>,
    pub weight_decay: f64,
    pub patience_tol: f64,
    pub hidden_dim: usize,
    pub n_blocks: usize,
    pub time_embed_dim: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let m = MatchConfig::default();
        Self {
            epochs: m.epochs,
            pairs_per_epoch: m.pairs_per_epoch,
            inner_steps: m.inner_steps,
            lr: m.lr,
            batch: m.batch,
            sde_steps: m.sde_steps,
            seed: None,
            weight_decay: m.weight_decay,
            patience_tol: m.patience_tol,
            hidden_dim: m.hidden_dim,
            n_blocks: m.n_blocks,
            time_embed_dim: m.time_embed_dim,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub k_knots: usize,
    pub mc_times: usize,
    pub mc_samples: usize,
    pub spline_steps: usize,
    pub spline_lr: f64,
}

impl Default for PathsConfig {
    fn default() -> Self {
        let m = MatchConfig::default();
        Self {
            k_knots: m.k_knots,
            mc_times: m.mc_times,
            mc_samples: m.mc_samples,
            spline_steps: m.spline_steps,
            spline_lr: m.spline_lr,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_eval: usize,
    /// "vanilla", "perturbed_mean", "perturbed_std", or "uniform".
    pub initial_condition: String,
    /// Metrics to report: any of "w2", "knn_kl".
    pub metrics: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_eval: 1000,
            initial_condition: "vanilla".to_string(),
            metrics: METRIC_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config file {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match self.scene.name.as_str() {
            "stunnel" | "vneck" | "opinion" => {}
            other => bail!("unknown scene '{other}' (expected stunnel, vneck, or opinion)"),
        }
        if self.scene.dim.is_some() && self.scene.name != "opinion" {
            bail!("scene.dim is only configurable for the opinion scene");
        }
        if !(self.guidance.alpha >= 0.0 && self.guidance.alpha.is_finite()) {
            bail!("guidance.alpha must be finite and >= 0, got {}", self.guidance.alpha);
        }
        if self.guidance.n_keypoints == Some(0) {
            bail!("guidance.n_keypoints must be >= 1");
        }
        let t = &self.training;
        if t.epochs == 0
            || t.pairs_per_epoch == 0
            || t.inner_steps == 0
            || t.batch == 0
            || t.sde_steps == 0
        {
            bail!("training counts (epochs, pairs_per_epoch, inner_steps, batch, sde_steps) must all be >= 1");
        }
        let p = &self.paths;
        if p.mc_times == 0 || p.mc_samples == 0 || p.spline_steps == 0 {
            bail!("paths counts (mc_times, mc_samples, spline_steps) must all be >= 1");
        }
        if self.eval.n_eval == 0 {
            bail!("eval.n_eval must be >= 1");
        }
        self.initial_condition()?;
        for name in &self.eval.metrics {
            if !METRIC_NAMES.contains(&name.as_str()) {
                bail!(
                    "unknown metric '{name}' in eval.metrics (expected one of {})",
                    METRIC_NAMES.join(", ")
                );
            }
        }
        Ok(())
    }

    /// The configured initial condition, parsed.
    pub fn initial_condition(&self) -> Result<InitialCondition> {
        parse_initial_condition(&self.eval.initial_condition)
    }

    /// Seed from the config, or an explicit error demanding one.
    pub fn require_seed(&self, flag: Option<u64>) -> Result<u64> {
        flag.or(self.training.seed).ok_or_else(|| {
            anyhow::anyhow!("a seed is required for reproducibility: set training.seed in the config or pass --seed")
        })
    }

    /// Default keypoint count per scene (crowd scenes follow the benchmark
    /// setups: 100 for the S-tunnel, 20 for the V-neck and opinion scenes).
    pub fn n_keypoints(&self) -> usize {
        self.guidance.n_keypoints.unwrap_or(match self.scene.name.as_str() {
            "stunnel" => 100,
            _ => 20,
        })
    }

    /// Builds the scene with overrides applied.
    pub fn build_scene(&self) -> Result<Scene> {
        let mut scene = match self.scene.name.as_str() {
            "stunnel" => stunnel_scene(),
            "vneck" => vneck_scene(),
            "opinion" => opinion_scene(self.scene.dim.unwrap_or(10))?,
            other => bail!("unknown scene '{other}'"),
        };
        if let Some(sigma) = self.scene.sigma {
            scene.override_sigma(sigma)?;
        }
        if let Some(obstacles) = &self.scene.obstacles {
            scene.override_obstacles(obstacles.clone())?;
        }
        Ok(scene)
    }

    /// Assembles the core training config (seed already resolved).
    pub fn match_config(&self, seed: u64) -> MatchConfig {
        MatchConfig {
            epochs: self.training.epochs,
            pairs_per_epoch: self.training.pairs_per_epoch,
            inner_steps: self.training.inner_steps,
            batch: self.training.batch,
            lr: self.training.lr,
            weight_decay: self.training.weight_decay,
            sde_steps: self.training.sde_steps,
            n_eval: self.eval.n_eval,
            patience_tol: self.training.patience_tol,
            seed,
            hidden_dim: self.training.hidden_dim,
            n_blocks: self.training.n_blocks,
            time_embed_dim: self.training.time_embed_dim,
            k_knots: self.paths.k_knots,
            spline_steps: self.paths.spline_steps,
            spline_lr: self.paths.spline_lr,
            mc_times: self.paths.mc_times,
            mc_samples: self.paths.mc_samples,
        }
    }

    /// Loads the guidance context when α > 0; `None` when guidance is off.
    /// Missing or unset keypoint files produce explicit errors.
    pub fn load_guidance(&self, scene: &Scene) -> Result<Option<GuidanceContext>> {
        if self.guidance.alpha == 0.0 {
            return Ok(None);
        }
        let path = self.guidance.keypoint_file.as_ref().ok_or_else(|| {
            anyhow::anyhow!(
                "guidance.alpha = {} requires a keypoint file: set guidance.keypoint_file \
                 (generate one with `fsbm generate-keypoints`) or set alpha = 0",
                self.guidance.alpha
            )
        })?;
        if !path.exists() {
            bail!(
                "keypoint file {} does not exist; generate it with `fsbm generate-keypoints`",
                path.display()
            );
        }
        let keypoints = read_keypoints(path)?;
        if keypoints.dim() != scene.dim() {
            bail!(
                "keypoint file {} is {}-dimensional but the scene is {}-dimensional",
                path.display(),
                keypoints.dim(),
                scene.dim()
            );
        }
        Ok(Some(GuidanceContext::new(keypoints, self.guidance.alpha)?))
    }
}

pub fn parse_initial_condition(name: &str) -> Result<InitialCondition> {
    for ic in InitialCondition::ALL {
        if ic.label() == name {
            return Ok(ic);
        }
    }
    bail!(
        "unknown initial condition '{name}' (expected one of {})",
        InitialCondition::ALL
            .iter()
            .map(|ic| ic.label())
            .collect::<Vec<_>>()
            .join(", ")
    )
}
