//! Alternating bridge-matching training loop: sample a coupling from one
//! side, bend a guided conditional path through every pair, regress the
//! opposite-side drift network onto the paths' conditional drifts, repeat.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driftnet::{save_checkpoint, AdamW, AdamWConfig, DriftNetwork};
use crate::error::{Error, Result};
use crate::guidance::GuidanceContext;
use crate::matching::sde::{simulate_backward, simulate_forward};
use crate::matching::{Coupling, CouplingSource, Direction};
use crate::paths::{brownian_bridge_path, optimize_spline, ConditionalPath, SplineOpts, TIME_MARGIN};
use crate::rng::{substream, Domain};
use crate::scenes::{Sampler, Scene};
use crate::transport::{exact_w2, knn_kl};

/// Neighbor count of the KL estimate logged alongside W2.
const KL_NEIGHBORS: usize = 5;
/// Window of regression losses averaged into the logged loss values.
const LOSS_WINDOW: usize = 50;

/// Knobs of one training run. Spline fields parameterize the per-pair path
/// optimization; the rest size the networks, the SDE, and the regression.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Alternating epochs (each fits one of the two networks).
    pub epochs: usize,
    /// Coupled pairs drawn per epoch.
    pub pairs_per_epoch: usize,
    /// Regression minibatch steps per epoch.
    pub inner_steps: usize,
    /// Minibatch size (pairs are resampled with replacement).
    pub batch: usize,
    /// AdamW peak learning rate; each network's rate follows a cosine decay
    /// to 5% of the peak across its own fits.
    pub lr: f64,
    /// AdamW decoupled weight decay.
    pub weight_decay: f64,
    /// Euler–Maruyama steps for coupling simulation and evaluation.
    pub sde_steps: usize,
    /// Particles simulated for the per-epoch terminal metrics.
    pub n_eval: usize,
    /// Early stop once three consecutive epoch-to-epoch |ΔW2| fall below
    /// this tolerance; 0 disables early stopping.
    pub patience_tol: f64,
    /// Master seed; every random draw derives from it through substreams.
    pub seed: u64,
    /// Hidden width of both drift networks.
    pub hidden_dim: usize,
    /// Residual blocks of both drift networks.
    pub n_blocks: usize,
    /// Sinusoidal time-embedding dimension (even).
    pub time_embed_dim: usize,
    /// Interior spline knots per conditional path.
    pub k_knots: usize,
    /// Gradient steps of the per-pair path optimization.
    pub spline_steps: usize,
    /// Learning rate of the per-pair path optimization.
    pub spline_lr: f64,
    /// Time draws of the path optimizer's before/after objective check.
    pub mc_times: usize,
    /// Noise draws per objective/gradient estimate in the path optimizer.
    pub mc_samples: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            pairs_per_epoch: 1024,
            inner_steps: 500,
            batch: 160,
            lr: 1e-3,
            weight_decay: 0.0,
            sde_steps: 100,
            n_eval: 1024,
            patience_tol: 0.0,
            seed: 0,
            hidden_dim: 128,
            n_blocks: 4,
            time_embed_dim: 16,
            k_knots: 8,
            spline_steps: 200,
            spline_lr: 0.05,
            mc_times: 8,
            mc_samples: 16,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || self.pairs_per_epoch == 0
            || self.inner_steps == 0
            || self.batch == 0
            || self.sde_steps == 0
        {
            return Err(Error::Domain(
                "epochs, pairs_per_epoch, inner_steps, batch, and sde_steps must all be >= 1"
                    .into(),
            ));
        }
        if self.n_eval <= KL_NEIGHBORS + 1 {
            return Err(Error::Domain(format!(
                "n_eval must exceed {} for the terminal metrics, got {}",
                KL_NEIGHBORS + 1,
                self.n_eval
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Domain(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Domain(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.patience_tol >= 0.0 && self.patience_tol.is_finite()) {
            return Err(Error::Domain(format!(
                "patience_tol must be >= 0, got {}",
                self.patience_tol
            )));
        }
        Ok(())
    }

    /// Path-optimizer options for this config, with the path's base
    /// diffusion ν tied to the scene's SDE diffusion σ.
    pub fn spline_opts(&self, scene: &Scene) -> SplineOpts {
        SplineOpts {
            k_knots: self.k_knots,
            steps: self.spline_steps,
            lr: self.spline_lr,
            mc_times: self.mc_times,
            mc_samples: self.mc_samples,
            nu: scene.sigma(),
            sigma: scene.sigma(),
        }
    }
}

/// Per-epoch record appended to `metrics.jsonl`. Every field is derived
/// from seeded computation, so records are bit-reproducible; wallclock goes
/// to the separate timings log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Which side's marginal the coupling was drawn from:
    /// "independent", "forward", or "backward".
    pub coupling: String,
    /// Which network was fitted this epoch: "forward" or "backward".
    pub fit: String,
    /// Mean regression loss over the first up-to-50 minibatch steps.
    pub bm_loss_first: f64,
    /// Mean regression loss over the last up-to-50 minibatch steps.
    pub bm_loss: f64,
    /// Exact W2 between simulated terminal particles and fresh target draws.
    pub w2: f64,
    /// k-NN KL divergence of the same two terminal sample sets.
    pub knn_kl: f64,
    /// Pairs whose path optimization diverged and fell back to the
    /// initialization (an epoch aborts above 10%).
    pub spline_diverged: usize,
    pub n_pairs: usize,
}

/// Mutable state of an alternating run.
pub struct TrainState {
    pub forward_net: DriftNetwork,
    pub backward_net: DriftNetwork,
    /// Epochs completed so far.
    pub epoch: usize,
    /// Side whose coupling the NEXT epoch will sample (the fitted network
    /// is the opposite side). Alternates F, B, F, B, … from epoch 0.
    pub direction: Direction,
    pub metrics: Vec<EpochMetrics>,
    forward_opt: AdamW,
    backward_opt: AdamW,
}

impl TrainState {
    /// Fresh state: both networks drawn from seed-derived substreams with
    /// zero output heads (so both start as the zero drift), optimizers empty.
    pub fn new(scene: &Scene, cfg: &MatchConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        };
        let build = |side: u64| -> Result<(DriftNetwork, AdamW)> {
            let mut rng = substream(cfg.seed, Domain::Init, side, 0);
            let net = DriftNetwork::new(
                scene.dim(),
                cfg.time_embed_dim,
                cfg.hidden_dim,
                cfg.n_blocks,
                &mut rng,
            )?;
            let opt = AdamW::new(adam.clone(), &net)?;
            Ok((net, opt))
        };
        let (forward_net, forward_opt) = build(0)?;
        let (backward_net, backward_opt) = build(1)?;
        Ok(Self {
            forward_net,
            backward_net,
            epoch: 0,
            direction: Direction::Forward,
            metrics: Vec::new(),
            forward_opt,
            backward_opt,
        })
    }
}

/// Draws one endpoint coupling for the given epoch.
///
/// Epoch 0 pairs independent draws from the two true samplers. Later epochs
/// redraw the `direction` side's marginal from its true sampler and simulate
/// that side's current network across to the other side, so the simulated
/// side's marginal is by construction exact at every epoch.
pub fn sample_coupling(
    scene: &Scene,
    forward_net: &DriftNetwork,
    backward_net: &DriftNetwork,
    epoch: usize,
    direction: Direction,
    n_pairs: usize,
    sde_steps: usize,
    seed: u64,
) -> Result<Coupling> {
    if n_pairs == 0 {
        return Err(Error::Domain("coupling needs >= 1 pair".into()));
    }
    let mut source_rng = substream(seed, Domain::Coupling, epoch as u64, 0);
    let mut target_rng = substream(seed, Domain::Coupling, epoch as u64, 1);
    let mut noise_rng = substream(seed, Domain::Coupling, epoch as u64, 2);
    let mut xi_rng = substream(seed, Domain::Coupling, epoch as u64, 3);
    if epoch == 0 {
        return Ok(Coupling {
            x0: scene.sample_source(n_pairs, &mut source_rng),
            x1: scene.sample_target(n_pairs, &mut target_rng),
            source: CouplingSource::Independent,
        });
    }
    match direction {
        Direction::Forward => {
            let x0 = scene.sample_source(n_pairs, &mut source_rng);
            let traj = simulate_forward(
                forward_net,
                scene,
                x0.view(),
                sde_steps,
                &mut noise_rng,
                &mut xi_rng,
            )?;
            let x1 = traj.index_axis(Axis(0), sde_steps).to_owned();
            Ok(Coupling { x0, x1, source: CouplingSource::ForwardSimulated })
        }
        Direction::Backward => {
            let x1 = scene.sample_target(n_pairs, &mut target_rng);
            let traj =
                simulate_backward(backward_net, scene, x1.view(), sde_steps, &mut noise_rng)?;
            let x0 = traj.index_axis(Axis(0), 0).to_owned();
            Ok(Coupling { x0, x1, source: CouplingSource::BackwardSimulated })
        }
    }
}

/// Aborts an epoch whose path optimization diverged on more than 10% of
/// pairs; isolated divergences merely fall back to their initialization.
pub(crate) fn divergence_gate(diverged: usize, total: usize) -> Result<()> {
    if diverged * 10 > total {
        return Err(Error::Abort(format!(
            "path optimization diverged on {diverged} of {total} pairs (over 10%); \
             lower the guidance strength or the spline learning rate"
        )));
    }
    Ok(())
}

/// Builds one conditional path per coupled pair. With guidance strength
/// α > 0 each pair is assigned its nearest keypoint (by the source endpoint)
/// and the path is bent by the spline optimizer; with α = 0 the analytic
/// base bridge is already optimal, so optimization is skipped.
fn build_paths(
    scene: &Scene,
    guidance: Option<&GuidanceContext>,
    coupling: &Coupling,
    cfg: &MatchConfig,
    epoch: usize,
) -> Result<Vec<ConditionalPath>> {
    let opts = cfg.spline_opts(scene);
    let guided = guidance.filter(|ctx| ctx.alpha > 0.0);
    let n = coupling.x0.nrows();
    let paths: Vec<ConditionalPath> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x0 = coupling.x0.row(i);
            let x1 = coupling.x1.row(i);
            match guided {
                Some(ctx) => {
                    let mut rng = substream(cfg.seed, Domain::Spline, epoch as u64, i as u64);
                    let kp = ctx.assign_keypoint(x0);
                    optimize_spline(x0, x1, ctx, kp, &opts, &mut rng)
                }
                None => brownian_bridge_path(x0, x1, opts.nu, opts.k_knots),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let diverged = paths.iter().filter(|p| p.diverged()).count();
    divergence_gate(diverged, n)?;
    Ok(paths)
}

/// Terminal-distribution evaluation of a forward network (plus the scene's
/// base drift, if any): simulate `n_eval` particles from `init` and compare
/// against fresh target draws. All randomness derives from `(seed, tag)`,
/// so re-running with the same arguments reproduces the metrics bitwise.
pub fn evaluate_forward(
    net: &DriftNetwork,
    scene: &Scene,
    init: &Sampler,
    n_eval: usize,
    sde_steps: usize,
    seed: u64,
    tag: u64,
) -> Result<EvalReport> {
    if n_eval <= KL_NEIGHBORS + 1 {
        return Err(Error::Domain(format!(
            "terminal metrics need more than {} particles, got {n_eval}",
            KL_NEIGHBORS + 1
        )));
    }
    let mut init_rng = substream(seed, Domain::Eval, tag, 0);
    let mut noise_rng = substream(seed, Domain::Eval, tag, 1);
    let mut xi_rng = substream(seed, Domain::Eval, tag, 2);
    let mut target_rng = substream(seed, Domain::Eval, tag, 3);
    let x0 = init.sample(n_eval, &mut init_rng);
    let traj = simulate_forward(net, scene, x0.view(), sde_steps, &mut noise_rng, &mut xi_rng)?;
    let target = scene.sample_target(n_eval, &mut target_rng);
    {
        let terminal = traj.index_axis(Axis(0), sde_steps);
        let w2 = exact_w2(terminal, target.view())?;
        let kl = knn_kl(terminal, target.view(), KL_NEIGHBORS)?;
        Ok(EvalReport { w2, knn_kl: kl, trajectory: traj })
    }
}

/// Result of [`evaluate_forward`].
pub struct EvalReport {
    pub w2: f64,
    pub knn_kl: f64,
    /// Full simulated trajectory, (steps+1) × n × d in physical time order;
    /// the metrics above compare its final slice against fresh target draws.
    pub trajectory: Array3<f64>,
}

impl EvalReport {
    /// Simulated t=1 particles.
    pub fn terminal(&self) -> ndarray::ArrayView2<'_, f64> {
        let steps = self.trajectory.dim().0 - 1;
        self.trajectory.index_axis(Axis(0), steps)
    }
}

fn window_mean(losses: &[f64], from_front: bool) -> f64 {
    let w = losses.len().min(LOSS_WINDOW);
    let slice = if from_front {
        &losses[..w]
    } else {
        &losses[losses.len() - w..]
    };
    slice.iter().sum::<f64>() / w as f64
}

/// Runs one alternating epoch: couple, build paths, regress the opposite
/// side's network onto the paths' conditional drifts, evaluate, flip.
pub fn train_epoch(
    state: &mut TrainState,
    scene: &Scene,
    guidance: Option<&GuidanceContext>,
    cfg: &MatchConfig,
) -> Result<EpochMetrics> {
    cfg.validate()?;
    let epoch = state.epoch;
    let coupling = sample_coupling(
        scene,
        &state.forward_net,
        &state.backward_net,
        epoch,
        state.direction,
        cfg.pairs_per_epoch,
        cfg.sde_steps,
        cfg.seed,
    )?;
    let paths = build_paths(scene, guidance, &coupling, cfg, epoch)?;
    let spline_diverged = paths.iter().filter(|p| p.diverged()).count();

    let fit = state.direction.flip();
    let d = scene.dim();
    let n = paths.len();
    let mut losses = Vec::with_capacity(cfg.inner_steps);
    {
        let (net, opt) = match fit {
            Direction::Forward => (&mut state.forward_net, &mut state.forward_opt),
            Direction::Backward => (&mut state.backward_net, &mut state.backward_opt),
        };
        opt.set_lr(cfg.lr * fit_lr_factor(epoch, cfg.epochs))?;
        for step in 0..cfg.inner_steps {
            let mut rng = substream(cfg.seed, Domain::Regression, epoch as u64, step as u64);
            // One shared time per minibatch, so the minibatch is a sample of
            // the population at that time (the mean-field base drift below
            // needs a same-time population).
            let t = TIME_MARGIN + (1.0 - 2.0 * TIME_MARGIN) * rng.gen::<f64>();
            let mut xs = Array2::zeros((cfg.batch, d));
            let mut targets = Array2::zeros((cfg.batch, d));
            for row in 0..cfg.batch {
                let pair = rng.gen_range(0..n);
                let sample = paths[pair].sample_conditional(t, &mut rng)?;
                let drift = match fit {
                    Direction::Forward => paths[pair].conditional_drift(sample.x_t.view(), t)?,
                    Direction::Backward => {
                        paths[pair].reverse_conditional_drift(sample.x_t.view(), t)?
                    }
                };
                xs.row_mut(row).assign(&sample.x_t);
                targets.row_mut(row).assign(&drift);
            }
            if fit == Direction::Forward {
                // The forward net learns the residual control on top of the
                // scene's base drift (which the simulator always adds back).
                let xi = Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
                if let Some(base) = scene.base_drift(xs.view(), xi.view()) {
                    targets -= &base?;
                }
            }
            let net_time = match fit {
                Direction::Forward => t,
                Direction::Backward => 1.0 - t,
            };
            let times = Array1::from_elem(cfg.batch, net_time);
            let (loss, grads) = net.regression_grads(xs.view(), times.view(), targets.view())?;
            opt.step(net, &grads)?;
            losses.push(loss);
        }
    }

    let report = evaluate_forward(
        &state.forward_net,
        scene,
        scene.source_sampler(),
        cfg.n_eval,
        cfg.sde_steps,
        cfg.seed,
        epoch as u64,
    )?;
    let record = EpochMetrics {
        epoch,
        coupling: match coupling.source {
            CouplingSource::Independent => "independent",
            CouplingSource::ForwardSimulated => "forward",
            CouplingSource::BackwardSimulated => "backward",
        }
        .to_string(),
        fit: fit.label().to_string(),
        bm_loss_first: window_mean(&losses, true),
        bm_loss: window_mean(&losses, false),
        w2: report.w2,
        knn_kl: report.knn_kl,
        spline_diverged,
        n_pairs: n,
    };
    state.metrics.push(record.clone());
    state.direction = state.direction.flip();
    state.epoch += 1;
    Ok(record)
}

/// Cosine learning-rate factor for the network fitted at `epoch`. Each net
/// is fitted every other epoch, so fit `epoch/2` of its ~`epochs/2` total
/// anneals that net's rate from the configured peak down to 5% of it,
/// damping the refit-to-refit oscillation of the alternating scheme.
pub(crate) fn fit_lr_factor(epoch: usize, epochs: usize) -> f64 {
    let fit_idx = (epoch / 2) as f64;
    let n_fits = if epoch % 2 == 0 { epochs.div_ceil(2) } else { epochs / 2 };
    let last = n_fits.saturating_sub(1).max(1) as f64;
    let r = (fit_idx / last).min(1.0);
    0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * r).cos())
}

#[derive(Serialize)]
struct ConfigSnapshot<'a> {
    scene: &'a str,
    dim: usize,
    sigma: f64,
    alpha: f64,
    n_keypoints: usize,
    config: &'a MatchConfig,
}

/// Full training run. When `run_dir` is given, the run persists a config
/// snapshot, per-epoch `metrics.jsonl` (bit-reproducible for a fixed config
/// and seed), per-epoch wallclock in `timings.jsonl`, and the latest network
/// checkpoints `forward.ckpt` / `backward.ckpt`.
///
/// Stops early once three consecutive epoch-to-epoch W2 changes fall below
/// `patience_tol` (if positive).
pub fn run_fsbm(
    scene: &Scene,
    guidance: Option<&GuidanceContext>,
    cfg: &MatchConfig,
    run_dir: Option<&Path>,
) -> Result<TrainState> {
    cfg.validate()?;
    if let Some(ctx) = guidance {
        if ctx.keypoints.dim() != scene.dim() {
            return Err(Error::Shape(format!(
                "keypoint dimension {} does not match scene dimension {}",
                ctx.keypoints.dim(),
                scene.dim()
            )));
        }
    }
    let mut logs = match run_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let snapshot = ConfigSnapshot {
                scene: scene.name(),
                dim: scene.dim(),
                sigma: scene.sigma(),
                alpha: guidance.map_or(0.0, |ctx| ctx.alpha),
                n_keypoints: guidance.map_or(0, |ctx| ctx.keypoints.len()),
                config: cfg,
            };
            fs::write(
                dir.join("config_snapshot.json"),
                serde_json::to_string_pretty(&snapshot).expect("config serializes") + "\n",
            )?;
            let metrics = BufWriter::new(File::create(dir.join("metrics.jsonl"))?);
            let timings = BufWriter::new(File::create(dir.join("timings.jsonl"))?);
            Some((metrics, timings))
        }
        None => None,
    };

    let mut state = TrainState::new(scene, cfg)?;
    for _ in 0..cfg.epochs {
        let started = Instant::now();
        let record = train_epoch(&mut state, scene, guidance, cfg)?;
        log::info!(
            "epoch {:>3} [{} coupling, fit {}] loss {:.4} -> {:.4}  W2 {:.4}  kNN-KL {:.4}  ({:.1}s)",
            record.epoch,
            record.coupling,
            record.fit,
            record.bm_loss_first,
            record.bm_loss,
            record.w2,
            record.knn_kl,
            started.elapsed().as_secs_f64()
        );
        if let Some((metrics, timings)) = logs.as_mut() {
            serde_json::to_writer(&mut *metrics, &record).expect("metrics serialize");
            metrics.write_all(b"\n")?;
            metrics.flush()?;
            writeln!(
                timings,
                "{{\"epoch\":{},\"seconds\":{:.3}}}",
                record.epoch,
                started.elapsed().as_secs_f64()
            )?;
            timings.flush()?;
            if let Some(dir) = run_dir {
                save_checkpoint(&state.forward_net, &dir.join("forward.ckpt"))?;
                save_checkpoint(&state.backward_net, &dir.join("backward.ckpt"))?;
            }
        }
        if cfg.patience_tol > 0.0 && state.metrics.len() >= 4 {
            let w2: Vec<f64> = state.metrics.iter().map(|m| m.w2).collect();
            let settled = w2
                .windows(2)
                .rev()
                .take(3)
                .all(|pair| (pair[1] - pair[0]).abs() < cfg.patience_tol);
            if settled {
                break;
            }
        }
    }
    Ok(state)
}
