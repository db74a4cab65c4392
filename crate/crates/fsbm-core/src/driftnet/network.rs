//! Residual MLP drift field with hand-written reverse-mode gradients.
//!
//! The network maps a state `x ∈ R^d` and a time `t` to a drift vector in
//! `R^d`. Time enters through a sinusoidal embedding that is concatenated to
//! the state (and re-concatenated inside every residual block), so the
//! network never has to resolve absolute time from a single scalar.
//!
//! All math is double precision and the backward pass is written out layer
//! by layer, which keeps the crate free of autodiff machinery and makes the
//! gradients directly checkable against finite differences.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// Sinusoidal time embedding: pairs `[sin(ω_k t), cos(ω_k t)]` for
/// `k = 1..dim/2`, frequencies geometric from 1 to 1000.
///
/// `dim` must be even and at least 2.
pub fn time_embed(t: f64, dim: usize) -> Result<Array1<f64>> {
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::Domain(format!(
            "time embedding dimension must be even and >= 2, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for k in 0..half {
        let omega = if half == 1 {
            1.0
        } else {
            1000f64.powf(k as f64 / (half - 1) as f64)
        };
        out[2 * k] = (omega * t).sin();
        out[2 * k + 1] = (omega * t).cos();
    }
    Ok(out)
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// d/dx silu(x) = σ(x)·(1 + x·(1 − σ(x))).
fn silu_prime(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Weights of one affine map `y = x Wᵀ + b`, stored as `w: out×in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl LinearParams {
    fn uniform_init(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = Array2::from_shape_fn((out_dim, in_dim), |_| rng.gen_range(-bound..=bound));
        LinearParams {
            w,
            b: Array1::zeros(out_dim),
        }
    }

    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        LinearParams {
            w: Array2::zeros((out_dim, in_dim)),
            b: Array1::zeros(out_dim),
        }
    }

    fn zeros_like(&self) -> Self {
        LinearParams {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Accumulates weight gradients for upstream gradient `dy` and returns
    /// the gradient with respect to the input.
    fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut LinearParams) -> Array2<f64> {
        grad.w += &dy.t().dot(x);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w)
    }
}

/// One residual block: `h ← h + W₂·silu(W₁·[h | e] + b₁) + b₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub lin1: LinearParams,
    pub lin2: LinearParams,
}

/// Complete parameter set of a [`DriftNetwork`], also used for gradients
/// and optimizer moments (same shapes, element-wise correspondence).
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub input: LinearParams,
    pub blocks: Vec<BlockParams>,
    pub head: LinearParams,
}

impl NetParams {
    pub fn zeros_like(&self) -> Self {
        NetParams {
            input: self.input.zeros_like(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    lin1: b.lin1.zeros_like(),
                    lin2: b.lin2.zeros_like(),
                })
                .collect(),
            head: self.head.zeros_like(),
        }
    }

    /// All parameter tensors as flat slices, in a fixed documented order:
    /// input (w, b), then per block (w₁, b₁, w₂, b₂), then head (w, b).
    pub fn flat(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 + 4 * self.blocks.len() + 2);
        out.push(self.input.w.as_slice().expect("standard layout"));
        out.push(self.input.b.as_slice().expect("standard layout"));
        for blk in &self.blocks {
            out.push(blk.lin1.w.as_slice().expect("standard layout"));
            out.push(blk.lin1.b.as_slice().expect("standard layout"));
            out.push(blk.lin2.w.as_slice().expect("standard layout"));
            out.push(blk.lin2.b.as_slice().expect("standard layout"));
        }
        out.push(self.head.w.as_slice().expect("standard layout"));
        out.push(self.head.b.as_slice().expect("standard layout"));
        out
    }

    /// Mutable twin of [`NetParams::flat`]; identical ordering.
    pub fn flat_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 + 4 * self.blocks.len() + 2);
        out.push(self.input.w.as_slice_mut().expect("standard layout"));
        out.push(self.input.b.as_slice_mut().expect("standard layout"));
        for blk in &mut self.blocks {
            out.push(blk.lin1.w.as_slice_mut().expect("standard layout"));
            out.push(blk.lin1.b.as_slice_mut().expect("standard layout"));
            out.push(blk.lin2.w.as_slice_mut().expect("standard layout"));
            out.push(blk.lin2.b.as_slice_mut().expect("standard layout"));
        }
        out.push(self.head.w.as_slice_mut().expect("standard layout"));
        out.push(self.head.b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn n_params(&self) -> usize {
        self.flat().iter().map(|s| s.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.flat()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Residual MLP drift field `u(x, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftNetwork {
    input_dim: usize,
    time_embed_dim: usize,
    hidden_dim: usize,
    params: NetParams,
}

impl DriftNetwork {
    /// Builds a network with uniformly initialized hidden layers and a
    /// zero-initialized output head, so a fresh network is the zero drift.
    pub fn new(
        input_dim: usize,
        time_embed_dim: usize,
        hidden_dim: usize,
        n_blocks: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || n_blocks == 0 {
            return Err(Error::Domain(format!(
                "network dimensions must be positive, got d={input_dim} hidden={hidden_dim} blocks={n_blocks}"
            )));
        }
        if time_embed_dim < 2 || time_embed_dim % 2 != 0 {
            return Err(Error::Domain(format!(
                "time embedding dimension must be even and >= 2, got {time_embed_dim}"
            )));
        }
        let input = LinearParams::uniform_init(hidden_dim, input_dim + time_embed_dim, rng);
        let blocks = (0..n_blocks)
            .map(|_| BlockParams {
                lin1: LinearParams::uniform_init(hidden_dim, hidden_dim + time_embed_dim, rng),
                lin2: LinearParams::uniform_init(hidden_dim, hidden_dim, rng),
            })
            .collect();
        let head = LinearParams::zeros(input_dim, hidden_dim);
        Ok(DriftNetwork {
            input_dim,
            time_embed_dim,
            hidden_dim,
            params: NetParams {
                input,
                blocks,
                head,
            },
        })
    }

    /// Reconstructs a network from explicit parameters (checkpoint loading).
    pub fn from_params(
        input_dim: usize,
        time_embed_dim: usize,
        hidden_dim: usize,
        params: NetParams,
    ) -> Result<Self> {
        let expected_blocks = params.blocks.len();
        let net = DriftNetwork {
            input_dim,
            time_embed_dim,
            hidden_dim,
            params,
        };
        let p = &net.params;
        let shapes_ok = p.input.w.dim() == (hidden_dim, input_dim + time_embed_dim)
            && p.input.b.len() == hidden_dim
            && p.head.w.dim() == (input_dim, hidden_dim)
            && p.head.b.len() == input_dim
            && p.blocks.iter().all(|b| {
                b.lin1.w.dim() == (hidden_dim, hidden_dim + time_embed_dim)
                    && b.lin1.b.len() == hidden_dim
                    && b.lin2.w.dim() == (hidden_dim, hidden_dim)
                    && b.lin2.b.len() == hidden_dim
            });
        if !shapes_ok || expected_blocks == 0 {
            return Err(Error::Shape(
                "parameter shapes inconsistent with declared dimensions".into(),
            ));
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn time_embed_dim(&self) -> usize {
        self.time_embed_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn n_blocks(&self) -> usize {
        self.params.blocks.len()
    }

    pub fn params(&self) -> &NetParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NetParams {
        &mut self.params
    }

    fn embed_batch(&self, t: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
        let mut emb = Array2::zeros((t.len(), self.time_embed_dim));
        for (i, &ti) in t.iter().enumerate() {
            if !ti.is_finite() {
                return Err(Error::Domain(format!("non-finite time input {ti}")));
            }
            let e = time_embed(ti, self.time_embed_dim)?;
            emb.row_mut(i).assign(&e);
        }
        Ok(emb)
    }

    fn concat_cols(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("row counts match")
    }

    fn validate_inputs(&self, x: &ArrayView2<'_, f64>, t: &ArrayView1<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "state dimension {} does not match network input {}",
                x.ncols(),
                self.input_dim
            )));
        }
        if x.nrows() != t.len() {
            return Err(Error::Shape(format!(
                "batch sizes disagree: {} states vs {} times",
                x.nrows(),
                t.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite state input".into()));
        }
        Ok(())
    }

    /// Batched forward pass: one drift vector per row of `x`.
    pub fn forward(&self, x: ArrayView2<'_, f64>, t: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x, t)?.0)
    }

    fn forward_cached(
        &self,
        x: ArrayView2<'_, f64>,
        t: ArrayView1<'_, f64>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.validate_inputs(&x, &t)?;
        if !self.params.all_finite() {
            return Err(Error::Domain("network weights contain non-finite values".into()));
        }
        let emb = self.embed_batch(t)?;
        let inp = Self::concat_cols(&x.to_owned(), &emb);
        let z0 = self.params.input.forward(&inp);
        let h0 = z0.mapv(silu);

        let mut h = h0.clone();
        let mut block_caches = Vec::with_capacity(self.params.blocks.len());
        for blk in &self.params.blocks {
            let cat = Self::concat_cols(&h, &emb);
            let z1 = blk.lin1.forward(&cat);
            let a = z1.mapv(silu);
            let z2 = blk.lin2.forward(&a);
            let h_next = &h + &z2;
            block_caches.push(BlockCache { cat, z1, a });
            h = h_next;
        }
        let out = self.params.head.forward(&h);
        Ok((
            out,
            ForwardCache {
                inp,
                z0,
                block_caches,
                h_final: h,
            },
        ))
    }

    /// Reverse-mode gradients of `scalar = Σ_batch d_out ⊙ forward(x, t)`
    /// with respect to every weight, for a caller-supplied output gradient.
    fn backward(&self, cache: &ForwardCache, d_out: &Array2<f64>) -> NetParams {
        let mut grads = self.params.zeros_like();
        let mut dh = self
            .params
            .head
            .backward(&cache.h_final, d_out, &mut grads.head);
        for (blk, (bcache, bgrad)) in self
            .params
            .blocks
            .iter()
            .zip(cache.block_caches.iter().zip(grads.blocks.iter_mut()))
            .rev()
        {
            // Residual connection: dh flows through both the skip and the block.
            let da = blk.lin2.backward(&bcache.a, &dh, &mut bgrad.lin2);
            let dz1 = &da * &bcache.z1.mapv(silu_prime);
            let dcat = blk.lin1.backward(&bcache.cat, &dz1, &mut bgrad.lin1);
            dh += &dcat.slice(ndarray::s![.., ..self.hidden_dim]);
        }
        let dz0 = &dh * &cache.z0.mapv(silu_prime);
        self.params.input.backward(&cache.inp, &dz0, &mut grads.input);
        grads
    }

    /// Loss and weight gradients of the drift-matching regression
    /// `L = ½·mean_batch ‖forward(x, t) − target‖²`.
    pub fn regression_grads(
        &self,
        x: ArrayView2<'_, f64>,
        t: ArrayView1<'_, f64>,
        target: ArrayView2<'_, f64>,
    ) -> Result<(f64, NetParams)> {
        if target.dim() != (x.nrows(), self.input_dim) {
            return Err(Error::Shape(format!(
                "target shape {:?} does not match batch ({}, {})",
                target.dim(),
                x.nrows(),
                self.input_dim
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::Domain("empty regression batch".into()));
        }
        let (out, cache) = self.forward_cached(x, t)?;
        let resid = &out - &target;
        let n = x.nrows() as f64;
        let loss = 0.5 * resid.iter().map(|r| r * r).sum::<f64>() / n;
        let d_out = resid.mapv(|r| r / n);
        Ok((loss, self.backward(&cache, &d_out)))
    }
}

struct BlockCache {
    cat: Array2<f64>,
    z1: Array2<f64>,
    a: Array2<f64>,
}

struct ForwardCache {
    inp: Array2<f64>,
    z0: Array2<f64>,
    block_caches: Vec<BlockCache>,
    h_final: Array2<f64>,
}
