//! Hypotheses `f = psi . phi` with a critic `theta` on the latent space.
//!
//! `phi` maps a (user, item) pair to `z` in R^k: the elementwise product of
//! the two embeddings for MF, or a two-layer tanh MLP over their
//! concatenation for NCF. `psi` is a linear head producing the logit.
//! `theta` is a `k -> hidden -> 1` tanh perceptron scoring `z`; its score is
//! read as `log nu` in the dual form of the KL divergence.
//!
//! Gradients are analytic. `forward` returns a trace that `backward` consumes;
//! each parameter block can be frozen per call, which is how stop-gradient
//! and feature-only updates are expressed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Mf,
    Ncf,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Mf => "mf",
            Variant::Ncf => "ncf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mf" => Some(Variant::Mf),
            "ncf" => Some(Variant::Ncf),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    /// Feature map.
    Phi,
    /// Prediction head.
    Psi,
    /// Critic.
    Theta,
}

/// Which blocks receive no gradient from a backward call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Freeze {
    pub phi: bool,
    pub psi: bool,
    pub theta: bool,
}

impl Freeze {
    pub const NONE: Freeze = Freeze {
        phi: false,
        psi: false,
        theta: false,
    };
    pub const ALL: Freeze = Freeze {
        phi: true,
        psi: true,
        theta: true,
    };

    /// Everything frozen except `phi`.
    pub const PHI_ONLY: Freeze = Freeze {
        phi: false,
        psi: true,
        theta: true,
    };

    pub fn is_frozen(&self, block: Block) -> bool {
        match block {
            Block::Phi => self.phi,
            Block::Psi => self.psi,
            Block::Theta => self.theta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    fn gaussian(shape: &[usize], sd: f64, rng: &mut Rng) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| sd * rng.gaussian()).collect(),
        }
    }

    /// Glorot/Xavier uniform.
    fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.shape.last().copied().unwrap_or(0);
        &self.data[r * w..(r + 1) * w]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let w = self.shape.last().copied().unwrap_or(0);
        &mut self.data[r * w..(r + 1) * w]
    }
}

/// `y = W x + b` with `W` stored row-major as `[out, in]`.
fn affine(w: &Tensor, b: &Tensor, x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, slot) in out.iter_mut().enumerate() {
        let row = &w.data[o * n_in..(o + 1) * n_in];
        let mut acc = b.data[o];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *slot = acc;
    }
}

/// Accumulate `dW += d (x)^T`, `db += d`, and optionally `dx += W^T d`.
fn affine_backward(
    w: &Tensor,
    x: &[f64],
    d_out: &[f64],
    grad_w: Option<(&mut Tensor, &mut Tensor)>,
    dx: Option<&mut [f64]>,
) {
    let n_in = x.len();
    if let Some((gw, gb)) = grad_w {
        for (o, &d) in d_out.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            gb.data[o] += d;
            for (g, xi) in gw.data[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                *g += d * xi;
            }
        }
    }
    if let Some(dx) = dx {
        for (o, &d) in d_out.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (slot, wi) in dx.iter_mut().zip(&w.data[o * n_in..(o + 1) * n_in]) {
                *slot += d * wi;
            }
        }
    }
}

/// `k -> hidden -> 1` tanh perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Hidden activations and score of one critic evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticTrace {
    pub hidden: Vec<f64>,
    pub score: f64,
}

impl Critic {
    pub fn init(input_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        Critic {
            w1: Tensor::glorot(&[hidden, input_dim], input_dim, hidden, rng),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::glorot(&[hidden], hidden, 1, rng),
            b2: Tensor::zeros(&[1]),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Critic {
            w1: Tensor::zeros(&[hidden, input_dim]),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[hidden]),
            b2: Tensor::zeros(&[1]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.shape[1]
    }

    pub fn hidden(&self) -> usize {
        self.w1.shape[0]
    }

    pub fn forward(&self, z: &[f64]) -> CriticTrace {
        let mut hidden = vec![0.0; self.hidden()];
        affine(&self.w1, &self.b1, z, &mut hidden);
        hidden.iter_mut().for_each(|h| *h = h.tanh());
        let score = self.b2.data[0] + hidden.iter().zip(&self.w2.data).map(|(h, w)| h * w).sum::<f64>();
        CriticTrace { hidden, score }
    }

    pub fn score(&self, z: &[f64]) -> f64 {
        self.forward(z).score
    }

    /// Backpropagate `d_score`; accumulates into `grads` when given and returns `d score / d z`.
    pub fn backward(&self, z: &[f64], trace: &CriticTrace, d_score: f64, grads: Option<&mut Critic>) -> Vec<f64> {
        let da: Vec<f64> = trace
            .hidden
            .iter()
            .zip(&self.w2.data)
            .map(|(h, w)| d_score * w * (1.0 - h * h))
            .collect();
        if let Some(g) = grads {
            g.b2.data[0] += d_score;
            for (gw, h) in g.w2.data.iter_mut().zip(&trace.hidden) {
                *gw += d_score * h;
            }
            affine_backward(&self.w1, z, &da, Some((&mut g.w1, &mut g.b1)), None);
        }
        let mut dz = vec![0.0; z.len()];
        affine_backward(&self.w1, z, &da, None, Some(&mut dz));
        dz
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 4] {
        [
            ("critic.w1", &self.w1),
            ("critic.b1", &self.b1),
            ("critic.w2", &self.w2),
            ("critic.b2", &self.b2),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// NCF tower `[2k -> k -> k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Mlp {
    fn init(k: usize, rng: &mut Rng) -> Self {
        Mlp {
            w1: Tensor::glorot(&[k, 2 * k], 2 * k, k, rng),
            b1: Tensor::zeros(&[k]),
            w2: Tensor::glorot(&[k, k], k, k, rng),
            b2: Tensor::zeros(&[k]),
        }
    }

    fn zeros(k: usize) -> Self {
        Mlp {
            w1: Tensor::zeros(&[k, 2 * k]),
            b1: Tensor::zeros(&[k]),
            w2: Tensor::zeros(&[k, k]),
            b2: Tensor::zeros(&[k]),
        }
    }
}

/// Every trainable tensor. Also used as the gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub user_embeddings: Tensor,
    pub item_embeddings: Tensor,
    pub mlp: Option<Mlp>,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
    pub critic: Critic,
}

pub type Gradients = Params;

impl Params {
    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor| Tensor::zeros(&t.shape);
        Params {
            user_embeddings: z(&self.user_embeddings),
            item_embeddings: z(&self.item_embeddings),
            mlp: self.mlp.as_ref().map(|m| Mlp::zeros(m.b1.len())),
            head_weight: z(&self.head_weight),
            head_bias: z(&self.head_bias),
            critic: Critic::zeros(self.critic.input_dim(), self.critic.hidden()),
        }
    }

    /// Named tensors in a fixed order, tagged with their block.
    pub fn tensors(&self) -> Vec<(&'static str, Block, &Tensor)> {
        let mut out = vec![
            ("user_embeddings", Block::Phi, &self.user_embeddings),
            ("item_embeddings", Block::Phi, &self.item_embeddings),
        ];
        if let Some(m) = &self.mlp {
            out.extend([
                ("mlp.w1", Block::Phi, &m.w1),
                ("mlp.b1", Block::Phi, &m.b1),
                ("mlp.w2", Block::Phi, &m.w2),
                ("mlp.b2", Block::Phi, &m.b2),
            ]);
        }
        out.push(("head.weight", Block::Psi, &self.head_weight));
        out.push(("head.bias", Block::Psi, &self.head_bias));
        out.extend(self.critic.tensors().map(|(n, t)| (n, Block::Theta, t)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(Block, &mut Tensor)> {
        let mut out = vec![
            (Block::Phi, &mut self.user_embeddings),
            (Block::Phi, &mut self.item_embeddings),
        ];
        if let Some(m) = &mut self.mlp {
            out.extend([
                (Block::Phi, &mut m.w1),
                (Block::Phi, &mut m.b1),
                (Block::Phi, &mut m.w2),
                (Block::Phi, &mut m.b2),
            ]);
        }
        out.push((Block::Psi, &mut self.head_weight));
        out.push((Block::Psi, &mut self.head_bias));
        out.extend(self.critic.tensors_mut().map(|t| (Block::Theta, t)));
        out
    }

    /// Concatenation of the tensors of `block` (all blocks when `None`).
    pub fn flatten(&self, block: Option<Block>) -> Vec<f64> {
        self.tensors()
            .into_iter()
            .filter(|(_, b, _)| block.is_none_or(|x| x == *b))
            .flat_map(|(_, _, t)| t.data.iter().copied())
            .collect()
    }

    /// Inverse of [`Params::flatten`] for the same block selection.
    pub fn unflatten(&mut self, block: Option<Block>, values: &[f64]) {
        let mut offset = 0;
        for (b, t) in self.tensors_mut() {
            if block.is_none_or(|x| x == b) {
                let n = t.data.len();
                t.data.copy_from_slice(&values[offset..offset + n]);
                offset += n;
            }
        }
        assert_eq!(offset, values.len(), "unflatten length mismatch");
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        let others = other.tensors();
        for ((_, t), (_, _, o)) in self.tensors_mut().into_iter().zip(others) {
            for (a, b) in t.data.iter_mut().zip(&o.data) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn zero_block(&mut self, block: Block) {
        for (b, t) in self.tensors_mut() {
            if b == block {
                t.data.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, t)| t.data.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub n_users: usize,
    pub n_items: usize,
    pub k: usize,
    pub dropout_rate: f64,
    pub critic_hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Activations of one forward pass, consumed by [`Model::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub user: usize,
    pub item: usize,
    /// `phi(u, i)` before head dropout.
    pub z: Vec<f64>,
    pub logit: f64,
    /// NCF hidden activations (post-tanh, pre-dropout).
    hidden: Vec<f64>,
    /// Inverted-dropout scale factors; empty when no dropout was applied.
    hidden_mask: Vec<f64>,
    z_mask: Vec<f64>,
    version: u64,
}

impl ForwardTrace {
    pub fn z_mask(&self) -> &[f64] {
        &self.z_mask
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
    /// Seed the parameters were initialized from.
    pub seed: u64,
    version: u64,
}

fn dropout_mask(n: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..n)
        .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64, rng: &mut Rng) -> Result<Self> {
        if config.k == 0 {
            return Err(Error::Config("embedding dimension k must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                config.dropout_rate
            )));
        }
        if config.critic_hidden == 0 {
            return Err(Error::Config("critic_hidden must be positive".into()));
        }
        let k = config.k;
        let user_embeddings = Tensor::gaussian(&[config.n_users, k], 0.01, rng);
        let item_embeddings = Tensor::gaussian(&[config.n_items, k], 0.01, rng);
        let (mlp, head_weight) = match config.variant {
            // all-ones head: classic dot-product MF at initialization
            Variant::Mf => (None, Tensor::filled(&[k], 1.0)),
            Variant::Ncf => {
                let mlp = Mlp::init(k, rng);
                (Some(mlp), Tensor::glorot(&[k], k, 1, rng))
            }
        };
        let critic = Critic::init(k, config.critic_hidden, rng);
        Ok(Model {
            config,
            params: Params {
                user_embeddings,
                item_embeddings,
                mlp,
                head_weight,
                head_bias: Tensor::zeros(&[1]),
                critic,
            },
            seed,
            version: 0,
        })
    }

    /// Assemble a model from explicit parameters (checkpoint loading, tests).
    pub fn from_params(config: ModelConfig, params: Params, seed: u64) -> Result<Self> {
        let k = config.k;
        let check = |name: &str, t: &Tensor, shape: &[usize]| {
            if t.shape != shape {
                Err(Error::Validation(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape
                )))
            } else {
                Ok(())
            }
        };
        check("user_embeddings", &params.user_embeddings, &[config.n_users, k])?;
        check("item_embeddings", &params.item_embeddings, &[config.n_items, k])?;
        check("head.weight", &params.head_weight, &[k])?;
        check("head.bias", &params.head_bias, &[1])?;
        check("critic.w1", &params.critic.w1, &[config.critic_hidden, k])?;
        check("critic.b1", &params.critic.b1, &[config.critic_hidden])?;
        check("critic.w2", &params.critic.w2, &[config.critic_hidden])?;
        check("critic.b2", &params.critic.b2, &[1])?;
        match (config.variant, &params.mlp) {
            (Variant::Mf, None) => {}
            (Variant::Ncf, Some(m)) => {
                check("mlp.w1", &m.w1, &[k, 2 * k])?;
                check("mlp.b1", &m.b1, &[k])?;
                check("mlp.w2", &m.w2, &[k, k])?;
                check("mlp.b2", &m.b2, &[k])?;
            }
            _ => return Err(Error::Validation("MLP tensors must be present exactly for NCF".into())),
        }
        Ok(Model {
            config,
            params,
            seed,
            version: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Apply `update` to the parameters and invalidate outstanding traces.
    pub fn update_params<F: FnOnce(&mut Params) -> Result<()>>(&mut self, update: F) -> Result<()> {
        self.version += 1;
        update(&mut self.params)
    }

    pub fn zero_grads(&self) -> Gradients {
        self.params.zeros_like()
    }

    fn check_ids(&self, user: usize, item: usize) {
        assert!(
            user < self.config.n_users && item < self.config.n_items,
            "pair ({user}, {item}) outside {}x{}",
            self.config.n_users,
            self.config.n_items
        );
    }

    fn features_into(&self, user: usize, item: usize, mode: Mode, rng: &mut Rng, trace: &mut ForwardTrace) {
        let k = self.k();
        let u = self.params.user_embeddings.row(user);
        let v = self.params.item_embeddings.row(item);
        let rate = self.config.dropout_rate;
        let drop = mode == Mode::Train && rate > 0.0;
        match &self.params.mlp {
            None => {
                trace.z.extend(u.iter().zip(v).map(|(a, b)| a * b));
            }
            Some(mlp) => {
                let mut x = Vec::with_capacity(2 * k);
                x.extend_from_slice(u);
                x.extend_from_slice(v);
                let mut h = vec![0.0; k];
                affine(&mlp.w1, &mlp.b1, &x, &mut h);
                h.iter_mut().for_each(|a| *a = a.tanh());
                let h_in: Vec<f64> = if drop {
                    trace.hidden_mask = dropout_mask(k, rate, rng);
                    h.iter().zip(&trace.hidden_mask).map(|(a, m)| a * m).collect()
                } else {
                    h.clone()
                };
                trace.hidden = h;
                let mut z = vec![0.0; k];
                affine(&mlp.w2, &mlp.b2, &h_in, &mut z);
                z.iter_mut().for_each(|a| *a = a.tanh());
                trace.z = z;
            }
        }
        if drop {
            trace.z_mask = dropout_mask(k, rate, rng);
        }
    }

    /// `z = phi(u, i)` then `logit = psi(z)`. Train mode applies inverted dropout.
    pub fn forward(&self, user: usize, item: usize, mode: Mode, rng: &mut Rng) -> ForwardTrace {
        self.check_ids(user, item);
        let mut trace = ForwardTrace {
            user,
            item,
            z: Vec::with_capacity(self.k()),
            logit: 0.0,
            hidden: Vec::new(),
            hidden_mask: Vec::new(),
            z_mask: Vec::new(),
            version: self.version,
        };
        self.features_into(user, item, mode, rng, &mut trace);
        let w = &self.params.head_weight.data;
        let mut logit = self.params.head_bias.data[0];
        if trace.z_mask.is_empty() {
            logit += trace.z.iter().zip(w).map(|(z, w)| z * w).sum::<f64>();
        } else {
            logit += trace
                .z
                .iter()
                .zip(&trace.z_mask)
                .zip(w)
                .map(|((z, m), w)| z * m * w)
                .sum::<f64>();
        }
        trace.logit = logit;
        trace
    }

    /// Eval-mode logit without keeping a trace.
    pub fn score(&self, user: usize, item: usize) -> f64 {
        self.check_ids(user, item);
        let w = &self.params.head_weight.data;
        let b = self.params.head_bias.data[0];
        match &self.params.mlp {
            None => {
                let u = self.params.user_embeddings.row(user);
                let v = self.params.item_embeddings.row(item);
                b + u.iter().zip(v).zip(w).map(|((a, c), w)| a * c * w).sum::<f64>()
            }
            Some(_) => {
                let z = self.embed(user, item);
                b + z.iter().zip(w).map(|(z, w)| z * w).sum::<f64>()
            }
        }
    }

    /// Eval-mode `phi(u, i)`.
    pub fn embed(&self, user: usize, item: usize) -> Vec<f64> {
        // Eval mode never touches the generator; the dummy is never advanced.
        let mut dummy = Rng::new(0, 0);
        let mut trace = ForwardTrace {
            user,
            item,
            z: Vec::with_capacity(self.k()),
            logit: 0.0,
            hidden: Vec::new(),
            hidden_mask: Vec::new(),
            z_mask: Vec::new(),
            version: self.version,
        };
        self.check_ids(user, item);
        self.features_into(user, item, Mode::Eval, &mut dummy, &mut trace);
        trace.z
    }

    pub fn critic_forward(&self, z: &[f64]) -> CriticTrace {
        self.params.critic.forward(z)
    }

    /// Backpropagate a critic score gradient. Returns `d/dz` for the feature map.
    pub fn backward_critic(
        &self,
        z: &[f64],
        trace: &CriticTrace,
        d_score: f64,
        freeze: Freeze,
        grads: &mut Gradients,
    ) -> Vec<f64> {
        let g = if freeze.theta { None } else { Some(&mut grads.critic) };
        self.params.critic.backward(z, trace, d_score, g)
    }

    /// Accumulate gradients of one trace given `d loss / d logit` and an
    /// optional extra `d loss / d z` (from the critic path).
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        d_logit: f64,
        d_z_extra: Option<&[f64]>,
        freeze: Freeze,
        grads: &mut Gradients,
    ) -> Result<()> {
        #[cfg(debug_assertions)]
        if trace.version != self.version {
            return Err(Error::Contract(format!(
                "stale trace: produced at parameter version {}, model is at {}",
                trace.version, self.version
            )));
        }
        let k = self.k();
        let w = &self.params.head_weight.data;
        let masked = !trace.z_mask.is_empty();
        if !freeze.psi && d_logit != 0.0 {
            grads.head_bias.data[0] += d_logit;
            for j in 0..k {
                let zj = if masked {
                    trace.z[j] * trace.z_mask[j]
                } else {
                    trace.z[j]
                };
                grads.head_weight.data[j] += d_logit * zj;
            }
        }
        if freeze.phi {
            return Ok(());
        }
        let mut dz: Vec<f64> = (0..k)
            .map(|j| {
                let m = if masked { trace.z_mask[j] } else { 1.0 };
                d_logit * w[j] * m
            })
            .collect();
        if let Some(extra) = d_z_extra {
            for (a, b) in dz.iter_mut().zip(extra) {
                *a += b;
            }
        }
        let (u, i) = (trace.user, trace.item);
        match &self.params.mlp {
            None => {
                let ue = self.params.user_embeddings.row(u);
                let ie = self.params.item_embeddings.row(i);
                let gu = grads.user_embeddings.row_mut(u);
                for j in 0..k {
                    gu[j] += dz[j] * ie[j];
                }
                let gi = grads.item_embeddings.row_mut(i);
                for j in 0..k {
                    gi[j] += dz[j] * ue[j];
                }
            }
            Some(mlp) => {
                let gm = grads.mlp.as_mut().expect("NCF gradients carry MLP tensors");
                let hmask = !trace.hidden_mask.is_empty();
                let h_in: Vec<f64> = if hmask {
                    trace
                        .hidden
                        .iter()
                        .zip(&trace.hidden_mask)
                        .map(|(a, m)| a * m)
                        .collect()
                } else {
                    trace.hidden.clone()
                };
                let da2: Vec<f64> = dz.iter().zip(&trace.z).map(|(d, z)| d * (1.0 - z * z)).collect();
                let mut dh_in = vec![0.0; k];
                affine_backward(&mlp.w2, &h_in, &da2, Some((&mut gm.w2, &mut gm.b2)), Some(&mut dh_in));
                let da1: Vec<f64> = (0..k)
                    .map(|j| {
                        let m = if hmask { trace.hidden_mask[j] } else { 1.0 };
                        let h = trace.hidden[j];
                        dh_in[j] * m * (1.0 - h * h)
                    })
                    .collect();
                let mut x = Vec::with_capacity(2 * k);
                x.extend_from_slice(self.params.user_embeddings.row(u));
                x.extend_from_slice(self.params.item_embeddings.row(i));
                let mut dx = vec![0.0; 2 * k];
                affine_backward(&mlp.w1, &x, &da1, Some((&mut gm.w1, &mut gm.b1)), Some(&mut dx));
                for (g, d) in grads.user_embeddings.row_mut(u).iter_mut().zip(&dx[..k]) {
                    *g += d;
                }
                for (g, d) in grads.item_embeddings.row_mut(i).iter_mut().zip(&dx[k..]) {
                    *g += d;
                }
            }
        }
        Ok(())
    }

    /// Batch backward: `partials[j]` is `d loss / d logit` for `traces[j]`.
    pub fn backward_batch(&self, traces: &[ForwardTrace], partials: &[f64], freeze: Freeze) -> Result<Gradients> {
        if traces.len() != partials.len() {
            return Err(Error::Contract("one partial per trace is required".into()));
        }
        let mut grads = self.zero_grads();
        for (t, &d) in traces.iter().zip(partials) {
            self.backward(t, d, None, freeze, &mut grads)?;
        }
        Ok(grads)
    }
}
