//! Training loops for the adversarial self-training objective and baselines.
//!
//! Every step samples a batch from the training pool (logged data plus any
//! labeled uniform data) and a batch of uniform user/item pairs, computes the
//! configured objective and applies one optimizer step to all blocks at once:
//! descent on the feature map and head, ascent on the critic.

use serde::{Deserialize, Serialize};

use crate::data::{drop_negatives, Dataset, Interaction, NegativeSampler};
use crate::error::{Error, Result};
use crate::eval::{evaluate, HrMode};
use crate::losses::{
    adversarial, estimate_propensity, loss_biased_erm, loss_ips, loss_multitask, loss_total, Components, LossWeights,
    Propensity, TotalOptions,
};
use crate::models::{Block, Gradients, Model, ModelConfig, Variant};
use crate::numcore::{adam_step, sgd_step, AdamConfig, AdamState, OptimizerKind, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Biased,
    Ips,
    MultiTask,
    #[default]
    Ast,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Biased => "biased",
            Objective::Ips => "ips",
            Objective::MultiTask => "multi_task",
            Objective::Ast => "ast",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub weights: LossWeights,
    pub lr: f64,
    /// Critic learning rate; the shared rate when unset.
    pub critic_lr: Option<f64>,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub max_steps: usize,
    pub batch_size_d: usize,
    pub batch_size_q: usize,
    pub teacher_refresh: usize,
    pub eval_every: usize,
    pub patience: usize,
    /// Critic updates per step; extra ones run on the current batch before the joint step.
    pub critic_steps: usize,
    pub entropy_updates_head: bool,
    /// Power of the popularity propensity model.
    pub propensity_tau: f64,
    /// Drop logged negatives and sample unobserved items as label-0 examples instead.
    pub implicit: bool,
    /// Label-0 samples per logged positive and epoch in implicit mode.
    pub neg_ratio: usize,
    pub variant: Variant,
    pub k: usize,
    pub dropout_rate: f64,
    pub critic_hidden: usize,
    /// Cut-off of the validation metric used for model selection.
    pub eval_k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Ast,
            weights: LossWeights::default(),
            lr: 0.005,
            critic_lr: None,
            weight_decay: 1e-5,
            optimizer: OptimizerKind::Adam,
            max_steps: 20_000,
            batch_size_d: 512,
            batch_size_q: 512,
            teacher_refresh: 100,
            eval_every: 500,
            patience: 10,
            critic_steps: 1,
            entropy_updates_head: false,
            propensity_tau: 1.0,
            implicit: false,
            neg_ratio: 4,
            variant: Variant::Mf,
            k: 16,
            dropout_rate: 0.2,
            critic_hidden: 16,
            eval_k: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let positive = [
            ("max_steps", self.max_steps),
            ("batch_size_d", self.batch_size_d),
            ("batch_size_q", self.batch_size_q),
            ("teacher_refresh", self.teacher_refresh),
            ("eval_every", self.eval_every),
            ("patience", self.patience),
            ("critic_steps", self.critic_steps),
            ("k", self.k),
            ("critic_hidden", self.critic_hidden),
            ("eval_k", self.eval_k),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        for (name, v) in [("lr", Some(self.lr)), ("critic_lr", self.critic_lr)] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
                }
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn model_config(&self, n_users: usize, n_items: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            n_users,
            n_items,
            k: self.k,
            dropout_rate: self.dropout_rate,
            critic_hidden: self.critic_hidden,
        }
    }

    fn uses_uniform_pairs(&self) -> bool {
        self.objective == Objective::Ast
            && (self.weights.alpha > 0.0 || self.weights.beta > 0.0 || self.weights.gamma > 0.0)
    }
}

/// One row per evaluation; losses are averaged over the steps since the previous row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub loss_d: f64,
    pub loss_a: f64,
    pub loss_s: f64,
    pub loss_e: f64,
    pub loss_total: f64,
    /// NaN when there is no usable validation data.
    pub val_ndcg5: f64,
}

pub const HISTORY_HEADER: &str = "step,loss_D,loss_A,loss_S,loss_E,loss_total,val_ndcg5";

impl HistoryRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.loss_d, self.loss_a, self.loss_s, self.loss_e, self.loss_total, self.val_ndcg5
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxSteps,
    EarlyStop,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Parameters at the evaluation with the highest validation metric.
    pub best_model: Model,
    pub best_step: usize,
    pub best_val_ndcg: f64,
    pub final_model: Model,
    pub steps_run: usize,
    pub history: Vec<HistoryRow>,
    pub stop_reason: StopReason,
}

/// Per-tensor optimizer state; the critic may use its own learning rate.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    base: AdamConfig,
    critic_lr: f64,
    states: Vec<AdamState>,
}

impl Optimizer {
    pub fn new(model: &Model, kind: OptimizerKind, lr: f64, critic_lr: f64, weight_decay: f64) -> Self {
        Optimizer {
            kind,
            base: AdamConfig {
                lr,
                weight_decay,
                ..AdamConfig::default()
            },
            critic_lr,
            states: model
                .params
                .tensors()
                .iter()
                .map(|(_, _, t)| AdamState::zeros(t.len()))
                .collect(),
        }
    }

    /// One descent step on every tensor whose block is in `blocks` (all when `None`).
    pub fn step(&mut self, model: &mut Model, grads: &Gradients, blocks: Option<&[Block]>) -> Result<()> {
        let grad_tensors = grads.tensors();
        let (kind, base, critic_lr) = (self.kind, self.base, self.critic_lr);
        let states = &mut self.states;
        model.update_params(|params| {
            for (((block, t), (_, _, g)), state) in params
                .tensors_mut()
                .into_iter()
                .zip(grad_tensors)
                .zip(states.iter_mut())
            {
                if blocks.is_some_and(|bs| !bs.contains(&block)) {
                    continue;
                }
                let lr = if block == Block::Theta { critic_lr } else { base.lr };
                match kind {
                    OptimizerKind::Adam => adam_step(&mut t.data, &g.data, state, &AdamConfig { lr, ..base })?,
                    OptimizerKind::Sgd => sgd_step(&mut t.data, &g.data, lr, base.weight_decay)?,
                }
            }
            Ok(())
        })
    }
}

fn sample<T: Copy>(pool: &[T], n: usize, rng: &mut Rng) -> Vec<T> {
    (0..n).map(|_| pool[rng.below(pool.len())]).collect()
}

fn uniform_pairs(n_users: usize, n_items: usize, n: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
    (0..n).map(|_| (rng.below(n_users), rng.below(n_items))).collect()
}

fn check_finite(step: usize, c: &Components, total: f64) -> Result<()> {
    for (component, value) in [
        ("loss_D", c.d),
        ("loss_A", c.a),
        ("loss_S", c.s),
        ("loss_E", c.e),
        ("loss_total", total),
    ] {
        if !value.is_finite() {
            return Err(Error::Divergence { step, component, value });
        }
    }
    Ok(())
}

/// Named generator streams derived from the run seed.
mod stream {
    pub const INIT: u64 = 1;
    pub const BATCH_D: u64 = 2;
    pub const BATCH_Q: u64 = 3;
    pub const DROPOUT_D: u64 = 4;
    pub const DROPOUT_Q: u64 = 5;
    pub const NEGATIVES: u64 = 6;
}

/// Training pool for the current epoch, with implicit negatives when configured.
struct Pool {
    base: Vec<Interaction>,
    current: Vec<Interaction>,
    sampler: Option<NegativeSampler>,
    neg_ratio: usize,
    steps_per_epoch: usize,
    rng: Rng,
}

impl Pool {
    fn new(base: Vec<Interaction>, config: &TrainConfig, n_items: usize) -> Self {
        let sampler = (config.implicit && config.neg_ratio > 0).then(|| NegativeSampler::new(n_items, &base));
        let mut pool = Pool {
            current: base.clone(),
            base,
            sampler,
            neg_ratio: config.neg_ratio,
            steps_per_epoch: 1,
            rng: Rng::new(config.seed, stream::NEGATIVES),
        };
        pool.refresh(config.batch_size_d);
        pool
    }

    fn refresh(&mut self, batch_size: usize) {
        if let Some(sampler) = &self.sampler {
            self.current = self.base.clone();
            for x in self.base.iter().filter(|x| x.label == 1) {
                for _ in 0..self.neg_ratio {
                    if let Some(neg) = sampler.sample(x.user, &mut self.rng) {
                        self.current.push(Interaction {
                            source: x.source,
                            ..neg
                        });
                    }
                }
            }
        }
        self.steps_per_epoch = self.current.len().div_ceil(batch_size).max(1);
    }
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainResult> {
    train_with(dataset, config, None)
}

/// Like [`train`], with externally supplied propensities for the IPS objective.
pub fn train_with(
    dataset: &Dataset,
    config: &TrainConfig,
    propensities: Option<&dyn Propensity>,
) -> Result<TrainResult> {
    config.validate()?;
    dataset.validate()?;
    if dataset.biased_train.is_empty() {
        return Err(Error::Validation("biased_train split is empty".into()));
    }
    let (nu, ni) = (dataset.n_users, dataset.n_items);
    let seed = config.seed;
    let mut model = Model::init(config.model_config(nu, ni), seed, &mut Rng::new(seed, stream::INIT))?;
    let mut opt = Optimizer::new(
        &model,
        config.optimizer,
        config.lr,
        config.critic_lr.unwrap_or(config.lr),
        config.weight_decay,
    );

    let logged = if config.implicit {
        drop_negatives(&dataset.biased_train)
    } else {
        dataset.biased_train.clone()
    };
    if logged.is_empty() {
        return Err(Error::Validation("no logged interactions left for training".into()));
    }
    let pool_base: Vec<Interaction> = match config.objective {
        Objective::MultiTask => logged,
        _ => logged
            .into_iter()
            .chain(dataset.uniform_train.iter().copied())
            .collect(),
    };
    let mut pool = Pool::new(pool_base, config, ni);
    if config.objective == Objective::MultiTask && config.weights.rho < 1.0 && dataset.uniform_train.is_empty() {
        return Err(Error::Config(
            "multi-task objective with rho < 1 needs a non-empty uniform_train split".into(),
        ));
    }
    let estimated;
    let propensities: &dyn Propensity = match propensities {
        Some(p) => p,
        None => {
            estimated = estimate_propensity(
                &dataset.biased_train,
                nu,
                ni,
                config.propensity_tau,
                config.weights.ips_clip,
            );
            &estimated
        }
    };

    let mut rng_batch_d = Rng::new(seed, stream::BATCH_D);
    let mut rng_batch_q = Rng::new(seed, stream::BATCH_Q);
    let mut rng_drop_d = Rng::new(seed, stream::DROPOUT_D);
    let mut rng_drop_q = Rng::new(seed, stream::DROPOUT_Q);
    let use_q = config.uses_uniform_pairs();
    let options = TotalOptions {
        entropy_updates_head: config.entropy_updates_head,
    };

    let validation_usable = dataset.validation.iter().any(|x| x.label == 1);
    let validate = |m: &Model| -> Result<f64> {
        if validation_usable {
            Ok(evaluate(m, &dataset.validation, config.eval_k, HrMode::Recall)?.ndcg_at_k)
        } else {
            Ok(f64::NAN)
        }
    };

    let mut teacher: Option<Model> = None;
    let mut history = Vec::new();
    let mut acc = Components::default();
    let mut acc_total = 0.0;
    let mut acc_n = 0usize;
    let mut best: Option<(Model, usize, f64)> = None;
    let mut bad_evals = 0;
    let mut stop_reason = StopReason::MaxSteps;
    let mut steps_run = 0;

    for step in 1..=config.max_steps {
        if step > 1 && (step - 1) % pool.steps_per_epoch == 0 && pool.sampler.is_some() {
            pool.refresh(config.batch_size_d);
        }
        let batch_d = sample(&pool.current, config.batch_size_d, &mut rng_batch_d);
        let (components, total, grads) = match config.objective {
            Objective::Biased => {
                let l = loss_biased_erm(&model, &batch_d, &mut rng_drop_d)?;
                let g = l.gradients(
                    &model,
                    crate::models::Freeze {
                        theta: true,
                        ..Default::default()
                    },
                )?;
                (
                    Components {
                        d: l.value,
                        ..Default::default()
                    },
                    l.value,
                    g,
                )
            }
            Objective::Ips => {
                let l = loss_ips(&model, &batch_d, propensities, &mut rng_drop_d)?;
                let g = l.gradients(
                    &model,
                    crate::models::Freeze {
                        theta: true,
                        ..Default::default()
                    },
                )?;
                (
                    Components {
                        d: l.value,
                        ..Default::default()
                    },
                    l.value,
                    g,
                )
            }
            Objective::MultiTask => {
                let batch_q = if dataset.uniform_train.is_empty() {
                    Vec::new()
                } else {
                    sample(&dataset.uniform_train, config.batch_size_q, &mut rng_batch_q)
                };
                let l = loss_multitask(
                    &model,
                    &batch_d,
                    &batch_q,
                    &config.weights,
                    &mut rng_drop_d,
                    &mut rng_drop_q,
                )?;
                let c = Components {
                    d: l.logged,
                    a: l.alignment,
                    ..Default::default()
                };
                (c, l.value, l.grads)
            }
            Objective::Ast => {
                let batch_q = if use_q {
                    uniform_pairs(nu, ni, config.batch_size_q, &mut rng_batch_q)
                } else {
                    Vec::new()
                };
                if config.weights.beta > 0.0 && (step - 1) % config.teacher_refresh == 0 {
                    teacher = Some(model.clone());
                }
                if config.weights.alpha > 0.0 && config.critic_steps > 1 {
                    extra_critic_steps(&mut model, &mut opt, &batch_d, &batch_q, config)?;
                }
                let l = loss_total(
                    &model,
                    teacher.as_ref(),
                    &batch_d,
                    &batch_q,
                    &config.weights,
                    options,
                    &mut rng_drop_d,
                    &mut rng_drop_q,
                )?;
                (l.components, l.total, l.grads)
            }
        };
        check_finite(step, &components, total)?;
        opt.step(&mut model, &grads, None)?;
        if !model.params.is_finite() {
            return Err(Error::Divergence {
                step,
                component: "parameters",
                value: f64::NAN,
            });
        }
        steps_run = step;

        acc.d += components.d;
        acc.a += components.a;
        acc.s += components.s;
        acc.e += components.e;
        acc_total += total;
        acc_n += 1;

        if step % config.eval_every == 0 || step == config.max_steps {
            let val = validate(&model)?;
            let n = acc_n as f64;
            history.push(HistoryRow {
                step,
                loss_d: acc.d / n,
                loss_a: acc.a / n,
                loss_s: acc.s / n,
                loss_e: acc.e / n,
                loss_total: acc_total / n,
                val_ndcg5: val,
            });
            acc = Components::default();
            acc_total = 0.0;
            acc_n = 0;
            let improved = match &best {
                None => true,
                Some((_, _, b)) => val > *b,
            };
            if improved {
                best = Some((model.clone(), step, val));
                bad_evals = 0;
            } else if val.is_finite() {
                bad_evals += 1;
                if bad_evals >= config.patience {
                    stop_reason = StopReason::EarlyStop;
                    break;
                }
            }
        }
    }

    let (best_model, best_step, best_val_ndcg) = match best {
        // Without usable validation data the last model is kept.
        Some((_, _, v)) if v.is_nan() => (model.clone(), steps_run, v),
        Some(b) => b,
        None => (model.clone(), steps_run, f64::NAN),
    };
    Ok(TrainResult {
        best_model,
        best_step,
        best_val_ndcg,
        final_model: model,
        steps_run,
        history,
        stop_reason,
    })
}

/// Critic-only ascent steps on Eval-mode latents of the current batches.
fn extra_critic_steps(
    model: &mut Model,
    opt: &mut Optimizer,
    batch_d: &[Interaction],
    batch_q: &[(usize, usize)],
    config: &TrainConfig,
) -> Result<()> {
    let zp: Vec<Vec<f64>> = batch_d
        .iter()
        .filter(|x| x.source == crate::data::Source::Logged)
        .map(|x| model.embed(x.user, x.item))
        .collect();
    if zp.is_empty() || batch_q.is_empty() {
        return Ok(());
    }
    let zq: Vec<Vec<f64>> = batch_q.iter().map(|&(u, i)| model.embed(u, i)).collect();
    let rp: Vec<&[f64]> = zp.iter().map(Vec::as_slice).collect();
    let rq: Vec<&[f64]> = zq.iter().map(Vec::as_slice).collect();
    for _ in 1..config.critic_steps {
        let adv = adversarial(&model.params.critic, &rp, &rq, true)?;
        let mut grads = model.zero_grads();
        grads.critic = adv.critic_grads.expect("requested");
        for t in grads.critic.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= -config.weights.alpha);
        }
        opt.step(model, &grads, Some(&[Block::Theta]))?;
    }
    Ok(())
}

/// A loss component that can be switched off in an ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    A,
    S,
    E,
}

impl Component {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Some(Component::A),
            "S" => Some(Component::S),
            "E" => Some(Component::E),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Component::A => "w/o A",
            Component::S => "w/o S",
            Component::E => "w/o E",
        }
    }

    /// `config` with this component's weight zeroed.
    pub fn ablate(self, config: &TrainConfig) -> TrainConfig {
        let mut c = config.clone();
        match self {
            Component::A => c.weights.alpha = 0.0,
            Component::S => c.weights.beta = 0.0,
            Component::E => c.weights.gamma = 0.0,
        }
        c
    }
}

/// Full AST run followed by one run per removed component.
pub fn ablate(dataset: &Dataset, config: &TrainConfig, components: &[Component]) -> Result<Vec<(String, TrainResult)>> {
    let mut base = config.clone();
    base.objective = Objective::Ast;
    let mut out = vec![("full".to_string(), train(dataset, &base)?)];
    for &c in components {
        out.push((c.label().to_string(), train(dataset, &c.ablate(&base))?));
    }
    Ok(out)
}
