//! Training objectives: log loss, biased ERM, IPS, multi-task with uniform
//! data, and the four adversarial self-training components.
//!
//! Model-level losses run Train-mode forwards and return their value together
//! with descent-direction gradients. Critic gradients from the adversarial
//! term are negated before they are returned so that one optimizer step
//! performs ascent on the critic and descent on everything else.

use serde::{Deserialize, Serialize};

use crate::data::{Interaction, Source};
use crate::error::{Error, Result};
use crate::models::{Critic, ForwardTrace, Freeze, Gradients, Mode, Model};
use crate::numcore::{sigmoid, sigmoid_unclamped, softplus, Rng};

/// Upper clamp on critic scores inside `exp`.
pub const EXP_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Adversarial term.
    pub alpha: f64,
    /// Self-training term.
    pub beta: f64,
    /// Entropy term.
    pub gamma: f64,
    /// Multi-task mixing; 1 means logged data only.
    pub rho: f64,
    /// Propensity floor for IPS.
    pub ips_clip: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.6,
            beta: 0.4,
            gamma: 0.4,
            rho: 0.5,
            ips_clip: 0.05,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            ..LossWeights::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(self.ips_clip > 0.0 && self.ips_clip <= 1.0) {
            return Err(Error::Config(format!(
                "ips_clip must lie in (0, 1], got {}",
                self.ips_clip
            )));
        }
        Ok(())
    }
}

/// `-x log s - (1 - x) log(1 - s)` with `s` the clamped sigmoid of `logit`.
pub fn log_loss(label: f64, logit: f64) -> f64 {
    let s = sigmoid(logit);
    -label * s.ln() - (1.0 - label) * (1.0 - s).ln()
}

/// `d log_loss / d logit`.
pub fn log_loss_grad(label: f64, logit: f64) -> f64 {
    sigmoid_unclamped(logit) - label
}

/// Binary entropy of `sigmoid(logit)` in nats.
///
/// Written as `p softplus(-y) + (1 - p) softplus(y)`, which stays accurate
/// when the prediction saturates.
pub fn binary_entropy(logit: f64) -> f64 {
    let p = sigmoid_unclamped(logit);
    p * softplus(-logit) + (1.0 - p) * softplus(logit)
}

/// `d H(sigmoid(y)) / dy = -y p (1 - p)`.
pub fn binary_entropy_grad(logit: f64) -> f64 {
    let p = sigmoid_unclamped(logit);
    -logit * p * (1.0 - p)
}

/// A batch loss with the Train-mode traces it was computed from.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub value: f64,
    /// `d value / d logit_j`.
    pub partials: Vec<f64>,
    pub traces: Vec<ForwardTrace>,
}

impl BatchLoss {
    pub fn gradients(&self, model: &Model, freeze: Freeze) -> Result<Gradients> {
        model.backward_batch(&self.traces, &self.partials, freeze)
    }
}

fn forward_all<I>(model: &Model, pairs: I, rng: &mut Rng) -> Vec<ForwardTrace>
where
    I: IntoIterator<Item = (usize, usize)>,
{
    pairs
        .into_iter()
        .map(|(u, i)| model.forward(u, i, Mode::Train, rng))
        .collect()
}

fn weighted_log_loss(traces: Vec<ForwardTrace>, labels: &[f64], weights: Option<&[f64]>) -> BatchLoss {
    let n = traces.len() as f64;
    let mut value = 0.0;
    let mut partials = Vec::with_capacity(traces.len());
    for (j, (t, &y)) in traces.iter().zip(labels).enumerate() {
        let w = weights.map_or(1.0, |w| w[j]);
        value += w * log_loss(y, t.logit);
        partials.push(w * log_loss_grad(y, t.logit) / n);
    }
    BatchLoss {
        value: value / n,
        partials,
        traces,
    }
}

fn labels_of(batch: &[Interaction]) -> Vec<f64> {
    batch.iter().map(|x| f64::from(x.label)).collect()
}

fn require_nonempty<T>(batch: &[T], what: &str) -> Result<()> {
    if batch.is_empty() {
        Err(Error::Contract(format!("{what} batch is empty")))
    } else {
        Ok(())
    }
}

/// Mean log loss over the batch.
pub fn loss_biased_erm(model: &Model, batch: &[Interaction], rng: &mut Rng) -> Result<BatchLoss> {
    require_nonempty(batch, "training")?;
    let traces = forward_all(model, batch.iter().map(Interaction::pair), rng);
    Ok(weighted_log_loss(traces, &labels_of(batch), None))
}

/// Exposure probabilities used to re-weight logged feedback.
pub trait Propensity {
    fn propensity(&self, user: usize, item: usize) -> f64;
}

/// Per-item popularity estimate `clip((count_i / n_users)^tau, floor, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityTable {
    pub values: Vec<f64>,
    pub tau: f64,
    pub floor: f64,
}

impl Propensity for PropensityTable {
    fn propensity(&self, _user: usize, item: usize) -> f64 {
        self.values[item]
    }
}

/// Exact per-pair propensities, e.g. from a synthetic world.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPropensities {
    pub n_items: usize,
    pub values: Vec<f64>,
}

impl PairPropensities {
    pub fn from_fn(n_users: usize, n_items: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n_users * n_items);
        for u in 0..n_users {
            for i in 0..n_items {
                values.push(f(u, i));
            }
        }
        PairPropensities { n_items, values }
    }
}

impl Propensity for PairPropensities {
    fn propensity(&self, user: usize, item: usize) -> f64 {
        self.values[user * self.n_items + item]
    }
}

pub fn estimate_propensity(
    biased_train: &[Interaction],
    n_users: usize,
    n_items: usize,
    tau: f64,
    floor: f64,
) -> PropensityTable {
    let mut counts = vec![0usize; n_items];
    for x in biased_train {
        counts[x.item] += 1;
    }
    let denom = n_users.max(1) as f64;
    let values = counts
        .iter()
        .map(|&c| (c as f64 / denom).powf(tau).clamp(floor, 1.0))
        .collect();
    PropensityTable { values, tau, floor }
}

/// Inverse-propensity weighted mean log loss.
///
/// Records from uniform exposure are already unbiased and keep weight 1.
pub fn loss_ips(
    model: &Model,
    batch: &[Interaction],
    propensities: &dyn Propensity,
    rng: &mut Rng,
) -> Result<BatchLoss> {
    require_nonempty(batch, "training")?;
    let mut weights = Vec::with_capacity(batch.len());
    for x in batch {
        let w = match x.source {
            Source::Uniform => 1.0,
            Source::Logged => {
                let p = propensities.propensity(x.user, x.item);
                if !(p > 0.0 && p.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "propensity {p} for pair ({}, {}) is not positive",
                        x.user, x.item
                    )));
                }
                1.0 / p
            }
        };
        weights.push(w);
    }
    let traces = forward_all(model, batch.iter().map(Interaction::pair), rng);
    Ok(weighted_log_loss(traces, &labels_of(batch), Some(&weights)))
}

/// `sigmoid` of the teacher's Eval-mode logit.
pub fn pseudo_label(teacher: &Model, user: usize, item: usize) -> f64 {
    sigmoid_unclamped(teacher.score(user, item))
}

/// Mean log loss of the student against soft pseudo-labels.
pub fn loss_self_train(
    model: &Model,
    batch_q: &[(usize, usize)],
    pseudo_labels: &[f64],
    rng: &mut Rng,
) -> Result<BatchLoss> {
    if batch_q.len() != pseudo_labels.len() {
        return Err(Error::Contract(format!(
            "{} pairs but {} pseudo-labels",
            batch_q.len(),
            pseudo_labels.len()
        )));
    }
    require_nonempty(batch_q, "uniform")?;
    let traces = forward_all(model, batch_q.iter().copied(), rng);
    Ok(weighted_log_loss(traces, pseudo_labels, None))
}

fn entropy_of(traces: Vec<ForwardTrace>) -> BatchLoss {
    let n = traces.len() as f64;
    let value = traces.iter().map(|t| binary_entropy(t.logit)).sum::<f64>() / n;
    let partials = traces.iter().map(|t| binary_entropy_grad(t.logit) / n).collect();
    BatchLoss {
        value,
        partials,
        traces,
    }
}

/// Mean binary entropy of the predictions on uniform pairs.
pub fn loss_entropy(model: &Model, batch_q: &[(usize, usize)], rng: &mut Rng) -> Result<BatchLoss> {
    require_nonempty(batch_q, "uniform")?;
    Ok(entropy_of(forward_all(model, batch_q.iter().copied(), rng)))
}

/// Dual KL estimate and its gradients, all in the ascent direction.
#[derive(Debug, Clone)]
pub struct AdversarialEval {
    /// `mean_P[theta(z)] - mean_Q[exp(theta(z))] + 1`.
    pub value: f64,
    /// `d value / d theta`, present when requested.
    pub critic_grads: Option<Critic>,
    /// `d value / d z` for each P sample.
    pub dz_p: Vec<Vec<f64>>,
    /// `d value / d z` for each Q sample.
    pub dz_q: Vec<Vec<f64>>,
}

/// Evaluate the dual KL estimator on two latent samples.
pub fn adversarial(critic: &Critic, z_p: &[&[f64]], z_q: &[&[f64]], critic_grads: bool) -> Result<AdversarialEval> {
    if z_p.is_empty() || z_q.is_empty() {
        return Err(Error::Contract("adversarial term needs both batches non-empty".into()));
    }
    let (np, nq) = (z_p.len() as f64, z_q.len() as f64);
    let mut grads = critic_grads.then(|| Critic::zeros(critic.input_dim(), critic.hidden()));
    let mut value = 1.0;
    let mut dz_p = Vec::with_capacity(z_p.len());
    for z in z_p {
        let t = critic.forward(z);
        if !t.score.is_finite() {
            return Err(Error::Numerical(format!("critic score {} on P sample", t.score)));
        }
        value += t.score / np;
        dz_p.push(critic.backward(z, &t, 1.0 / np, grads.as_mut()));
    }
    let mut dz_q = Vec::with_capacity(z_q.len());
    for z in z_q {
        let t = critic.forward(z);
        if !t.score.is_finite() {
            return Err(Error::Numerical(format!("critic score {} on Q sample", t.score)));
        }
        let clamped = t.score > EXP_CLAMP;
        let e = t.score.min(EXP_CLAMP).exp();
        value -= e / nq;
        let d = if clamped { 0.0 } else { -e / nq };
        dz_q.push(critic.backward(z, &t, d, grads.as_mut()));
    }
    Ok(AdversarialEval {
        value,
        critic_grads: grads,
        dz_p,
        dz_q,
    })
}

/// Gradient ascent on the critic alone against two fixed samples.
///
/// Each step draws `batch_size` points from each side (with replacement).
pub fn fit_critic(
    critic: &mut Critic,
    z_p: &[&[f64]],
    z_q: &[&[f64]],
    steps: usize,
    batch_size: usize,
    adam: &crate::numcore::AdamConfig,
    rng: &mut Rng,
) -> Result<()> {
    let mut states: Vec<_> = critic
        .tensors()
        .iter()
        .map(|(_, t)| crate::numcore::AdamState::zeros(t.len()))
        .collect();
    for _ in 0..steps {
        let bp: Vec<&[f64]> = (0..batch_size).map(|_| z_p[rng.below(z_p.len())]).collect();
        let bq: Vec<&[f64]> = (0..batch_size).map(|_| z_q[rng.below(z_q.len())]).collect();
        let eval = adversarial(critic, &bp, &bq, true)?;
        let mut g = eval.critic_grads.expect("requested");
        for ((gt, param), state) in g
            .tensors_mut()
            .into_iter()
            .zip(critic.tensors_mut())
            .zip(states.iter_mut())
        {
            gt.data.iter_mut().for_each(|x| *x = -*x);
            crate::numcore::adam_step(&mut param.data, &gt.data, state, adam)?;
        }
    }
    Ok(())
}

/// Component values of the combined objective (unweighted).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Components {
    pub d: f64,
    pub a: f64,
    pub s: f64,
    pub e: f64,
}

#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub components: Components,
    /// `d + alpha a + beta s + gamma e`.
    pub total: f64,
    /// Descent-direction gradients; the critic block holds the negated ascent gradient.
    pub grads: Gradients,
}

/// Options of the combined objective beyond the weights.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TotalOptions {
    /// Let the entropy term update the prediction head too.
    pub entropy_updates_head: bool,
}

/// `L_D + alpha L_A + beta L_S + gamma L_E` with per-block routing.
///
/// `batch_d` is drawn from the union of logged and uniform training data;
/// its logged records provide the P side of the adversarial term. `batch_q`
/// holds uniform pairs. Components with zero weight are not evaluated and
/// report 0. Dropout on the two batches uses separate generators.
#[allow(clippy::too_many_arguments)]
pub fn loss_total(
    model: &Model,
    teacher: Option<&Model>,
    batch_d: &[Interaction],
    batch_q: &[(usize, usize)],
    weights: &LossWeights,
    options: TotalOptions,
    rng_d: &mut Rng,
    rng_q: &mut Rng,
) -> Result<TotalLoss> {
    require_nonempty(batch_d, "training")?;
    let use_a = weights.alpha > 0.0;
    let use_s = weights.beta > 0.0;
    let use_e = weights.gamma > 0.0;
    if (use_a || use_s || use_e) && batch_q.is_empty() {
        return Err(Error::Config(
            "adversarial, self-training and entropy terms need uniform pairs".into(),
        ));
    }

    let d_loss = loss_biased_erm(model, batch_d, rng_d)?;
    let mut components = Components {
        d: d_loss.value,
        ..Components::default()
    };
    let mut grads = model.zero_grads();

    let q_traces = if use_a || use_s || use_e {
        forward_all(model, batch_q.iter().copied(), rng_q)
    } else {
        Vec::new()
    };

    // Extra d/dz for the feature map from the adversarial term.
    let mut dz_d: Vec<Option<Vec<f64>>> = vec![None; batch_d.len()];
    let mut dz_q: Vec<Option<Vec<f64>>> = vec![None; q_traces.len()];
    let logged: Vec<usize> = (0..batch_d.len())
        .filter(|&j| batch_d[j].source == Source::Logged)
        .collect();
    if use_a && !logged.is_empty() {
        let zp: Vec<&[f64]> = logged.iter().map(|&j| d_loss.traces[j].z.as_slice()).collect();
        let zq: Vec<&[f64]> = q_traces.iter().map(|t| t.z.as_slice()).collect();
        let adv = adversarial(&model.params.critic, &zp, &zq, true)?;
        components.a = adv.value;
        let mut cg = adv.critic_grads.expect("requested");
        for t in cg.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= -weights.alpha);
        }
        grads.critic = cg;
        let a = weights.alpha;
        for (&j, dz) in logged.iter().zip(adv.dz_p) {
            dz_d[j] = Some(dz.into_iter().map(|x| a * x).collect());
        }
        for (slot, dz) in dz_q.iter_mut().zip(adv.dz_q) {
            *slot = Some(dz.into_iter().map(|x| a * x).collect());
        }
    }

    for (j, t) in d_loss.traces.iter().enumerate() {
        model.backward(
            t,
            d_loss.partials[j],
            dz_d[j].as_deref(),
            Freeze {
                theta: true,
                ..Freeze::NONE
            },
            &mut grads,
        )?;
    }

    if !q_traces.is_empty() {
        let n = q_traces.len() as f64;
        let mut phi_partials = vec![0.0; q_traces.len()];
        let mut head_partials = vec![0.0; q_traces.len()];
        if use_s {
            let teacher =
                teacher.ok_or_else(|| Error::Contract("self-training term requires a teacher snapshot".into()))?;
            let mut value = 0.0;
            for (j, t) in q_traces.iter().enumerate() {
                let y = pseudo_label(teacher, t.user, t.item);
                value += log_loss(y, t.logit);
                phi_partials[j] += weights.beta * log_loss_grad(y, t.logit) / n;
            }
            components.s = value / n;
        }
        if use_e {
            let mut value = 0.0;
            for (j, t) in q_traces.iter().enumerate() {
                value += binary_entropy(t.logit);
                let g = weights.gamma * binary_entropy_grad(t.logit) / n;
                phi_partials[j] += g;
                if options.entropy_updates_head {
                    head_partials[j] += g;
                }
            }
            components.e = value / n;
        }
        for (j, t) in q_traces.iter().enumerate() {
            model.backward(t, phi_partials[j], dz_q[j].as_deref(), Freeze::PHI_ONLY, &mut grads)?;
            if options.entropy_updates_head {
                model.backward(
                    t,
                    head_partials[j],
                    None,
                    Freeze {
                        psi: false,
                        ..Freeze::ALL
                    },
                    &mut grads,
                )?;
            }
        }
    }

    let total =
        components.d + weights.alpha * components.a + weights.beta * components.s + weights.gamma * components.e;
    Ok(TotalLoss {
        components,
        total,
        grads,
    })
}

#[derive(Debug, Clone)]
pub struct MultiTaskLoss {
    pub value: f64,
    pub logged: f64,
    pub uniform: f64,
    /// Squared distance between the batch-mean latents.
    pub alignment: f64,
    pub grads: Gradients,
}

/// `rho L_P + (1 - rho) L_Q + alpha ||mean z_P - mean z_Q||^2`.
pub fn loss_multitask(
    model: &Model,
    batch_p: &[Interaction],
    batch_q_labeled: &[Interaction],
    weights: &LossWeights,
    rng_p: &mut Rng,
    rng_q: &mut Rng,
) -> Result<MultiTaskLoss> {
    require_nonempty(batch_p, "training")?;
    let rho = weights.rho;
    let need_q = rho < 1.0 || weights.alpha > 0.0;
    if need_q && batch_q_labeled.is_empty() {
        return Err(Error::Config(
            "multi-task objective with rho < 1 or alpha > 0 needs labeled uniform data".into(),
        ));
    }
    let p = loss_biased_erm(model, batch_p, rng_p)?;
    let q = if need_q {
        Some(loss_biased_erm(model, batch_q_labeled, rng_q)?)
    } else {
        None
    };
    let mut grads = model.zero_grads();
    let k = model.k();

    let mut dz_p: Vec<Option<Vec<f64>>> = vec![None; p.traces.len()];
    let mut dz_q: Vec<Option<Vec<f64>>> = vec![None; q.as_ref().map_or(0, |q| q.traces.len())];
    let mut alignment = 0.0;
    if let (Some(q), true) = (&q, weights.alpha > 0.0) {
        let mean = |ts: &[ForwardTrace]| {
            let mut m = vec![0.0; k];
            for t in ts {
                for (a, b) in m.iter_mut().zip(&t.z) {
                    *a += b;
                }
            }
            m.iter_mut().for_each(|a| *a /= ts.len() as f64);
            m
        };
        let diff: Vec<f64> = mean(&p.traces)
            .iter()
            .zip(mean(&q.traces))
            .map(|(a, b)| a - b)
            .collect();
        alignment = diff.iter().map(|d| d * d).sum();
        let gp: Vec<f64> = diff
            .iter()
            .map(|d| 2.0 * weights.alpha * d / p.traces.len() as f64)
            .collect();
        let gq: Vec<f64> = diff
            .iter()
            .map(|d| -2.0 * weights.alpha * d / q.traces.len() as f64)
            .collect();
        dz_p.iter_mut().for_each(|s| *s = Some(gp.clone()));
        dz_q.iter_mut().for_each(|s| *s = Some(gq.clone()));
    }

    let freeze = Freeze {
        theta: true,
        ..Freeze::NONE
    };
    for (j, t) in p.traces.iter().enumerate() {
        model.backward(t, rho * p.partials[j], dz_p[j].as_deref(), freeze, &mut grads)?;
    }
    let mut uniform = 0.0;
    if let Some(q) = &q {
        uniform = q.value;
        for (j, t) in q.traces.iter().enumerate() {
            model.backward(t, (1.0 - rho) * q.partials[j], dz_q[j].as_deref(), freeze, &mut grads)?;
        }
    }
    let value = rho * p.value + (1.0 - rho) * uniform + weights.alpha * alignment;
    Ok(MultiTaskLoss {
        value,
        logged: p.value,
        uniform,
        alignment,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelConfig, Variant};

    #[test]
    fn log_loss_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((log_loss(1.0, 0.0) - ln2).abs() < 1e-12);
        assert!((log_loss(0.5, 0.0) - ln2).abs() < 1e-12);
        assert!((log_loss(1.0, 3f64.ln()) - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!(log_loss(1.0, -1e4).is_finite());
        assert!(log_loss(0.0, 1e4).is_finite());
    }

    #[test]
    fn entropy_examples() {
        assert!((binary_entropy(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        let p: f64 = 0.75;
        let h = -p * p.ln() - (1.0 - p) * (1.0 - p).ln();
        assert!((binary_entropy(3f64.ln()) - h).abs() < 1e-12);
        assert!((h - 0.5623).abs() < 1e-4);
        for y in [30.5, -30.5, 45.0, -200.0] {
            assert!(binary_entropy(y) < 1e-6, "{y}");
        }
    }

    #[test]
    fn propensity_examples() {
        let everyone: Vec<_> = (0..200).map(|u| Interaction::new(u, 0, 1, Source::Logged)).collect();
        let t = estimate_propensity(&everyone, 200, 2, 1.0, 0.05);
        assert_eq!(t.values[0], 1.0);
        assert_eq!(t.values[1], 0.05);
        let ten: Vec<_> = (0..10).map(|u| Interaction::new(u, 0, 1, Source::Logged)).collect();
        let t = estimate_propensity(&ten, 200, 1, 0.5, 0.05);
        assert!((t.values[0] - 0.05f64.sqrt()).abs() < 1e-12);
        assert!((t.values[0] - 0.2236).abs() < 1e-4);
    }

    fn tiny_model(variant: Variant, dropout: f64) -> Model {
        let cfg = ModelConfig {
            variant,
            n_users: 6,
            n_items: 5,
            k: 3,
            dropout_rate: dropout,
            critic_hidden: 4,
        };
        let mut rng = Rng::new(11, 0);
        let mut m = Model::init(cfg, 11, &mut rng).unwrap();
        let mut flat = m.params.flatten(None);
        flat.iter_mut().for_each(|x| *x = 0.7 * rng.gaussian());
        m.params.unflatten(None, &flat);
        m
    }

    #[test]
    fn all_zero_logits_give_ln2() {
        let mut m = tiny_model(Variant::Mf, 0.0);
        m.params.head_weight.data.iter_mut().for_each(|x| *x = 0.0);
        m.params.head_bias.data[0] = 0.0;
        let batch = vec![
            Interaction::new(0, 1, 1, Source::Logged),
            Interaction::new(2, 3, 0, Source::Logged),
        ];
        let l = loss_biased_erm(&m, &batch, &mut Rng::new(0, 0)).unwrap();
        assert!((l.value - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(loss_biased_erm(&m, &[], &mut Rng::new(0, 0)).is_err());
    }

    #[test]
    fn unit_propensities_reduce_to_biased() {
        let m = tiny_model(Variant::Ncf, 0.3);
        let batch: Vec<_> = (0..6)
            .map(|u| Interaction::new(u, (u * 2) % 5, (u % 2) as u8, Source::Logged))
            .collect();
        let ones = PairPropensities::from_fn(6, 5, |_, _| 1.0);
        let a = loss_biased_erm(&m, &batch, &mut Rng::new(3, 0)).unwrap();
        let b = loss_ips(&m, &batch, &ones, &mut Rng::new(3, 0)).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.partials, b.partials);
    }

    #[test]
    fn ips_single_example_weight_four() {
        let m = tiny_model(Variant::Mf, 0.0);
        let batch = [Interaction::new(1, 2, 1, Source::Logged)];
        let quarter = PairPropensities::from_fn(6, 5, |_, _| 0.25);
        let a = loss_biased_erm(&m, &batch, &mut Rng::new(0, 0)).unwrap();
        let b = loss_ips(&m, &batch, &quarter, &mut Rng::new(0, 0)).unwrap();
        assert!((b.value - 4.0 * a.value).abs() < 1e-12);
    }

    #[test]
    fn zero_critic_gives_zero_estimate() {
        let c = Critic::zeros(2, 3);
        let p = [[0.1, 0.2], [1.0, -1.0]];
        let q = [[3.0, 0.0]];
        let zp: Vec<&[f64]> = p.iter().map(|z| z.as_slice()).collect();
        let zq: Vec<&[f64]> = q.iter().map(|z| z.as_slice()).collect();
        let a = adversarial(&c, &zp, &zq, false).unwrap();
        assert_eq!(a.value, 0.0);
        assert!(adversarial(&c, &zp, &[], false).is_err());
    }

    #[test]
    fn pseudo_labels_from_teacher_logit() {
        let mut m = tiny_model(Variant::Mf, 0.0);
        m.params.head_weight.data.iter_mut().for_each(|x| *x = 0.0);
        m.params.head_bias.data[0] = 0.0;
        assert_eq!(pseudo_label(&m, 0, 0), 0.5);
        m.params.head_bias.data[0] = 3f64.ln();
        assert!((pseudo_label(&m, 0, 0) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn self_training_fixed_point() {
        let m = tiny_model(Variant::Ncf, 0.0);
        let pairs = [(0, 0), (1, 3), (5, 4)];
        let pseudo: Vec<f64> = pairs.iter().map(|&(u, i)| pseudo_label(&m, u, i)).collect();
        let l = loss_self_train(&m, &pairs, &pseudo, &mut Rng::new(0, 0)).unwrap();
        assert!(l.partials.iter().all(|&d| d.abs() < 1e-15));
        assert!(loss_self_train(&m, &pairs, &pseudo[..2], &mut Rng::new(0, 0)).is_err());
    }
}
