//! Independent oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use astrec::data::{Interaction, Source};
use astrec::losses::{
    loss_biased_erm, loss_ips, loss_multitask, loss_total, LossWeights, PairPropensities, TotalLoss, TotalOptions,
};
use astrec::models::{Block, Freeze, Model, ModelConfig, Params, Variant};
use astrec::numcore::Rng;

pub const FD_STEP: f64 = 1e-5;

/// `||a - b|| / max(||a||, ||b||)`, 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences, written out here rather than borrowed from the library.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            let orig = probe[j];
            probe[j] = orig + h;
            let up = f(&probe);
            probe[j] = orig - h;
            let down = f(&probe);
            probe[j] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn small_config(variant: Variant, dropout: f64) -> ModelConfig {
    ModelConfig {
        variant,
        n_users: 6,
        n_items: 5,
        k: 4,
        dropout_rate: dropout,
        critic_hidden: 3,
    }
}

/// Model with every parameter redrawn from N(0, scale^2).
pub fn random_model(config: ModelConfig, seed: u64, scale: f64) -> Model {
    let mut rng = Rng::new(seed, 77);
    let mut m = Model::init(config, seed, &mut rng).unwrap();
    m.update_params(|p| {
        let flat: Vec<f64> = p.flatten(None).iter().map(|_| scale * rng.gaussian()).collect();
        p.unflatten(None, &flat);
        Ok(())
    })
    .unwrap();
    m
}

pub fn with_params(model: &Model, block: Block, values: &[f64]) -> Model {
    let mut m = model.clone();
    m.update_params(|p| {
        p.unflatten(Some(block), values);
        Ok(())
    })
    .unwrap();
    m
}

pub fn random_batch(n: usize, n_users: usize, n_items: usize, source: Source, rng: &mut Rng) -> Vec<Interaction> {
    (0..n)
        .map(|_| {
            Interaction::new(
                rng.below(n_users),
                rng.below(n_items),
                u8::from(rng.uniform() < 0.5),
                source,
            )
        })
        .collect()
}

pub fn random_pairs(n: usize, n_users: usize, n_items: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
    (0..n).map(|_| (rng.below(n_users), rng.below(n_items))).collect()
}

pub const BLOCKS: [Block; 3] = [Block::Phi, Block::Psi, Block::Theta];

/// Worst relative error over blocks between `analytic` and central differences
/// of `target(block, model)`, perturbing one block at a time.
pub fn block_fd_error(model: &Model, analytic: &Params, target: impl Fn(Block, &Model) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for block in BLOCKS {
        let x = model.params.flatten(Some(block));
        let fd = central_diff(|v| target(block, &with_params(model, block, v)), &x, FD_STEP);
        worst = worst.max(rel_err(&analytic.flatten(Some(block)), &fd));
    }
    worst
}

fn total_with(
    model: &Model,
    teacher: &Model,
    batch_d: &[Interaction],
    batch_q: &[(usize, usize)],
    weights: &LossWeights,
    mask_seed: u64,
) -> TotalLoss {
    loss_total(
        model,
        Some(teacher),
        batch_d,
        batch_q,
        weights,
        TotalOptions::default(),
        &mut Rng::new(mask_seed, 1),
        &mut Rng::new(mask_seed, 2),
    )
    .unwrap()
}

fn minus(a: &Params, b: &Params) -> Params {
    let mut out = a.clone();
    out.add_scaled(b, -1.0);
    out
}

pub const LOSS_NAMES: [&str; 8] = ["biased", "ips", "multitask", "D", "A", "S", "E", "total"];

/// Worst relative gradient error of every loss on one random parameter draw.
///
/// Dropout is active; every evaluation replays the same masks from a fresh
/// generator. The combined objective routes gradients per block: the feature
/// map descends on the whole objective, the head on the supervised term and
/// the critic ascends the adversarial term.
pub fn gradient_errors(variant: Variant, draw: u64) -> Vec<(&'static str, f64)> {
    let config = small_config(variant, 0.3);
    let model = random_model(config, 1000 + draw, 0.5);
    let teacher = random_model(config, 5000 + draw, 0.5);
    let mut rng = Rng::new(draw, 9);
    let mut batch_d = random_batch(6, config.n_users, config.n_items, Source::Logged, &mut rng);
    batch_d.extend(random_batch(
        3,
        config.n_users,
        config.n_items,
        Source::Uniform,
        &mut rng,
    ));
    let labeled_q = random_batch(5, config.n_users, config.n_items, Source::Uniform, &mut rng);
    let batch_q = random_pairs(5, config.n_users, config.n_items, &mut rng);
    let props = PairPropensities::from_fn(config.n_users, config.n_items, |u, i| {
        0.1 + 0.9 * (((u * 7 + i * 3 + draw as usize) % 10) as f64 / 10.0)
    });
    let seed = 40 + draw;
    let mut out = Vec::new();

    let value = |m: &Model| loss_biased_erm(m, &batch_d, &mut Rng::new(seed, 1)).unwrap();
    let g = value(&model).gradients(&model, Freeze::NONE).unwrap();
    out.push(("biased", block_fd_error(&model, &g, |_, m| value(m).value)));

    let value = |m: &Model| loss_ips(m, &batch_d, &props, &mut Rng::new(seed, 1)).unwrap();
    let g = value(&model).gradients(&model, Freeze::NONE).unwrap();
    out.push(("ips", block_fd_error(&model, &g, |_, m| value(m).value)));

    let w = LossWeights::default();
    let value = |m: &Model| {
        loss_multitask(
            m,
            &batch_d,
            &labeled_q,
            &w,
            &mut Rng::new(seed, 1),
            &mut Rng::new(seed, 2),
        )
        .unwrap()
    };
    let g = value(&model).grads;
    out.push(("multitask", block_fd_error(&model, &g, |_, m| value(m).value)));

    let zero = LossWeights::zero();
    let total = |m: &Model, w: &LossWeights| total_with(m, &teacher, &batch_d, &batch_q, w, seed);
    let base = total(&model, &zero);
    out.push((
        "D",
        block_fd_error(&model, &base.grads, |b, m| match b {
            Block::Theta => 0.0,
            _ => total(m, &zero).components.d,
        }),
    ));

    let full = LossWeights::default();
    let only = |which: usize| {
        let mut w = zero;
        match which {
            0 => w.alpha = full.alpha,
            1 => w.beta = full.beta,
            _ => w.gamma = full.gamma,
        }
        w
    };
    for (which, name) in ["A", "S", "E"].into_iter().enumerate() {
        let w = only(which);
        let g = minus(&total(&model, &w).grads, &base.grads);
        let err = block_fd_error(&model, &g, |b, m| {
            let c = total(m, &w).components;
            let term = [c.a, c.s, c.e][which];
            let weight = [w.alpha, w.beta, w.gamma][which];
            match b {
                Block::Phi => weight * term,
                Block::Psi => 0.0,
                Block::Theta if which == 0 => -weight * term,
                Block::Theta => 0.0,
            }
        });
        out.push((name, err));
    }

    let g = total(&model, &full).grads;
    out.push((
        "total",
        block_fd_error(&model, &g, |b, m| {
            let t = total(m, &full);
            match b {
                Block::Phi => t.total,
                Block::Psi => t.components.d,
                Block::Theta => -full.alpha * t.components.a,
            }
        }),
    ));
    out
}

/// Reference ranking: descending score, ties by ascending item id, found by
/// scanning every permutation for the one that satisfies the order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn is_sorted_order(perm: &[usize], items: &[usize], scores: &[f64]) -> bool {
    perm.windows(2).all(|w| {
        let (a, b) = (w[0], w[1]);
        scores[a] > scores[b] || (scores[a] == scores[b] && items[a] < items[b])
    })
}

fn dcg(relevance_in_order: impl Iterator<Item = bool>, k: usize) -> f64 {
    relevance_in_order
        .take(k)
        .enumerate()
        .filter(|(_, r)| *r)
        .map(|(j, _)| 1.0 / ((j + 2) as f64).log2())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteMetrics {
    pub ndcg: f64,
    pub hr_recall: f64,
    pub hr_any_hit: f64,
}

/// Exhaustive metrics for one user's candidates.
pub fn brute_force_metrics(items: &[usize], scores: &[f64], relevant: &[bool], k: usize) -> BruteMetrics {
    let perms = permutations(items.len());
    let ranked = perms
        .iter()
        .find(|p| is_sorted_order(p, items, scores))
        .expect("some permutation is sorted");
    let got = dcg(ranked.iter().map(|&j| relevant[j]), k);
    let ideal = perms
        .iter()
        .map(|p| dcg(p.iter().map(|&j| relevant[j]), k))
        .fold(0.0, f64::max);
    let n_rel = relevant.iter().filter(|&&r| r).count();
    let hits = ranked.iter().take(k).filter(|&&j| relevant[j]).count();
    BruteMetrics {
        ndcg: if ideal > 0.0 { got / ideal } else { 0.0 },
        hr_recall: hits as f64 / n_rel as f64,
        hr_any_hit: if hits > 0 { 1.0 } else { 0.0 },
    }
}

/// `E[sigmoid(s + sd * n)]`, n ~ N(0, 1), by the trapezoid rule on [-12, 12].
pub fn gaussian_smoothed_sigmoid(s: f64, sd: f64) -> f64 {
    let steps = 4000;
    let h = 24.0 / steps as f64;
    let mut acc = 0.0;
    for j in 0..=steps {
        let x = -12.0 + j as f64 * h;
        let w = if j == 0 || j == steps { 0.5 } else { 1.0 };
        let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        acc += w * phi / (1.0 + (-(s + sd * x)).exp());
    }
    acc * h
}

/// One user's candidates with coarse scores (so ties occur) and at least one
/// relevant item, plus a cut-off in 1..=7.
pub struct MetricFixture {
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
    pub relevant: Vec<bool>,
    pub k: usize,
}

pub fn metric_fixture(rng: &mut Rng) -> MetricFixture {
    let n = 1 + rng.below(6);
    let mut pool: Vec<usize> = (0..20).collect();
    rng.shuffle(&mut pool);
    let items = pool[..n].to_vec();
    let scores = (0..n).map(|_| rng.below(4) as f64 * 0.5 - 0.5).collect();
    let mut relevant: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.4).collect();
    if !relevant.iter().any(|&r| r) {
        relevant[rng.below(n)] = true;
    }
    MetricFixture {
        items,
        scores,
        relevant,
        k: 1 + rng.below(7),
    }
}

/// Library metrics for a fixture, through the public per-user entry point.
pub fn library_metrics(f: &MetricFixture) -> BruteMetrics {
    let test: Vec<Interaction> = f
        .items
        .iter()
        .zip(&f.relevant)
        .map(|(&i, &r)| Interaction::new(0, i, u8::from(r), Source::Uniform))
        .collect();
    let score = |_: usize, item: usize| f.scores[f.items.iter().position(|&i| i == item).unwrap()];
    let (users, skipped) = astrec::eval::per_user_metrics(score, &test, f.k).unwrap();
    assert_eq!((users.len(), skipped), (1, 0));
    BruteMetrics {
        ndcg: users[0].ndcg,
        hr_recall: users[0].hr_recall,
        hr_any_hit: users[0].hr_any_hit,
    }
}

pub fn small_synth(seed: u64) -> astrec::synth::Generated {
    let config = astrec::synth::SynthConfig {
        n_users: 60,
        n_items: 40,
        target_density: 0.1,
        uniform_test_pairs: 800,
        seed,
        ..Default::default()
    };
    astrec::synth::generate_dataset(&config, astrec::data::SplitFractions::default()).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest deviation of IPS with unit propensities and of multi-task with
/// `rho = 1, alpha = 0` from biased ERM, over values and gradients.
pub fn reduction_gaps(variant: Variant, draw: u64) -> (f64, f64) {
    let config = small_config(variant, 0.3);
    let model = random_model(config, 300 + draw, 0.5);
    let mut rng = Rng::new(draw, 10);
    let batch = random_batch(12, config.n_users, config.n_items, Source::Logged, &mut rng);
    let labeled_q = random_batch(4, config.n_users, config.n_items, Source::Uniform, &mut rng);
    let unit = PairPropensities::from_fn(config.n_users, config.n_items, |_, _| 1.0);
    let base = loss_biased_erm(&model, &batch, &mut Rng::new(draw, 1)).unwrap();
    let base_g = base.gradients(&model, Freeze::NONE).unwrap().flatten(None);

    let ips = loss_ips(&model, &batch, &unit, &mut Rng::new(draw, 1)).unwrap();
    let ips_g = ips.gradients(&model, Freeze::NONE).unwrap().flatten(None);
    let ips_gap = (ips.value - base.value).abs().max(max_abs_diff(&ips_g, &base_g));

    let w = LossWeights {
        rho: 1.0,
        ..LossWeights::zero()
    };
    let mt = loss_multitask(
        &model,
        &batch,
        &labeled_q,
        &w,
        &mut Rng::new(draw, 1),
        &mut Rng::new(draw, 2),
    )
    .unwrap();
    let mt_gap = (mt.value - base.value)
        .abs()
        .max(max_abs_diff(&mt.grads.flatten(None), &base_g));
    (ips_gap, mt_gap)
}

/// Whether AST with all auxiliary weights at zero retraces Biased exactly.
pub fn zero_weight_ast_matches_biased(dataset: &astrec::data::Dataset, steps: usize, seed: u64) -> bool {
    use astrec::trainer::{train, Objective, TrainConfig};
    let base = TrainConfig {
        max_steps: steps,
        eval_every: steps.div_ceil(4).max(1),
        batch_size_d: 64,
        batch_size_q: 64,
        seed,
        ..TrainConfig::default()
    };
    let biased = train(
        dataset,
        &TrainConfig {
            objective: Objective::Biased,
            ..base.clone()
        },
    )
    .unwrap();
    let ast = train(
        dataset,
        &TrainConfig {
            objective: Objective::Ast,
            weights: LossWeights::zero(),
            ..base
        },
    )
    .unwrap();
    let same_history = biased.history.len() == ast.history.len()
        && biased.history.iter().zip(&ast.history).all(|(a, b)| {
            a.step == b.step
                && a.loss_d.to_bits() == b.loss_d.to_bits()
                && a.loss_total.to_bits() == b.loss_total.to_bits()
                && a.val_ndcg5.to_bits() == b.val_ndcg5.to_bits()
        });
    let bits = |m: &Model| m.params.flatten(None).iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    same_history
        && biased.best_step == ast.best_step
        && bits(&biased.final_model) == bits(&ast.final_model)
        && bits(&biased.best_model) == bits(&ast.best_model)
}

/// Critic-based KL estimate between N(0, 1) and N(`shift`, 1) from `n` samples
/// each; the dual objective is evaluated on all samples after fitting.
pub fn gaussian_kl_estimate(shift: f64, n: usize, steps: usize, batch: usize, lr: f64, seed: u64) -> f64 {
    use astrec::losses::{adversarial, fit_critic};
    use astrec::models::Critic;
    use astrec::numcore::AdamConfig;
    let mut rng = Rng::new(seed, 20);
    let p: Vec<[f64; 1]> = (0..n).map(|_| [rng.gaussian()]).collect();
    let q: Vec<[f64; 1]> = (0..n).map(|_| [shift + rng.gaussian()]).collect();
    let zp: Vec<&[f64]> = p.iter().map(|z| z.as_slice()).collect();
    let zq: Vec<&[f64]> = q.iter().map(|z| z.as_slice()).collect();
    let mut critic = Critic::init(1, 16, &mut Rng::new(seed, 21));
    let adam = AdamConfig {
        lr,
        ..AdamConfig::default()
    };
    fit_critic(&mut critic, &zp, &zq, steps, batch, &adam, &mut Rng::new(seed, 22)).unwrap();
    adversarial(&critic, &zp, &zq, false).unwrap().value
}
