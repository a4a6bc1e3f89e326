//! Ranking metrics on uniformly exposed test data and shift diagnostics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Interaction};
use crate::error::{Error, Result};
use crate::losses::adversarial;
use crate::models::Model;
use crate::numcore::{sigmoid_unclamped, Rng};
use crate::synth::SynthWorld;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HrMode {
    /// Relevant items in the top K over the user's relevant total.
    #[default]
    Recall,
    /// 1 if any relevant item is in the top K.
    AnyHit,
}

impl HrMode {
    pub fn as_str(self) -> &'static str {
        match self {
            HrMode::Recall => "recall",
            HrMode::AnyHit => "any_hit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "recall" => Some(HrMode::Recall),
            "any_hit" | "anyhit" => Some(HrMode::AnyHit),
            _ => None,
        }
    }
}

/// Sort `items` by descending score, ties by ascending item id.
pub fn rank_by_scores(items: &[usize], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<(usize, f64)> = items.iter().copied().zip(scores.iter().copied()).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.into_iter().map(|(i, _)| i).collect()
}

/// Candidates ordered by Eval-mode logit.
pub fn rank_items(model: &Model, user: usize, candidates: &[usize]) -> Vec<usize> {
    let scores: Vec<f64> = candidates.iter().map(|&i| model.score(user, i)).collect();
    rank_by_scores(candidates, &scores)
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::Config("K must be positive".into()))
    } else {
        Ok(())
    }
}

/// Binary-relevance NDCG with `log2(j + 1)` discounts.
pub fn ndcg_at_k(ranked_relevance: &[bool], k: usize) -> Result<f64> {
    check_k(k)?;
    let cut = k.min(ranked_relevance.len());
    let dcg: f64 = ranked_relevance[..cut]
        .iter()
        .enumerate()
        .filter(|(_, &r)| r)
        .map(|(j, _)| 1.0 / ((j + 2) as f64).log2())
        .sum();
    let n_rel = ranked_relevance.iter().filter(|&&r| r).count();
    let idcg: f64 = (0..n_rel.min(k)).map(|j| 1.0 / ((j + 2) as f64).log2()).sum();
    Ok(if idcg > 0.0 { dcg / idcg } else { 0.0 })
}

pub fn hr_at_k(ranked_relevance: &[bool], n_relevant_total: usize, k: usize, mode: HrMode) -> Result<f64> {
    check_k(k)?;
    if n_relevant_total == 0 {
        return Err(Error::Contract("hit ratio is undefined without relevant items".into()));
    }
    let hits = ranked_relevance.iter().take(k).filter(|&&r| r).count();
    Ok(match mode {
        HrMode::Recall => hits as f64 / n_relevant_total as f64,
        HrMode::AnyHit => f64::from(u8::from(hits > 0)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub a_distance: f64,
    pub cond_shift: f64,
    pub kl_estimate: f64,
    /// Uniform-pair branch of the labeling-function distance.
    pub labeling_distance: Option<f64>,
    /// Exposure-weighted branch.
    pub labeling_distance_exposed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub hr_mode: HrMode,
    /// Hit ratio in `hr_mode`.
    pub hr_at_k: f64,
    pub hr_recall: f64,
    pub hr_any_hit: f64,
    pub ndcg_at_k: f64,
    pub n_users_evaluated: usize,
    /// Users in the test data without any positive item.
    pub n_users_skipped: usize,
    pub diagnostics: Option<Diagnostics>,
}

/// Per-user metric values, in ascending user order.
#[derive(Debug, Clone, PartialEq)]
pub struct UserMetrics {
    pub user: usize,
    pub ndcg: f64,
    pub hr_recall: f64,
    pub hr_any_hit: f64,
}

/// Per-user ranking metrics under an arbitrary scoring function.
pub fn per_user_metrics<F>(score: F, test: &[Interaction], k: usize) -> Result<(Vec<UserMetrics>, usize)>
where
    F: Fn(usize, usize) -> f64,
{
    check_k(k)?;
    if test.is_empty() {
        return Err(Error::Validation("test split is empty".into()));
    }
    let mut by_user: BTreeMap<usize, Vec<(usize, bool)>> = BTreeMap::new();
    for x in test {
        by_user.entry(x.user).or_default().push((x.item, x.label == 1));
    }
    let mut out = Vec::with_capacity(by_user.len());
    let mut skipped = 0;
    for (user, items) in by_user {
        let n_rel = items.iter().filter(|(_, r)| *r).count();
        if n_rel == 0 {
            skipped += 1;
            continue;
        }
        let ids: Vec<usize> = items.iter().map(|(i, _)| *i).collect();
        let scores: Vec<f64> = ids.iter().map(|&i| score(user, i)).collect();
        let relevant: BTreeMap<usize, bool> = items.iter().copied().collect();
        let ranked: Vec<bool> = rank_by_scores(&ids, &scores).iter().map(|i| relevant[i]).collect();
        out.push(UserMetrics {
            user,
            ndcg: ndcg_at_k(&ranked, k)?,
            hr_recall: hr_at_k(&ranked, n_rel, k, HrMode::Recall)?,
            hr_any_hit: hr_at_k(&ranked, n_rel, k, HrMode::AnyHit)?,
        });
    }
    Ok((out, skipped))
}

pub fn evaluate_with<F>(score: F, test: &[Interaction], k: usize, mode: HrMode) -> Result<MetricsReport>
where
    F: Fn(usize, usize) -> f64,
{
    let (users, skipped) = per_user_metrics(score, test, k)?;
    let n = users.len();
    let mean = |f: fn(&UserMetrics) -> f64| {
        if n == 0 {
            0.0
        } else {
            users.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let hr_recall = mean(|m| m.hr_recall);
    let hr_any_hit = mean(|m| m.hr_any_hit);
    Ok(MetricsReport {
        k,
        hr_mode: mode,
        hr_at_k: match mode {
            HrMode::Recall => hr_recall,
            HrMode::AnyHit => hr_any_hit,
        },
        hr_recall,
        hr_any_hit,
        ndcg_at_k: mean(|m| m.ndcg),
        n_users_evaluated: n,
        n_users_skipped: skipped,
        diagnostics: None,
    })
}

/// Per-user ranking of each user's own test items by Eval-mode logit.
pub fn evaluate(model: &Model, test: &[Interaction], k: usize, mode: HrMode) -> Result<MetricsReport> {
    evaluate_with(|u, i| model.score(u, i), test, k, mode)
}

const A_DISTANCE_MIN_SIDE: usize = 20;
const A_DISTANCE_STEPS: usize = 200;
const A_DISTANCE_LR: f64 = 0.1;

/// Proxy A-distance `2 (1 - 2 err)` from a linear domain classifier.
///
/// Even-indexed samples of each side fit the classifier, odd-indexed ones
/// measure the error. Features are standardized with the pooled statistics of
/// the fit halves, and both loss and error weight the two sides equally, so
/// swapping the arguments gives the same value.
pub fn a_distance(z_p: &[Vec<f64>], z_q: &[Vec<f64>]) -> Result<f64> {
    if z_p.len() < A_DISTANCE_MIN_SIDE || z_q.len() < A_DISTANCE_MIN_SIDE {
        return Err(Error::Diagnostic(format!(
            "a_distance needs at least {A_DISTANCE_MIN_SIDE} samples per side, got {} and {}",
            z_p.len(),
            z_q.len()
        )));
    }
    let dim = z_p[0].len();
    if z_p.iter().chain(z_q).any(|z| z.len() != dim) {
        return Err(Error::Diagnostic("latent samples differ in dimension".into()));
    }
    let halves =
        |zs: &[Vec<f64>], parity: usize| -> Vec<Vec<f64>> { zs.iter().skip(parity).step_by(2).cloned().collect() };
    let (fit_p, hold_p) = (halves(z_p, 0), halves(z_p, 1));
    let (fit_q, hold_q) = (halves(z_q, 0), halves(z_q, 1));

    let pooled = fit_p.len() + fit_q.len();
    let mut mean = vec![0.0; dim];
    for z in fit_p.iter().chain(&fit_q) {
        for (m, x) in mean.iter_mut().zip(z) {
            *m += x / pooled as f64;
        }
    }
    let mut sd = vec![0.0; dim];
    for z in fit_p.iter().chain(&fit_q) {
        for ((s, x), m) in sd.iter_mut().zip(z).zip(&mean) {
            *s += (x - m) * (x - m) / pooled as f64;
        }
    }
    sd.iter_mut().for_each(|s| *s = if *s > 1e-24 { s.sqrt() } else { 1.0 });
    let standardize = |zs: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        zs.into_iter()
            .map(|z| z.iter().zip(&mean).zip(&sd).map(|((x, m), s)| (x - m) / s).collect())
            .collect()
    };
    let (fit_p, hold_p, fit_q, hold_q) = (
        standardize(fit_p),
        standardize(hold_p),
        standardize(fit_q),
        standardize(hold_q),
    );

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let logit = |w: &[f64], b: f64, z: &[f64]| b + w.iter().zip(z).map(|(a, c)| a * c).sum::<f64>();
    for _ in 0..A_DISTANCE_STEPS {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (set, label) in [(&fit_p, 1.0), (&fit_q, 0.0)] {
            let scale = 0.5 / set.len() as f64;
            for z in set.iter() {
                let d = (sigmoid_unclamped(logit(&w, b, z)) - label) * scale;
                gb += d;
                for (g, x) in gw.iter_mut().zip(z) {
                    *g += d * x;
                }
            }
        }
        b -= A_DISTANCE_LR * gb;
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= A_DISTANCE_LR * g;
        }
    }
    let err_p = hold_p.iter().filter(|z| logit(&w, b, z) <= 0.0).count() as f64 / hold_p.len() as f64;
    let err_q = hold_q.iter().filter(|z| logit(&w, b, z) > 0.0).count() as f64 / hold_q.len() as f64;
    let err = 0.5 * (err_p + err_q);
    Ok((2.0 * (1.0 - 2.0 * err)).clamp(0.0, 2.0))
}

/// Label-conditioned squared mean discrepancy weighted by pooled class frequency.
pub fn cond_shift(z_p: &[Vec<f64>], labels_p: &[u8], z_q: &[Vec<f64>], labels_q: &[u8]) -> f64 {
    let total = (labels_p.len() + labels_q.len()) as f64;
    if total == 0.0 {
        return 0.0;
    }
    let class_mean = |zs: &[Vec<f64>], ys: &[u8], c: u8| -> Option<Vec<f64>> {
        let members: Vec<&Vec<f64>> = zs.iter().zip(ys).filter(|(_, &y)| y == c).map(|(z, _)| z).collect();
        let first = members.first()?;
        let mut m = vec![0.0; first.len()];
        for z in &members {
            for (a, b) in m.iter_mut().zip(z.iter()) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|a| *a /= members.len() as f64);
        Some(m)
    };
    let mut out = 0.0;
    for c in [0u8, 1] {
        let (Some(mp), Some(mq)) = (class_mean(z_p, labels_p, c), class_mean(z_q, labels_q, c)) else {
            continue;
        };
        let count = labels_p.iter().chain(labels_q).filter(|&&y| y == c).count() as f64;
        let dist: f64 = mp.iter().zip(&mq).map(|(a, b)| (a - b) * (a - b)).sum();
        out += count / total * dist;
    }
    out
}

/// Current value of the critic's dual KL estimate on Eval-mode latents.
pub fn kl_estimate(model: &Model, pairs_p: &[(usize, usize)], pairs_q: &[(usize, usize)]) -> Result<f64> {
    let zp: Vec<Vec<f64>> = pairs_p.iter().map(|&(u, i)| model.embed(u, i)).collect();
    let zq: Vec<Vec<f64>> = pairs_q.iter().map(|&(u, i)| model.embed(u, i)).collect();
    let rp: Vec<&[f64]> = zp.iter().map(Vec::as_slice).collect();
    let rq: Vec<&[f64]> = zq.iter().map(Vec::as_slice).collect();
    Ok(adversarial(&model.params.critic, &rp, &rq, false)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelingDistance {
    /// `E_Q |g - k|` over uniform pairs.
    pub uniform: f64,
    /// `E_P |g - k|`, pairs weighted by their exposure probability.
    pub exposed: f64,
}

impl LabelingDistance {
    pub fn min(&self) -> f64 {
        self.uniform.min(self.exposed)
    }
}

/// Distance between the true and the logged labeling functions.
pub fn labeling_distance(
    world: Option<&SynthWorld>,
    pair_sample: usize,
    mc_draws: usize,
    rng: &mut Rng,
) -> Result<LabelingDistance> {
    let world = world
        .ok_or_else(|| Error::Unsupported("labeling distance needs a synthetic world with oracle labels".into()))?;
    if pair_sample == 0 || mc_draws == 0 {
        return Err(Error::Config("pair_sample and mc_draws must be positive".into()));
    }
    let (nu, ni) = (world.config.n_users, world.config.n_items);
    let mut uniform = 0.0;
    let mut weighted = 0.0;
    let mut weight = 0.0;
    for _ in 0..pair_sample {
        let (u, i) = (rng.below(nu), rng.below(ni));
        let o = world.oracle_pair(u, i, mc_draws, rng);
        let gap = (o.g - o.k).abs();
        let p = world.exposure_marginal(u, i);
        uniform += gap;
        weighted += p * gap;
        weight += p;
    }
    Ok(LabelingDistance {
        uniform: uniform / pair_sample as f64,
        exposed: if weight > 0.0 { weighted / weight } else { 0.0 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticOptions {
    /// Latent samples per side for a_distance, cond_shift and the KL estimate.
    pub samples: usize,
    /// Uniform pairs for the labeling-function distance.
    pub labeling_pairs: usize,
    pub mc_draws: usize,
    pub seed: u64,
}

impl Default for DiagnosticOptions {
    fn default() -> Self {
        DiagnosticOptions {
            samples: 2000,
            labeling_pairs: 1000,
            mc_draws: 2000,
            seed: 0,
        }
    }
}

const DIAG_STREAM_P: u64 = 50;
const DIAG_STREAM_Q: u64 = 51;
const DIAG_STREAM_LABELING: u64 = 52;

/// All shift diagnostics for one model.
///
/// The P side samples logged training records, the Q side samples the
/// uniformly exposed test records (both with replacement, labels kept for
/// the conditional term). The labeling distance needs the generating world.
pub fn diagnose(
    model: &Model,
    dataset: &Dataset,
    world: Option<&SynthWorld>,
    options: &DiagnosticOptions,
) -> Result<Diagnostics> {
    if dataset.biased_train.is_empty() || dataset.test.is_empty() {
        return Err(Error::Diagnostic(
            "diagnostics need logged and uniform test records".into(),
        ));
    }
    let draw = |pool: &[Interaction], stream: u64| -> Vec<Interaction> {
        let mut rng = Rng::new(options.seed, stream);
        (0..options.samples).map(|_| pool[rng.below(pool.len())]).collect()
    };
    let p = draw(&dataset.biased_train, DIAG_STREAM_P);
    let q = draw(&dataset.test, DIAG_STREAM_Q);
    let zp: Vec<Vec<f64>> = p.iter().map(|x| model.embed(x.user, x.item)).collect();
    let zq: Vec<Vec<f64>> = q.iter().map(|x| model.embed(x.user, x.item)).collect();
    let yp: Vec<u8> = p.iter().map(|x| x.label).collect();
    let yq: Vec<u8> = q.iter().map(|x| x.label).collect();
    let pairs_p: Vec<(usize, usize)> = p.iter().map(Interaction::pair).collect();
    let pairs_q: Vec<(usize, usize)> = q.iter().map(Interaction::pair).collect();
    let labeling = match world {
        Some(w) => Some(labeling_distance(
            Some(w),
            options.labeling_pairs,
            options.mc_draws,
            &mut Rng::new(options.seed, DIAG_STREAM_LABELING),
        )?),
        None => None,
    };
    Ok(Diagnostics {
        a_distance: a_distance(&zp, &zq)?,
        cond_shift: cond_shift(&zp, &yp, &zq, &yq),
        kl_estimate: kl_estimate(model, &pairs_p, &pairs_q)?,
        labeling_distance: labeling.map(|l| l.uniform),
        labeling_distance_exposed: labeling.map(|l| l.exposed),
    })
}
