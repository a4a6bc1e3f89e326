//! Semi-synthetic MNAR worlds with known ground truth.
//!
//! Preference and exposure follow
//!
//! ```text
//! p(Y = 1 | O) = sigmoid(u . v + eps_R)
//! p(O)         = min(1, exp(log sigmoid(u' . v' + pop_i + offset) + eps_O))
//! eps_R = lambda * c + sqrt(1 - lambda^2) * sigma_R * n_R
//! eps_O = lambda * c + sqrt(1 - lambda^2) * sigma_O * n_O
//! ```
//!
//! where `c`, `n_R`, `n_O` are independent standard normals drawn fresh for
//! every sampling event. The shared `c` is an unobserved confounder: with
//! `lambda > 0` exposed pairs carry upward-shifted preferences, so the
//! labeling function seen on logged data (`k`) departs from the true one (`g`).

use serde::{Deserialize, Serialize};

use crate::data::{dedup_pairs, split_uniform, Dataset, Interaction, Source, SplitFractions};
use crate::error::{Error, Result};
use crate::numcore::{sigmoid_unclamped, softplus, Rng};

const CALIBRATION_STEPS: usize = 64;
const CALIBRATION_MAX_PAIRS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Latent dimension of the ground-truth factors.
    pub k: usize,
    pub factor_scale: f64,
    /// Preference noise scale (sigma_R).
    pub pref_noise: f64,
    /// Exposure noise scale (sigma_O).
    pub exposure_noise: f64,
    /// Confounding coupling lambda in [0, 1].
    pub confounding: f64,
    /// Correlation rho in [0, 1] between each exposure factor and the matching
    /// preference factor; 0 gives independent exposure and preference.
    pub exposure_alignment: f64,
    pub target_density: f64,
    /// Number of uniformly exposed pairs to draw (before de-duplication).
    pub uniform_test_pairs: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 500,
            n_items: 300,
            k: 3,
            factor_scale: 2.0,
            pref_noise: 1.0,
            exposure_noise: 1.0,
            confounding: 0.6,
            exposure_alignment: 0.0,
            target_density: 0.05,
            uniform_test_pairs: 50_000,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 || self.k == 0 {
            return Err(Error::Config("synth sizes must be positive".into()));
        }
        if !(self.target_density > 0.0 && self.target_density < 1.0) {
            return Err(Error::Config(format!(
                "target_density must lie in (0, 1), got {}",
                self.target_density
            )));
        }
        if !(0.0..=1.0).contains(&self.confounding) {
            return Err(Error::Config(format!(
                "confounding must lie in [0, 1], got {}",
                self.confounding
            )));
        }
        if !(0.0..=1.0).contains(&self.exposure_alignment) {
            return Err(Error::Config(format!(
                "exposure_alignment must lie in [0, 1], got {}",
                self.exposure_alignment
            )));
        }
        if !(self.factor_scale >= 0.0 && self.pref_noise >= 0.0 && self.exposure_noise >= 0.0) {
            return Err(Error::Config("synth scales must be nonnegative".into()));
        }
        Ok(())
    }

    fn idiosyncratic(&self) -> f64 {
        (1.0 - self.confounding * self.confounding).max(0.0).sqrt()
    }

    /// Total standard deviation of eps_R.
    pub fn pref_noise_sd(&self) -> f64 {
        let l = self.confounding;
        (l * l + (1.0 - l * l) * self.pref_noise * self.pref_noise).sqrt()
    }

    /// Total standard deviation of eps_O.
    pub fn exposure_noise_sd(&self) -> f64 {
        let l = self.confounding;
        (l * l + (1.0 - l * l) * self.exposure_noise * self.exposure_noise).sqrt()
    }
}

/// Ground-truth factors and the calibrated exposure offset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    pub user_factors: Vec<f64>,
    pub item_factors: Vec<f64>,
    pub exposure_user_factors: Vec<f64>,
    pub exposure_item_factors: Vec<f64>,
    pub item_popularity_bias: Vec<f64>,
    pub exposure_offset: f64,
    pub config: SynthConfig,
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `E[min(a * exp(s * n), 1)]` for `n ~ N(0, 1)` and `a > 0`.
fn expected_clamped_lognormal(a: f64, s: f64) -> f64 {
    if s == 0.0 {
        return a.min(1.0);
    }
    let cut = -a.ln() / s;
    let below = (a.ln() + 0.5 * s * s).exp() * normal_cdf(cut - s);
    let above = 0.5 * libm::erfc(cut / std::f64::consts::SQRT_2);
    (below + above).min(1.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SynthWorld {
    /// Draw factors and calibrate the exposure offset to `target_density`.
    pub fn build(config: SynthConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let sd = config.factor_scale / (config.k as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| sd * rng.gaussian()).collect::<Vec<_>>();
        let user_factors = draw(config.n_users * config.k);
        let item_factors = draw(config.n_items * config.k);
        let rho = config.exposure_alignment;
        let rest = (1.0 - rho * rho).sqrt();
        let align = |own: Vec<f64>, pref: &[f64]| -> Vec<f64> {
            if rho == 0.0 {
                return own;
            }
            own.iter().zip(pref).map(|(o, p)| rho * p + rest * o).collect()
        };
        let exposure_user_factors = align(draw(config.n_users * config.k), &user_factors);
        let exposure_item_factors = align(draw(config.n_items * config.k), &item_factors);
        let item_popularity_bias = (0..config.n_items).map(|_| rng.gaussian()).collect();
        let mut world = SynthWorld {
            user_factors,
            item_factors,
            exposure_user_factors,
            exposure_item_factors,
            item_popularity_bias,
            exposure_offset: 0.0,
            config,
        };
        world.exposure_offset = world.calibrate_offset(rng)?;
        Ok(world)
    }

    fn calibrate_offset(&self, rng: &mut Rng) -> Result<f64> {
        let cfg = &self.config;
        let n_pairs = cfg.n_users * cfg.n_items;
        let logits: Vec<f64> = if n_pairs <= CALIBRATION_MAX_PAIRS {
            (0..cfg.n_users)
                .flat_map(|u| (0..cfg.n_items).map(move |i| (u, i)))
                .map(|(u, i)| self.exposure_logit_raw(u, i))
                .collect()
        } else {
            (0..CALIBRATION_MAX_PAIRS)
                .map(|_| {
                    let u = rng.below(cfg.n_users);
                    let i = rng.below(cfg.n_items);
                    self.exposure_logit_raw(u, i)
                })
                .collect()
        };
        let s = cfg.exposure_noise_sd();
        let density = |offset: f64| {
            logits
                .iter()
                .map(|&l| expected_clamped_lognormal(sigmoid_unclamped(l + offset), s))
                .sum::<f64>()
                / logits.len() as f64
        };
        let target = cfg.target_density;
        let (mut lo, mut hi) = (-60.0, 60.0);
        let mut mid = 0.0;
        let mut achieved = f64::NAN;
        for _ in 0..CALIBRATION_STEPS {
            mid = 0.5 * (lo + hi);
            achieved = density(mid);
            if (achieved - target).abs() <= 1e-6 * target {
                break;
            }
            if achieved < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if (achieved - target).abs() > 0.1 * target {
            return Err(Error::Calibration {
                steps: CALIBRATION_STEPS,
                achieved,
                target,
            });
        }
        Ok(mid)
    }

    fn k(&self) -> usize {
        self.config.k
    }

    /// Ground-truth preference score `u . v`.
    pub fn preference_score(&self, user: usize, item: usize) -> f64 {
        let k = self.k();
        dot(
            &self.user_factors[user * k..(user + 1) * k],
            &self.item_factors[item * k..(item + 1) * k],
        )
    }

    fn exposure_logit_raw(&self, user: usize, item: usize) -> f64 {
        let k = self.k();
        dot(
            &self.exposure_user_factors[user * k..(user + 1) * k],
            &self.exposure_item_factors[item * k..(item + 1) * k],
        ) + self.item_popularity_bias[item]
    }

    /// `u' . v' + pop_i + offset`.
    pub fn exposure_logit(&self, user: usize, item: usize) -> f64 {
        self.exposure_logit_raw(user, item) + self.exposure_offset
    }

    pub fn pref_noise(&self, confounder: f64, noise: f64) -> f64 {
        self.config.confounding * confounder + self.config.idiosyncratic() * self.config.pref_noise * noise
    }

    pub fn exposure_noise(&self, confounder: f64, noise: f64) -> f64 {
        self.config.confounding * confounder + self.config.idiosyncratic() * self.config.exposure_noise * noise
    }

    /// `sigmoid(u . v + eps_R)` for given confounder and idiosyncratic draws.
    pub fn preference_prob(&self, user: usize, item: usize, confounder: f64, noise: f64) -> f64 {
        sigmoid_unclamped(self.preference_score(user, item) + self.pref_noise(confounder, noise))
    }

    /// Exposure probability in `(0, 1]` for given confounder and idiosyncratic draws.
    pub fn exposure_prob(&self, user: usize, item: usize, confounder: f64, noise: f64) -> f64 {
        let log_p = -softplus(-self.exposure_logit(user, item)) + self.exposure_noise(confounder, noise);
        log_p.exp().clamp(f64::MIN_POSITIVE, 1.0)
    }

    /// Exact `p(O | u, i)` with the noise integrated out.
    pub fn exposure_marginal(&self, user: usize, item: usize) -> f64 {
        expected_clamped_lognormal(
            sigmoid_unclamped(self.exposure_logit(user, item)),
            self.config.exposure_noise_sd(),
        )
    }

    /// Logged feedback: every pair is offered once; only exposed pairs are emitted.
    pub fn sample_logged(&self, rng: &mut Rng) -> Vec<Interaction> {
        let cfg = &self.config;
        let mut out = Vec::with_capacity((cfg.target_density * (cfg.n_users * cfg.n_items) as f64 * 1.2) as usize);
        for user in 0..cfg.n_users {
            for item in 0..cfg.n_items {
                let c = rng.gaussian();
                let n_o = rng.gaussian();
                if !rng.bernoulli(self.exposure_prob(user, item, c, n_o)) {
                    continue;
                }
                let n_r = rng.gaussian();
                let label = u8::from(rng.bernoulli(self.preference_prob(user, item, c, n_r)));
                out.push(Interaction::new(user, item, label, Source::Logged));
            }
        }
        out
    }

    /// Uniformly exposed pairs drawn with replacement, labeled ignoring exposure.
    pub fn sample_uniform(&self, n_pairs: usize, rng: &mut Rng) -> Vec<Interaction> {
        (0..n_pairs)
            .map(|_| {
                let user = rng.below(self.config.n_users);
                let item = rng.below(self.config.n_items);
                let c = rng.gaussian();
                let n_r = rng.gaussian();
                let label = u8::from(rng.bernoulli(self.preference_prob(user, item, c, n_r)));
                Interaction::new(user, item, label, Source::Uniform)
            })
            .collect()
    }

    /// Monte-Carlo `g`, `k` and mean exposure for one pair from shared draws.
    pub fn oracle_pair(&self, user: usize, item: usize, mc_draws: usize, rng: &mut Rng) -> OracleValues {
        let mut g = 0.0;
        let mut weighted = 0.0;
        let mut weight = 0.0;
        for _ in 0..mc_draws {
            let c = rng.gaussian();
            let n_r = rng.gaussian();
            let n_o = rng.gaussian();
            let pref = self.preference_prob(user, item, c, n_r);
            let expo = self.exposure_prob(user, item, c, n_o);
            g += pref;
            weighted += pref * expo;
            weight += expo;
        }
        let n = mc_draws.max(1) as f64;
        OracleValues {
            g: g / n,
            k: if weight > 0.0 { weighted / weight } else { g / n },
            exposure: weight / n,
        }
    }

    /// `g(x) = p(R = 1 | x)` by Monte Carlo over fresh noise.
    pub fn oracle_g(&self, user: usize, item: usize, mc_draws: usize, rng: &mut Rng) -> f64 {
        self.oracle_pair(user, item, mc_draws, rng).g
    }

    /// `k(x) = p(R = 1 | O = 1, x)` by exposure-weighted Monte Carlo.
    pub fn oracle_k(&self, user: usize, item: usize, mc_draws: usize, rng: &mut Rng) -> f64 {
        self.oracle_pair(user, item, mc_draws, rng).k
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleValues {
    pub g: f64,
    pub k: f64,
    /// Monte-Carlo estimate of `p(O | x)`.
    pub exposure: f64,
}

/// Generator streams used by [`generate_dataset`], all derived from `config.seed`.
pub mod stream {
    pub const WORLD: u64 = 0;
    pub const LOGGED: u64 = 1;
    pub const UNIFORM: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const ORACLE: u64 = 4;
}

/// A world plus everything sampled from it.
#[derive(Debug, Clone)]
pub struct Generated {
    pub world: SynthWorld,
    /// Every logged interaction (identical to `dataset.biased_train`).
    pub logged: Vec<Interaction>,
    /// De-duplicated uniform pairs before splitting.
    pub uniform: Vec<Interaction>,
    pub dataset: Dataset,
}

/// Build the world, sample logged and uniform data, and split the uniform pairs.
pub fn generate_dataset(config: &SynthConfig, fractions: SplitFractions) -> Result<Generated> {
    let seed = config.seed;
    let world = SynthWorld::build(config.clone(), &mut Rng::new(seed, stream::WORLD))?;
    let logged = world.sample_logged(&mut Rng::new(seed, stream::LOGGED));
    let uniform = dedup_pairs(&world.sample_uniform(config.uniform_test_pairs, &mut Rng::new(seed, stream::UNIFORM)));
    let (uniform_train, validation, test) = split_uniform(&uniform, fractions, &mut Rng::new(seed, stream::SPLIT))?;
    let dataset = Dataset {
        n_users: config.n_users,
        n_items: config.n_items,
        biased_train: logged.clone(),
        uniform_train,
        validation,
        test,
    };
    dataset.validate()?;
    Ok(Generated {
        world,
        logged,
        uniform,
        dataset,
    })
}
