//! Multi-armed bandit selection over a view's canonical descriptions.
//!
//! [`BanditState`] holds per-arm pull counts and empirical mean rewards.
//! Three selection rules read it:
//!
//! * [`ucb1_select`]: `argmax_a mean_a + c * sqrt(2 ln t / n_a)`, unpulled arms first.
//! * [`epsilon_greedy_select`]: uniform exploration with probability epsilon.
//! * [`thompson_select`]: argmax of one Beta posterior draw per arm.
//!
//! [`Selector`] bundles a state, a rule and a seeded RNG for callers that just
//! want `select` / `observe`.

mod policy;

pub use policy::{BanditConfig, Selector, StrategyKind};

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::{composite_score, ScoredCandidate};

pub const DEFAULT_EXPLORATION_WEIGHT: f64 = 0.5;
pub const DEFAULT_EMA_RATE: f64 = 0.1;
pub const DEFAULT_PRIOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BanditError {
    #[error("bandit has no arms")]
    NoArms,
    #[error("arm {arm} out of range for {arms} arms")]
    InvalidArm { arm: usize, arms: usize },
    #[error("reward is not finite: {0}")]
    NonFiniteReward(f64),
    #[error("invalid bandit parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
}

/// A reward clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct RewardSignal(f64);

impl RewardSignal {
    pub fn new(value: f64) -> Result<Self, BanditError> {
        if !value.is_finite() {
            return Err(BanditError::NonFiniteReward(value));
        }
        Ok(Self(value.clamp(0.0, 1.0)))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// How an observed reward folds into an arm's estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum UpdateRule {
    /// Exact running average.
    #[default]
    ExactMean,
    /// `mean += rate * (r - mean)` after the first observation.
    Ema { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    pulls: Vec<u64>,
    means: Vec<f64>,
    total_rounds: u64,
    exploration_weight: f64,
    update_rule: UpdateRule,
}

impl BanditState {
    pub fn new(arms: usize, exploration_weight: f64) -> Result<Self, BanditError> {
        if arms == 0 {
            return Err(BanditError::NoArms);
        }
        if !(exploration_weight.is_finite() && exploration_weight >= 0.0) {
            return Err(BanditError::InvalidParameter(format!(
                "exploration weight {exploration_weight}"
            )));
        }
        Ok(Self {
            pulls: vec![0; arms],
            means: vec![0.0; arms],
            total_rounds: 0,
            exploration_weight,
            update_rule: UpdateRule::ExactMean,
        })
    }

    pub fn with_update_rule(mut self, rule: UpdateRule) -> Result<Self, BanditError> {
        if let UpdateRule::Ema { rate } = rule {
            if !(rate > 0.0 && rate <= 1.0) {
                return Err(BanditError::InvalidParameter(format!("ema rate {rate}")));
            }
        }
        self.update_rule = rule;
        Ok(self)
    }

    /// Builds a state from explicit statistics; `total_rounds` is the sum of
    /// pulls.
    pub fn from_stats(pulls: Vec<u64>, means: Vec<f64>, exploration_weight: f64) -> Result<Self, BanditError> {
        if pulls.len() != means.len() {
            return Err(BanditError::InvalidParameter("pulls/means length mismatch".into()));
        }
        let mut s = Self::new(pulls.len(), exploration_weight)?;
        s.total_rounds = pulls.iter().sum();
        s.pulls = pulls;
        s.means = means;
        Ok(s)
    }

    pub fn arms(&self) -> usize {
        self.pulls.len()
    }

    pub fn pulls(&self) -> &[u64] {
        &self.pulls
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn total_rounds(&self) -> u64 {
        self.total_rounds
    }

    pub fn exploration_weight(&self) -> f64 {
        self.exploration_weight
    }

    /// Arm pulled most often; ties go to the higher mean, then lower index.
    pub fn most_pulled(&self) -> usize {
        let mut best = 0;
        for a in 1..self.arms() {
            let (n, nb) = (self.pulls[a], self.pulls[best]);
            if n > nb || (n == nb && self.means[a] > self.means[best]) {
                best = a;
            }
        }
        best
    }

    /// Index of the highest empirical mean, lowest index on ties.
    pub fn greedy_arm(&self) -> usize {
        argmax(&self.means)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// UCB1 index of one arm; `+inf` for an unpulled arm.
pub fn ucb1_index(state: &BanditState, arm: usize) -> f64 {
    let n = state.pulls[arm];
    if n == 0 {
        return f64::INFINITY;
    }
    let t = state.total_rounds.max(1) as f64;
    state.means[arm] + state.exploration_weight * (2.0 * t.ln() / n as f64).sqrt()
}

pub fn ucb1_select(state: &BanditState) -> Result<usize, BanditError> {
    if state.arms() == 0 {
        return Err(BanditError::NoArms);
    }
    if let Some(a) = state.pulls.iter().position(|&n| n == 0) {
        return Ok(a);
    }
    let idx: Vec<f64> = (0..state.arms()).map(|a| ucb1_index(state, a)).collect();
    Ok(argmax(&idx))
}

/// Folds `reward` into `arm` and advances the round counter.
pub fn update_mean(state: &mut BanditState, arm: usize, reward: RewardSignal) -> Result<(), BanditError> {
    if arm >= state.arms() {
        return Err(BanditError::InvalidArm {
            arm,
            arms: state.arms(),
        });
    }
    let r = reward.value();
    state.pulls[arm] += 1;
    let n = state.pulls[arm] as f64;
    let m = state.means[arm];
    state.means[arm] = match state.update_rule {
        UpdateRule::ExactMean => ((n - 1.0) * m + r) / n,
        UpdateRule::Ema { .. } if n == 1.0 => r,
        UpdateRule::Ema { rate } => m + rate * (r - m),
    };
    state.total_rounds += 1;
    Ok(())
}

pub fn epsilon_greedy_select<R: Rng + ?Sized>(
    state: &BanditState,
    epsilon: f64,
    rng: &mut R,
) -> Result<usize, BanditError> {
    if state.arms() == 0 {
        return Err(BanditError::NoArms);
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(BanditError::InvalidParameter(format!("epsilon {epsilon}")));
    }
    let explore: f64 = rng.random();
    if explore < epsilon {
        Ok(rng.random_range(0..state.arms()))
    } else {
        Ok(state.greedy_arm())
    }
}

/// Per-arm Beta posteriors over Bernoulli success probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaPosteriors {
    pub prior_alpha: f64,
    pub prior_beta: f64,
    pub successes: Vec<u64>,
    pub failures: Vec<u64>,
}

impl BetaPosteriors {
    pub fn new(arms: usize, prior_alpha: f64, prior_beta: f64) -> Result<Self, BanditError> {
        if arms == 0 {
            return Err(BanditError::NoArms);
        }
        if !(prior_alpha > 0.0 && prior_beta > 0.0) {
            return Err(BanditError::InvalidParameter(format!(
                "beta prior ({prior_alpha}, {prior_beta})"
            )));
        }
        Ok(Self {
            prior_alpha,
            prior_beta,
            successes: vec![0; arms],
            failures: vec![0; arms],
        })
    }

    pub fn arms(&self) -> usize {
        self.successes.len()
    }

    /// Records a reward in `[0, 1]` as one Bernoulli trial with that success
    /// probability.
    pub fn observe<R: Rng + ?Sized>(&mut self, arm: usize, reward: RewardSignal, rng: &mut R) -> Result<(), BanditError> {
        if arm >= self.arms() {
            return Err(BanditError::InvalidArm {
                arm,
                arms: self.arms(),
            });
        }
        let r = reward.value();
        let success = if r >= 1.0 {
            true
        } else if r <= 0.0 {
            false
        } else {
            rng.random::<f64>() < r
        };
        if success {
            self.successes[arm] += 1;
        } else {
            self.failures[arm] += 1;
        }
        Ok(())
    }

    pub fn params(&self, arm: usize) -> (f64, f64) {
        (
            self.successes[arm] as f64 + self.prior_alpha,
            self.failures[arm] as f64 + self.prior_beta,
        )
    }
}

pub fn thompson_select<R: Rng + ?Sized>(post: &BetaPosteriors, rng: &mut R) -> Result<usize, BanditError> {
    if post.arms() == 0 {
        return Err(BanditError::NoArms);
    }
    let mut draws = Vec::with_capacity(post.arms());
    for a in 0..post.arms() {
        let (alpha, beta) = post.params(a);
        let dist = Beta::new(alpha, beta)
            .map_err(|e| BanditError::InvalidParameter(format!("beta({alpha}, {beta}): {e}")))?;
        draws.push(dist.sample(rng));
    }
    Ok(argmax(&draws))
}

/// The bandit reward for a scored candidate: its composite score.
pub fn compute_reward(candidate: &ScoredCandidate, blend_ratio: f64) -> RewardSignal {
    let v = composite_score(candidate.normalized_confidence, candidate.relevance, blend_ratio)
        .unwrap_or(0.0);
    RewardSignal(v.clamp(0.0, 1.0))
}
