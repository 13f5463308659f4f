use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    epsilon_greedy_select, thompson_select, ucb1_select, update_mean, BanditError, BanditState,
    BetaPosteriors, RewardSignal, UpdateRule, DEFAULT_EXPLORATION_WEIGHT, DEFAULT_PRIOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Ucb1,
    EpsilonGreedy,
    Thompson,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Ucb1 => "ucb1",
            StrategyKind::EpsilonGreedy => "epsilon_greedy",
            StrategyKind::Thompson => "thompson",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = BanditError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "ucb1" => Ok(StrategyKind::Ucb1),
            "epsilon_greedy" => Ok(StrategyKind::EpsilonGreedy),
            "thompson" => Ok(StrategyKind::Thompson),
            other => Err(BanditError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BanditConfig {
    pub strategy: StrategyKind,
    pub exploration_weight: f64,
    pub epsilon: f64,
    pub prior_alpha: f64,
    pub prior_beta: f64,
    pub update_rule: UpdateRule,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyKind::Ucb1,
            exploration_weight: DEFAULT_EXPLORATION_WEIGHT,
            epsilon: 0.1,
            prior_alpha: DEFAULT_PRIOR,
            prior_beta: DEFAULT_PRIOR,
            update_rule: UpdateRule::ExactMean,
        }
    }
}

impl BanditConfig {
    pub fn with_strategy(self, strategy: StrategyKind) -> Self {
        Self { strategy, ..self }
    }
}

/// A bandit state plus the rule and RNG that drive it.
#[derive(Debug, Clone)]
pub struct Selector {
    cfg: BanditConfig,
    state: BanditState,
    posteriors: Option<BetaPosteriors>,
    rng: ChaCha8Rng,
}

impl Selector {
    pub fn new(arms: usize, cfg: BanditConfig, seed: u64) -> Result<Self, BanditError> {
        let state = BanditState::new(arms, cfg.exploration_weight)?.with_update_rule(cfg.update_rule)?;
        if !(0.0..=1.0).contains(&cfg.epsilon) {
            return Err(BanditError::InvalidParameter(format!("epsilon {}", cfg.epsilon)));
        }
        let posteriors = match cfg.strategy {
            StrategyKind::Thompson => Some(BetaPosteriors::new(arms, cfg.prior_alpha, cfg.prior_beta)?),
            _ => None,
        };
        Ok(Self {
            cfg,
            state,
            posteriors,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn select(&mut self) -> Result<usize, BanditError> {
        match self.cfg.strategy {
            StrategyKind::Ucb1 => ucb1_select(&self.state),
            StrategyKind::EpsilonGreedy => epsilon_greedy_select(&self.state, self.cfg.epsilon, &mut self.rng),
            StrategyKind::Thompson => thompson_select(
                self.posteriors.as_ref().expect("thompson selector has posteriors"),
                &mut self.rng,
            ),
        }
    }

    pub fn observe(&mut self, arm: usize, reward: RewardSignal) -> Result<(), BanditError> {
        update_mean(&mut self.state, arm, reward)?;
        if let Some(p) = self.posteriors.as_mut() {
            p.observe(arm, reward, &mut self.rng)?;
        }
        Ok(())
    }

    pub fn state(&self) -> &BanditState {
        &self.state
    }

    pub fn posteriors(&self) -> Option<&BetaPosteriors> {
        self.posteriors.as_ref()
    }
}
