//! Seeded bandit environments for comparing selection strategies.
//!
//! Regret is pseudo-regret: the gap between the best arm's expected reward
//! and the expected reward of the arm pulled, summed over rounds. Gaussian
//! arms are clamped to `[0, 1]` when observed, but regret uses the declared
//! means.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::{BanditConfig, BanditError, RewardSignal, Selector, StrategyKind};
use crate::par::Exec;
use crate::seed::stable_seed;

/// Rounds at the end of a run over which best-arm frequency is measured.
pub const TAIL_ROUNDS: usize = 1000;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error("invalid environment: {0}")]
    InvalidEnv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArmSpec {
    Bernoulli { p: f64 },
    Gaussian { mean: f64, sd: f64 },
}

impl ArmSpec {
    pub fn mean(&self) -> f64 {
        match *self {
            ArmSpec::Bernoulli { p } => p,
            ArmSpec::Gaussian { mean, .. } => mean,
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            ArmSpec::Bernoulli { p } => f64::from(u8::from(rng.random::<f64>() < p)),
            ArmSpec::Gaussian { mean, sd } => Normal::new(mean, sd).expect("validated").sample(rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    pub arms: Vec<ArmSpec>,
    pub rounds: usize,
}

impl Environment {
    pub fn bernoulli(ps: &[f64], rounds: usize) -> Self {
        Self {
            arms: ps.iter().map(|&p| ArmSpec::Bernoulli { p }).collect(),
            rounds,
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.arms.is_empty() {
            return Err(SimulationError::InvalidEnv("no arms".into()));
        }
        if self.rounds == 0 {
            return Err(SimulationError::InvalidEnv("rounds must be positive".into()));
        }
        for (i, a) in self.arms.iter().enumerate() {
            let ok = match *a {
                ArmSpec::Bernoulli { p } => (0.0..=1.0).contains(&p),
                ArmSpec::Gaussian { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            };
            if !ok {
                return Err(SimulationError::InvalidEnv(format!("arm {i}: {a:?}")));
            }
        }
        Ok(())
    }

    fn best_mean(&self) -> f64 {
        self.arms.iter().map(ArmSpec::mean).fold(f64::NEG_INFINITY, f64::max)
    }

    fn is_best(&self, arm: usize) -> bool {
        self.arms[arm].mean() == self.best_mean()
    }
}

/// One strategy on one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub total_reward: f64,
    /// Cumulative regret after each round.
    pub regret: Vec<f64>,
    pub tail_best_frequency: f64,
}

pub fn run_seed(
    env: &Environment,
    cfg: BanditConfig,
    seed: u64,
) -> Result<SeedRun, SimulationError> {
    let mut sel = Selector::new(env.arms.len(), cfg, stable_seed(&["policy", cfg.strategy.as_str(), &seed.to_string()]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&["environment", &seed.to_string()]));
    let best = env.best_mean();
    let tail_start = env.rounds.saturating_sub(TAIL_ROUNDS);
    let mut regret = Vec::with_capacity(env.rounds);
    let (mut cum, mut total, mut tail_best) = (0.0, 0.0, 0usize);
    for round in 0..env.rounds {
        let arm = sel.select()?;
        let r = RewardSignal::new(env.arms[arm].draw(&mut rng))?;
        sel.observe(arm, r)?;
        total += r.value();
        cum += best - env.arms[arm].mean();
        regret.push(cum);
        if round >= tail_start && env.is_best(arm) {
            tail_best += 1;
        }
    }
    Ok(SeedRun {
        total_reward: total,
        regret,
        tail_best_frequency: tail_best as f64 / (env.rounds - tail_start) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: StrategyKind,
    /// Mean per-round reward, averaged over seeds.
    pub mean_reward: f64,
    /// Cumulative regret after each round, averaged over seeds.
    pub regret_curve: Vec<f64>,
    /// Fraction of the final rounds spent on a best arm, averaged over seeds.
    pub best_arm_frequency: f64,
    pub wall_time_ms: f64,
}

impl StrategyReport {
    pub fn final_regret(&self) -> f64 {
        self.regret_curve.last().copied().unwrap_or(0.0)
    }

    /// Mean regret per round after `rounds` rounds.
    pub fn regret_rate(&self, rounds: usize) -> f64 {
        self.regret_curve[rounds - 1] / rounds as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub strategies: Vec<StrategyReport>,
}

impl ComparisonReport {
    /// Summary table; wall time is left out so equal seeds give equal bytes.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("strategy,rounds,seeds,mean_reward,final_regret,best_arm_frequency\n");
        for r in &self.strategies {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.6}",
                r.strategy,
                self.rounds,
                self.seeds.len(),
                r.mean_reward,
                r.final_regret(),
                r.best_arm_frequency
            );
        }
        s
    }

    /// Cumulative regret per strategy every `every` rounds (and at the end).
    pub fn regret_csv(&self, every: usize) -> String {
        let every = every.max(1);
        let mut s = String::from("round");
        for r in &self.strategies {
            let _ = write!(s, ",{}", r.strategy);
        }
        s.push('\n');
        let rounds: Vec<usize> = (1..=self.rounds)
            .filter(|t| t % every == 0 || *t == self.rounds || *t == 1)
            .collect();
        for t in rounds {
            let _ = write!(s, "{t}");
            for r in &self.strategies {
                let _ = write!(s, ",{:.6}", r.regret_curve[t - 1]);
            }
            s.push('\n');
        }
        s
    }
}

/// Runs each strategy on each seed. Seeds run on `exec`; results do not
/// depend on the execution mode.
pub fn simulate_strategies(
    env: &Environment,
    strategies: &[StrategyKind],
    seeds: &[u64],
    base: BanditConfig,
    exec: Exec,
) -> Result<ComparisonReport, SimulationError> {
    env.validate()?;
    if seeds.is_empty() {
        return Err(SimulationError::InvalidEnv("no seeds".into()));
    }
    let mut reports = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let start = Instant::now();
        let cfg = base.with_strategy(strategy);
        let runs = exec
            .map(seeds, |&seed| run_seed(env, cfg, seed))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let k = runs.len() as f64;
        let mut curve = vec![0.0; env.rounds];
        for run in &runs {
            for (c, r) in curve.iter_mut().zip(&run.regret) {
                *c += r / k;
            }
        }
        reports.push(StrategyReport {
            strategy,
            mean_reward: runs.iter().map(|r| r.total_reward / env.rounds as f64).sum::<f64>() / k,
            regret_curve: curve,
            best_arm_frequency: runs.iter().map(|r| r.tail_best_frequency).sum::<f64>() / k,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(ComparisonReport {
        rounds: env.rounds,
        seeds: seeds.to_vec(),
        strategies: reports,
    })
}

/// Parses a comma-separated strategy list.
pub fn parse_strategies(list: &str) -> Result<Vec<StrategyKind>, BanditError> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}
