//! Tabular agents and the reference solvers used to check them.

mod qtable;
pub mod reference;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{self, stream};

pub use qtable::{QInit, QTable};
pub use reference::{
    discounted_return, shortest_path_length, value_iteration, TabularModel, ValueEstimate,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    QLearning,
    Sarsa,
    Random,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::QLearning, Algorithm::Random, Algorithm::Sarsa];

    /// Short label used in statistics tables.
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::QLearning => "Q",
            Algorithm::Sarsa => "SARSA",
            Algorithm::Random => "Random",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label.to_ascii_lowercase().as_str() {
            "q" | "q_learning" | "qlearning" => Some(Algorithm::QLearning),
            "sarsa" => Some(Algorithm::Sarsa),
            "random" => Some(Algorithm::Random),
            _ => None,
        }
    }
}

/// Step-size schedule α_t(υ, a).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case")]
pub enum LearningRate {
    Constant {
        alpha: f64,
    },
    /// `1 / (1 + n)` where `n` counts earlier updates of the pair.
    /// Sums to infinity while its squares stay summable.
    VisitCount,
    /// `1 / (1 + n)^omega` with `omega` in (0.5, 1].
    Polynomial {
        omega: f64,
    },
}

impl LearningRate {
    pub fn alpha(&self, prior_visits: u64) -> f64 {
        match *self {
            LearningRate::Constant { alpha } => alpha,
            LearningRate::VisitCount => 1.0 / (1.0 + prior_visits as f64),
            LearningRate::Polynomial { omega } => (1.0 + prior_visits as f64).powf(-omega),
        }
    }
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_discount() -> f64 {
    0.9
}

fn default_episodes() -> usize {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "visit_count")]
    pub learning_rate: LearningRate,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default)]
    pub q_init: QInit,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
}

fn visit_count() -> LearningRate {
    LearningRate::VisitCount
}

impl AgentConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        AgentConfig {
            algorithm,
            epsilon: default_epsilon(),
            learning_rate: LearningRate::VisitCount,
            discount: default_discount(),
            q_init: QInit::default(),
            seed: 0,
            episodes: default_episodes(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config("agent", "epsilon", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::config("agent", "discount", "must lie in [0, 1)"));
        }
        match self.learning_rate {
            LearningRate::Constant { alpha } if !(0.0..=1.0).contains(&alpha) => {
                return Err(Error::config(
                    "agent",
                    "learning_rate.alpha",
                    "must lie in [0, 1]",
                ));
            }
            LearningRate::Polynomial { omega } if !(omega > 0.5 && omega <= 1.0) => {
                return Err(Error::config(
                    "agent",
                    "learning_rate.omega",
                    "must lie in (0.5, 1]",
                ));
            }
            _ => {}
        }
        match self.q_init {
            QInit::Constant { value } if !value.is_finite() => {
                return Err(Error::config("agent", "q_init.value", "must be finite"));
            }
            QInit::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo <= hi) => {
                return Err(Error::config("agent", "q_init", "needs finite lo <= hi"));
            }
            _ => {}
        }
        Ok(())
    }
}

/// One observed transition, by dense state and action index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    /// The next state ended the episode; nothing is bootstrapped from it.
    pub terminal: bool,
}

/// ε-greedy: uniform with probability ε, otherwise a uniformly chosen maximizer.
pub fn select_action<R: Rng + ?Sized>(
    q: &QTable,
    state: usize,
    epsilon: f64,
    rng: &mut R,
) -> usize {
    if rng.gen::<f64>() < epsilon {
        return rng.gen_range(0..q.num_actions());
    }
    let best = q.argmax_all(state);
    if best.len() == 1 {
        best[0]
    } else {
        best[rng.gen_range(0..best.len())]
    }
}

fn td_update(q: &mut QTable, t: &Transition, bootstrap: f64, config: &AgentConfig) -> f64 {
    let alpha = config.learning_rate.alpha(q.visits(t.state, t.action));
    let current = q.get(t.state, t.action);
    let target = t.reward
        + if t.terminal {
            0.0
        } else {
            config.discount * bootstrap
        };
    let delta = target - current;
    q.set(t.state, t.action, current + alpha * delta);
    q.bump(t.state, t.action);
    delta
}

/// Off-policy update; returns the TD error.
pub fn q_learning_update(q: &mut QTable, t: &Transition, config: &AgentConfig) -> f64 {
    let bootstrap = q.max(t.next_state);
    td_update(q, t, bootstrap, config)
}

/// On-policy update with the action actually chosen at the next state.
pub fn sarsa_update(
    q: &mut QTable,
    t: &Transition,
    next_action: usize,
    config: &AgentConfig,
) -> f64 {
    let bootstrap = q.get(t.next_state, next_action);
    td_update(q, t, bootstrap, config)
}

/// A learner plus its own seeded exploration stream.
pub struct Agent {
    config: AgentConfig,
    q: QTable,
    rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(config: AgentConfig, num_states: usize, num_actions: usize) -> Result<Self> {
        config.validate()?;
        let q = QTable::new(num_states, num_actions, &config.q_init, config.seed);
        let rng = seeding::rng(&[stream::AGENT, config.seed]);
        Ok(Agent { config, q, rng })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn q(&self) -> &QTable {
        &self.q
    }

    pub fn into_q(self) -> QTable {
        self.q
    }

    pub fn act(&mut self, state: usize) -> usize {
        match self.config.algorithm {
            Algorithm::Random => self.rng.gen_range(0..self.q.num_actions()),
            Algorithm::QLearning | Algorithm::Sarsa => {
                select_action(&self.q, state, self.config.epsilon, &mut self.rng)
            }
        }
    }

    /// Applies the algorithm's update. `next_action` is required for SARSA.
    pub fn learn(&mut self, t: &Transition, next_action: Option<usize>) {
        match self.config.algorithm {
            Algorithm::QLearning => {
                q_learning_update(&mut self.q, t, &self.config);
            }
            Algorithm::Sarsa => {
                let a = next_action.expect("SARSA needs the next action");
                sarsa_update(&mut self.q, t, a, &self.config);
            }
            Algorithm::Random => {}
        }
    }
}
