//! The finite MDP over the encoding lattice.
//!
//! Transitions are deterministic unit moves (clamped at the vocabulary
//! ends); every bit of randomness in a step lives in the oracle's
//! observation and therefore only in the reward.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{semantic_distance, EncodedState, Grammar};
use crate::oracle::{CachedOracle, FeedbackOracle, SemanticObservation};
use crate::rewards::{reward, GroundTruth, RewardSpec};
use crate::seeding::{self, stream};

/// Unit move along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action {
    pub axis: usize,
    /// `+1` or `-1`.
    pub direction: i8,
}

impl Action {
    pub fn new(axis: usize, direction: i8) -> Self {
        debug_assert!(direction == 1 || direction == -1);
        Action { axis, direction }
    }

    /// Dense index: `2 * axis` for `+1`, `2 * axis + 1` for `-1`.
    pub fn index(self) -> usize {
        2 * self.axis + usize::from(self.direction < 0)
    }

    pub fn from_index(index: usize) -> Self {
        Action {
            axis: index / 2,
            direction: if index.is_multiple_of(2) { 1 } else { -1 },
        }
    }

    pub fn all(num_axes: usize) -> Vec<Action> {
        (0..2 * num_axes).map(Action::from_index).collect()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}",
            if self.direction > 0 { '+' } else { '-' },
            self.axis
        )
    }
}

fn default_max_steps() -> usize {
    100
}

fn default_penalty() -> f64 {
    -1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentConfig {
    pub terminal_state: EncodedState,
    #[serde(default = "default_max_steps")]
    pub max_steps_per_episode: usize,
    /// `false` keeps the episode running past the goal (post-goal training).
    #[serde(default)]
    pub terminal_stops_episode: bool,
    #[serde(default)]
    pub rng_seed: u64,
    /// States flagged as unrealistic generations; entering one adds `penalty_reward`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub penalty_states: Vec<EncodedState>,
    #[serde(default = "default_penalty")]
    pub penalty_reward: f64,
}

impl EnvironmentConfig {
    pub fn new(terminal_state: EncodedState) -> Self {
        EnvironmentConfig {
            terminal_state,
            max_steps_per_episode: default_max_steps(),
            terminal_stops_episode: false,
            rng_seed: 0,
            penalty_states: Vec::new(),
            penalty_reward: default_penalty(),
        }
    }

    pub fn validate(&self, grammar: &Grammar) -> Result<()> {
        grammar
            .check(&self.terminal_state)
            .map_err(|e| Error::config("environment", "terminal", e.to_string()))?;
        if self.max_steps_per_episode == 0 {
            return Err(Error::config(
                "environment",
                "max_steps_per_episode",
                "must be at least 1",
            ));
        }
        for s in &self.penalty_states {
            grammar
                .check(s)
                .map_err(|e| Error::config("environment", "penalty_states", e.to_string()))?;
        }
        if !self.penalty_reward.is_finite() {
            return Err(Error::config(
                "environment",
                "penalty_reward",
                "must be finite",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: EncodedState,
    pub observation: SemanticObservation,
    pub reward: f64,
    pub is_terminal: bool,
    /// 1-based index of this step within the episode.
    pub step_index: usize,
    /// The episode hit its step cap on this step.
    pub truncated: bool,
}

/// Uniform non-terminal start, a pure function of `(rng_seed, episode_seed)`.
pub fn start_state(
    grammar: &Grammar,
    config: &EnvironmentConfig,
    episode_seed: u64,
) -> Result<EncodedState> {
    let n = grammar.num_states();
    if n < 2 {
        return Err(Error::NoValidStart);
    }
    let terminal = grammar.index_of(&config.terminal_state);
    let mut rng = seeding::rng(&[stream::RESET, config.rng_seed, episode_seed]);
    let mut i = rng.gen_range(0..n - 1);
    if i >= terminal {
        i += 1;
    }
    Ok(grammar.state_at(i))
}

pub struct Environment<O> {
    grammar: Arc<Grammar>,
    config: EnvironmentConfig,
    oracle: CachedOracle<O>,
    reward_spec: RewardSpec,
    target: SemanticObservation,
    gt: GroundTruth,
    penalties: HashSet<EncodedState>,
    step_index: usize,
    done: bool,
}

impl<O: FeedbackOracle> Environment<O> {
    pub fn new(
        grammar: Arc<Grammar>,
        config: EnvironmentConfig,
        mut oracle: O,
        reward_spec: RewardSpec,
    ) -> Result<Self> {
        config.validate(&grammar)?;
        reward_spec.validate()?;
        let target = oracle.target_semantics(&config.terminal_state)?;
        let gt = GroundTruth::for_spec(&target, &grammar, &config.terminal_state, &reward_spec);
        let penalties = config.penalty_states.iter().cloned().collect();
        Ok(Environment {
            grammar,
            config,
            oracle: CachedOracle::new(oracle),
            reward_spec,
            target,
            gt,
            penalties,
            step_index: 0,
            done: false,
        })
    }

    pub fn grammar(&self) -> &Arc<Grammar> {
        &self.grammar
    }

    pub fn config(&self) -> &EnvironmentConfig {
        &self.config
    }

    pub fn terminal(&self) -> &EncodedState {
        &self.config.terminal_state
    }

    pub fn reward_spec(&self) -> &RewardSpec {
        &self.reward_spec
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.gt
    }

    pub fn target(&self) -> &SemanticObservation {
        &self.target
    }

    pub fn num_actions(&self) -> usize {
        2 * self.grammar.num_axes()
    }

    pub fn oracle(&self) -> &CachedOracle<O> {
        &self.oracle
    }

    pub fn reset(&mut self, episode_seed: u64) -> Result<EncodedState> {
        self.step_index = 0;
        self.done = false;
        start_state(&self.grammar, &self.config, episode_seed)
    }

    /// Deterministic transition kernel.
    pub fn transition(&self, state: &EncodedState, action: Action) -> EncodedState {
        self.grammar
            .slide(state, action.axis, i64::from(action.direction))
    }

    pub fn distance_to_terminal(&self, state: &EncodedState) -> u64 {
        semantic_distance(state, &self.config.terminal_state).expect("states share the grammar")
    }

    /// Observation and reward for arriving at `state`.
    pub fn evaluate(&mut self, state: &EncodedState) -> Result<(SemanticObservation, f64)> {
        let observation = self.oracle.observe(state)?;
        let mut r = reward(&observation, &self.gt, &self.reward_spec)?;
        if self.penalties.contains(state) {
            r += self.config.penalty_reward;
        }
        Ok((observation, r))
    }

    pub fn step(&mut self, state: &EncodedState, action: Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Invariant(
                "step called after the episode ended".into(),
            ));
        }
        self.grammar.check(state)?;
        if action.axis >= self.grammar.num_axes()
            || (action.direction != 1 && action.direction != -1)
        {
            return Err(Error::Invariant(format!(
                "action {action:?} is not in the action set"
            )));
        }
        let next_state = self.transition(state, action);
        let (observation, reward) = self.evaluate(&next_state)?;
        self.step_index += 1;
        let is_terminal =
            self.config.terminal_stops_episode && next_state == self.config.terminal_state;
        let truncated = !is_terminal && self.step_index >= self.config.max_steps_per_episode;
        self.done = is_terminal || truncated;
        Ok(StepOutcome {
            next_state,
            observation,
            reward,
            is_terminal,
            step_index: self.step_index,
            truncated,
        })
    }
}
