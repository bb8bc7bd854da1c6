//! Noisy Diffusion Gradient: coordinate-wise ascent on the reward using
//! central differences taken directly on the encoding lattice.

use serde::{Deserialize, Serialize};

use crate::environment::{start_state, Action, Environment};
use crate::error::{Error, Result};
use crate::grammar::EncodedState;
use crate::oracle::FeedbackOracle;
use crate::seeding::{self, stream};
use crate::trajectory::{ObservationDigest, StepRecord, TrajectoryRecord};

fn default_max_iterations() -> usize {
    200
}

fn default_one() -> usize {
    1
}

fn default_patience() -> usize {
    3
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NdgConfig {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_one")]
    pub probe_step: usize,
    /// Consecutive iterations without an improving move before giving up.
    #[serde(default = "default_patience")]
    pub plateau_patience: usize,
    #[serde(default = "default_true")]
    pub stop_at_goal: bool,
    #[serde(default)]
    pub seed: u64,
    /// Drawn from `seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<EncodedState>,
}

impl Default for NdgConfig {
    fn default() -> Self {
        NdgConfig {
            max_iterations: default_max_iterations(),
            probe_step: 1,
            plateau_patience: default_patience(),
            stop_at_goal: true,
            seed: 0,
            start: None,
        }
    }
}

impl NdgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.probe_step < 1 {
            return Err(Error::config("ndg", "probe_step", "must be at least 1"));
        }
        if self.plateau_patience < 1 {
            return Err(Error::config(
                "ndg",
                "plateau_patience",
                "must be at least 1",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NdgStatus {
    ReachedGoal,
    Plateau,
    MaxIters,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NdgResult {
    pub final_state: EncodedState,
    pub final_reward: f64,
    pub trajectory: TrajectoryRecord,
    pub status: NdgStatus,
    pub iterations: usize,
    /// The goal was passed through without stopping (`stop_at_goal = false`).
    pub visited_goal: bool,
}

/// `Δf_i = R(slide(s, i, +p)) − R(slide(s, i, −p))`; a clamped probe is the
/// state itself, which makes the difference one-sided at the boundary.
pub fn estimate_gradient<O: FeedbackOracle>(
    env: &mut Environment<O>,
    state: &EncodedState,
    probe_step: usize,
) -> Result<Vec<f64>> {
    env.grammar().check(state)?;
    let grammar = env.grammar().clone();
    let p = probe_step as i64;
    (0..grammar.num_axes())
        .map(|axis| {
            let up = env.evaluate(&grammar.slide(state, axis, p))?.1;
            let down = env.evaluate(&grammar.slide(state, axis, -p))?.1;
            Ok(up - down)
        })
        .collect()
}

/// Start from `config.start`, or a seeded non-goal state.
pub fn ndg_start<O: FeedbackOracle>(
    env: &Environment<O>,
    config: &NdgConfig,
) -> Result<EncodedState> {
    match &config.start {
        Some(s) => {
            env.grammar()
                .check(s)
                .map_err(|e| Error::config("ndg", "start", e.to_string()))?;
            Ok(s.clone())
        }
        None => start_state(
            env.grammar(),
            env.config(),
            seeding::mix(&[stream::PROBE, config.seed]),
        ),
    }
}

/// Steepest single-axis ascent. Each iteration takes the unit step with the
/// largest positive directional difference among steps that strictly raise
/// the reward; ties go to the lowest axis, then the positive direction.
pub fn run_ndg<O: FeedbackOracle>(
    env: &mut Environment<O>,
    start: &EncodedState,
    config: &NdgConfig,
) -> Result<NdgResult> {
    config.validate()?;
    env.grammar().check(start)?;
    let grammar = env.grammar().clone();
    let goal = env.terminal().clone();
    let mut state = start.clone();
    let mut current = env.evaluate(&state)?.1;
    let mut steps = Vec::new();
    let mut visited_goal = state == goal;
    let mut iterations = 0;
    let mut stale = 0;
    let mut status = NdgStatus::MaxIters;

    if config.stop_at_goal && state == goal {
        status = NdgStatus::ReachedGoal;
    } else {
        while iterations < config.max_iterations {
            iterations += 1;
            let grad = estimate_gradient(env, &state, config.probe_step)?;
            let mut best: Option<(f64, Action, EncodedState, f64)> = None;
            for (axis, &g) in grad.iter().enumerate() {
                for direction in [1i8, -1] {
                    let slope = f64::from(direction) * g;
                    if slope <= 0.0 || best.as_ref().is_some_and(|b| slope <= b.0) {
                        continue;
                    }
                    let next = grammar.slide(&state, axis, i64::from(direction));
                    if next == state {
                        continue;
                    }
                    let r = env.evaluate(&next)?.1;
                    if r > current {
                        best = Some((slope, Action::new(axis, direction), next, r));
                    }
                }
            }
            let Some((_, action, next, r)) = best else {
                stale += 1;
                if stale >= config.plateau_patience {
                    status = NdgStatus::Plateau;
                    break;
                }
                continue;
            };
            stale = 0;
            let observation = env.evaluate(&next)?.0;
            steps.push(StepRecord {
                state: state.clone(),
                action,
                reward: r,
                next_state: next.clone(),
                digest: ObservationDigest::of(&observation, env.ground_truth()),
                distance_to_terminal: env.distance_to_terminal(&next),
                observation: None,
            });
            state = next;
            current = r;
            visited_goal |= state == goal;
            if config.stop_at_goal && state == goal {
                status = NdgStatus::ReachedGoal;
                break;
            }
        }
    }

    let trajectory = TrajectoryRecord {
        episode: 0,
        start: start.clone(),
        start_distance: env.distance_to_terminal(start),
        reached_terminal: visited_goal,
        steps,
    };
    Ok(NdgResult {
        final_state: state,
        final_reward: current,
        trajectory,
        status,
        iterations,
        visited_goal,
    })
}
