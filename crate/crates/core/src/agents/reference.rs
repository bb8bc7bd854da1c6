//! Exact solvers used as test oracles: Bellman value iteration on the
//! enumerated MDP and breadth-first search on the clamped lattice.

use std::collections::VecDeque;

use crate::environment::{Action, Environment};
use crate::error::{Error, Result};
use crate::grammar::{EncodedState, Grammar};
use crate::oracle::FeedbackOracle;

/// Deterministic MDP in table form.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularModel {
    pub num_states: usize,
    pub num_actions: usize,
    /// `next[s * num_actions + a]`
    pub next: Vec<usize>,
    /// Reward for taking `a` in `s`.
    pub reward: Vec<f64>,
    /// Episode ends on entry; value is zero.
    pub absorbing: Vec<bool>,
}

impl TabularModel {
    /// Enumerates every (state, action) pair of the environment. Rewards are
    /// deterministic because each state has exactly one seeded observation.
    pub fn from_environment<O: FeedbackOracle>(env: &mut Environment<O>) -> Result<Self> {
        let grammar = env.grammar().clone();
        let num_states = grammar.num_states();
        let num_actions = env.num_actions();
        let mut next = Vec::with_capacity(num_states * num_actions);
        let mut reward = Vec::with_capacity(num_states * num_actions);
        for s in grammar.states() {
            for a in Action::all(grammar.num_axes()) {
                let n = env.transition(&s, a);
                reward.push(env.evaluate(&n)?.1);
                next.push(grammar.index_of(&n));
            }
        }
        let mut absorbing = vec![false; num_states];
        if env.config().terminal_stops_episode {
            absorbing[grammar.index_of(env.terminal())] = true;
        }
        Ok(TabularModel {
            num_states,
            num_actions,
            next,
            reward,
            absorbing,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueEstimate {
    pub v_star: Vec<f64>,
    /// `q_star[s * num_actions + a]`
    pub q_star: Vec<f64>,
    pub num_actions: usize,
    pub iterations: usize,
}

impl ValueEstimate {
    pub fn v(&self, state: usize) -> f64 {
        self.v_star[state]
    }

    pub fn q(&self, state: usize, action: usize) -> f64 {
        self.q_star[state * self.num_actions + action]
    }

    /// All optimal actions at `state`, within `tol`.
    pub fn optimal_actions(&self, state: usize, tol: f64) -> Vec<usize> {
        let v = self.v(state);
        (0..self.num_actions)
            .filter(|&a| self.q(state, a) >= v - tol)
            .collect()
    }
}

/// Bellman optimality backups until the sup-norm change drops below `tolerance`.
pub fn value_iteration(
    model: &TabularModel,
    discount: f64,
    tolerance: f64,
) -> Result<ValueEstimate> {
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::config(
            "agent",
            "discount",
            "value iteration needs 0 <= discount < 1",
        ));
    }
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(Error::config("agent", "tolerance", "must be positive"));
    }
    let (ns, na) = (model.num_states, model.num_actions);
    let mut v = vec![0.0; ns];
    let mut q = vec![0.0; ns * na];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut change: f64 = 0.0;
        for s in 0..ns {
            if model.absorbing[s] {
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            for a in 0..na {
                let i = s * na + a;
                q[i] = model.reward[i] + discount * v[model.next[i]];
                best = best.max(q[i]);
            }
            change = change.max((best - v[s]).abs());
            v[s] = best;
        }
        if change < tolerance {
            break;
        }
    }
    Ok(ValueEstimate {
        v_star: v,
        q_star: q,
        num_actions: na,
        iterations,
    })
}

/// G = Σ γ^k r_k.
pub fn discounted_return(rewards: &[f64], discount: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |g, r| r + discount * g)
}

/// Fewest unit moves from `start` to `terminal` on the clamped lattice.
pub fn shortest_path_length(
    grammar: &Grammar,
    start: &EncodedState,
    terminal: &EncodedState,
) -> Result<u64> {
    grammar.check(start)?;
    grammar.check(terminal)?;
    let goal = grammar.index_of(terminal);
    let mut dist = vec![u64::MAX; grammar.num_states()];
    let s0 = grammar.index_of(start);
    dist[s0] = 0;
    let mut queue = VecDeque::from([s0]);
    while let Some(i) = queue.pop_front() {
        if i == goal {
            return Ok(dist[i]);
        }
        let state = grammar.state_at(i);
        for a in Action::all(grammar.num_axes()) {
            let j = grammar.index_of(&grammar.slide(&state, a.axis, i64::from(a.direction)));
            if dist[j] == u64::MAX {
                dist[j] = dist[i] + 1;
                queue.push_back(j);
            }
        }
    }
    Err(Error::Invariant(format!(
        "{terminal} unreachable from {start}"
    )))
}
