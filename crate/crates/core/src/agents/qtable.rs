use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::Action;
use crate::error::{Error, Result};
use crate::grammar::{EncodedState, Grammar};
use crate::seeding::{self, stream};

/// How unvisited pairs are initialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QInit {
    Constant { value: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Default for QInit {
    fn default() -> Self {
        QInit::Uniform { lo: 0.0, hi: 0.01 }
    }
}

/// Dense action-value estimates, indexed by `(state index, action index)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
    visits: Vec<u64>,
}

impl QTable {
    pub fn new(num_states: usize, num_actions: usize, init: &QInit, seed: u64) -> Self {
        let len = num_states * num_actions;
        let values = match *init {
            QInit::Constant { value } => vec![value; len],
            QInit::Uniform { lo, hi } => {
                let mut rng = seeding::rng(&[stream::Q_INIT, seed]);
                (0..len)
                    .map(|_| if hi > lo { rng.gen_range(lo..hi) } else { lo })
                    .collect()
            }
        };
        QTable {
            num_states,
            num_actions,
            values,
            visits: vec![0; len],
        }
    }

    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        QTable::new(num_states, num_actions, &QInit::Constant { value: 0.0 }, 0)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.num_actions + action]
    }

    pub fn set(&mut self, state: usize, action: usize, value: f64) {
        self.values[state * self.num_actions + action] = value;
    }

    pub fn visits(&self, state: usize, action: usize) -> u64 {
        self.visits[state * self.num_actions + action]
    }

    pub(crate) fn bump(&mut self, state: usize, action: usize) {
        self.visits[state * self.num_actions + action] += 1;
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.num_actions..(state + 1) * self.num_actions]
    }

    pub fn max(&self, state: usize) -> f64 {
        self.row(state)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// All maximizing actions, ascending.
    pub fn argmax_all(&self, state: usize) -> Vec<usize> {
        let best = self.max(state);
        self.row(state)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == best)
            .map(|(a, _)| a)
            .collect()
    }

    /// Lowest-index maximizer; used for deterministic evaluation rollouts.
    pub fn greedy(&self, state: usize) -> usize {
        self.argmax_all(state)[0]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest absolute difference to a reference table of the same shape.
    pub fn sup_distance(&self, reference: &[f64]) -> f64 {
        assert_eq!(reference.len(), self.values.len());
        self.values
            .iter()
            .zip(reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Writes one CSV row per pair: state coordinates, action, q, visits.
    ///
    /// Header: `state,axis,direction,q,visits`; `state` is the coordinate
    /// list joined by `;`.
    pub fn write_csv<W: Write>(&self, grammar: &Grammar, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "axis", "direction", "q", "visits"])?;
        for s in 0..self.num_states {
            let coords = grammar.state_at(s);
            let key = coords
                .coords()
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(";");
            for a in 0..self.num_actions {
                let action = Action::from_index(a);
                w.write_record([
                    key.clone(),
                    action.axis.to_string(),
                    action.direction.to_string(),
                    self.get(s, a).to_string(),
                    self.visits(s, a).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(grammar: &Grammar, input: R) -> Result<Self> {
        let num_actions = 2 * grammar.num_axes();
        let mut table = QTable::zeros(grammar.num_states(), num_actions);
        let mut seen = vec![false; table.values.len()];
        let mut r = csv::Reader::from_reader(input);
        for record in r.records() {
            let record = record?;
            let bad = |what: &str| {
                Error::Invariant(format!(
                    "q-table row {:?}: bad {what}",
                    record.iter().collect::<Vec<_>>()
                ))
            };
            let coords = record
                .get(0)
                .ok_or_else(|| bad("state"))?
                .split(';')
                .map(|c| c.parse::<usize>().map_err(|_| bad("state")))
                .collect::<Result<Vec<_>>>()?;
            let state = EncodedState::new(coords);
            grammar.check(&state)?;
            let axis: usize = record
                .get(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad("axis"))?;
            let direction: i8 = record
                .get(2)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad("direction"))?;
            let q: f64 = record
                .get(3)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad("q"))?;
            let visits: u64 = record
                .get(4)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad("visits"))?;
            if axis >= grammar.num_axes() || (direction != 1 && direction != -1) {
                return Err(bad("action"));
            }
            let i = grammar.index_of(&state) * num_actions + Action::new(axis, direction).index();
            table.values[i] = q;
            table.visits[i] = visits;
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Invariant(format!(
                "q-table snapshot is missing pair #{missing}"
            )));
        }
        Ok(table)
    }
}
