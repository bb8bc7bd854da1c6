//! Trajectory records, observation digests and end-of-run statistics.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::environment::Action;
use crate::error::{Error, Result};
use crate::grammar::EncodedState;
use crate::oracle::SemanticObservation;
use crate::rewards::GroundTruth;

/// Compact summary of an observation against the ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationDigest {
    /// Bit `i` is set when the `i`-th ground-truth object (sorted) was seen.
    pub objects_matched: u64,
    pub scene_matched: bool,
}

impl ObservationDigest {
    pub fn of(observation: &SemanticObservation, gt: &GroundTruth) -> Self {
        let objects_matched = gt
            .objects
            .iter()
            .take(64)
            .enumerate()
            .filter(|(_, o)| observation.objects.contains(*o))
            .fold(0u64, |mask, (i, _)| mask | 1 << i);
        ObservationDigest {
            objects_matched,
            scene_matched: gt.scene_matches(observation),
        }
    }

    /// At least one ground-truth object was recognized.
    pub fn fine(&self) -> bool {
        self.objects_matched != 0
    }

    pub fn coarse(&self) -> bool {
        self.scene_matched
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: EncodedState,
    pub action: Action,
    pub reward: f64,
    pub next_state: EncodedState,
    pub digest: ObservationDigest,
    /// L1 distance from `next_state` to the terminal.
    pub distance_to_terminal: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<SemanticObservation>,
}

/// One episode: Υ₀, A₀, R₁, Υ₁, A₁, R₂, …
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub episode: usize,
    pub start: EncodedState,
    pub start_distance: u64,
    pub steps: Vec<StepRecord>,
    pub reached_terminal: bool,
}

impl TrajectoryRecord {
    /// Distances along the episode, starting with the start state.
    pub fn distances(&self) -> Vec<u64> {
        std::iter::once(self.start_distance)
            .chain(self.steps.iter().map(|s| s.distance_to_terminal))
            .collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Steps with a fine (object) and with a coarse (scene) semantic match.
pub fn fine_coarse_counters(trajectory: &TrajectoryRecord) -> (u64, u64) {
    trajectory.steps.iter().fold((0, 0), |(f, c), s| {
        (
            f + u64::from(s.digest.fine()),
            c + u64::from(s.digest.coarse()),
        )
    })
}

/// Summary statistics for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStatistics {
    pub d_t: u64,
    pub d_max: u64,
    pub d_min: u64,
    pub rho: f64,
    pub sigma_sq: f64,
    pub conv: bool,
    pub f_semantic: u64,
    pub c_semantic: u64,
}

impl RunStatistics {
    /// Distance and counter columns come from the final episode.
    pub fn from_final_episode(trajectory: &TrajectoryRecord, conv: bool) -> Self {
        let d = trajectory.distances();
        let n = d.len() as f64;
        let mean = d.iter().map(|&x| x as f64).sum::<f64>() / n;
        let sigma_sq = d.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
        let (f_semantic, c_semantic) = fine_coarse_counters(trajectory);
        RunStatistics {
            d_t: *d.last().expect("distances start with the start state"),
            d_max: *d.iter().max().unwrap(),
            d_min: *d.iter().min().unwrap(),
            rho: sigma_sq.sqrt(),
            sigma_sq,
            conv,
            f_semantic,
            c_semantic,
        }
    }

    pub fn check(&self) -> Result<()> {
        if (self.sigma_sq - self.rho * self.rho).abs() > 1e-9 {
            return Err(Error::Invariant(format!(
                "sigma_sq {} != rho^2 {}",
                self.sigma_sq,
                self.rho * self.rho
            )));
        }
        if !(self.d_min <= self.d_t && self.d_t <= self.d_max) {
            return Err(Error::Invariant(format!(
                "d_t {} outside [{}, {}]",
                self.d_t, self.d_min, self.d_max
            )));
        }
        Ok(())
    }
}

/// One JSON record per line.
pub fn write_trajectories<W: Write>(mut out: W, records: &[TrajectoryRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectories<R: BufRead>(input: R) -> Result<Vec<TrajectoryRecord>> {
    let mut records = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str(&line)?);
        }
    }
    Ok(records)
}
