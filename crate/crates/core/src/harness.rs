//! Training loops, replay and multi-seed sweeps.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{shortest_path_length, Agent, AgentConfig, Algorithm, QTable, Transition};
use crate::config::{ResolvedConfig, RunConfiguration};
use crate::environment::{start_state, Action, Environment, EnvironmentConfig};
use crate::error::{Error, Result};
use crate::grammar::{EncodedState, Grammar};
use crate::ndg::{ndg_start, run_ndg, NdgResult};
use crate::oracle::{build_oracle, FeedbackOracle};
use crate::rewards::RewardKind;
use crate::seeding::{self, stream};
use crate::trajectory::{ObservationDigest, RunStatistics, StepRecord, TrajectoryRecord};

pub type DynEnvironment = Environment<Box<dyn FeedbackOracle + Send>>;

pub struct TrainOutput {
    pub q: QTable,
    pub trajectories: Vec<TrajectoryRecord>,
    /// Absent when no episode ran.
    pub statistics: Option<RunStatistics>,
    /// Distinct generations the oracle performed.
    pub oracle_calls: u64,
    /// Observations requested, cache hits included.
    pub oracle_requests: u64,
}

/// The `k`-th fixed probe start used for convergence checks.
pub fn probe_start(grammar: &Grammar, config: &EnvironmentConfig, k: u64) -> Result<EncodedState> {
    start_state(grammar, config, seeding::mix(&[stream::PROBE, k]))
}

/// Follows the greedy policy (lowest-index ties) for at most `max_steps`
/// moves, stopping on arrival at `terminal`. Returns the visited states.
pub fn greedy_rollout(
    q: &QTable,
    grammar: &Grammar,
    start: &EncodedState,
    terminal: &EncodedState,
    max_steps: usize,
) -> Vec<EncodedState> {
    let mut path = vec![start.clone()];
    let mut s = start.clone();
    for _ in 0..max_steps {
        if &s == terminal {
            break;
        }
        let a = Action::from_index(q.greedy(grammar.index_of(&s)));
        s = grammar.slide(&s, a.axis, i64::from(a.direction));
        path.push(s.clone());
    }
    path
}

/// Greedy steps from `start` to `terminal`, if reached within `max_steps`.
pub fn greedy_steps_to_goal(
    q: &QTable,
    grammar: &Grammar,
    start: &EncodedState,
    terminal: &EncodedState,
    max_steps: usize,
) -> Option<usize> {
    let path = greedy_rollout(q, grammar, start, terminal, max_steps);
    (path.last() == Some(terminal)).then(|| path.len() - 1)
}

/// Conv. flag: the greedy policy from the fixed probe start reaches the
/// terminal within twice the shortest-path length.
pub fn converged(q: &QTable, grammar: &Grammar, config: &EnvironmentConfig) -> Result<bool> {
    let start = probe_start(grammar, config, 0)?;
    let sp = shortest_path_length(grammar, &start, &config.terminal_state)? as usize;
    Ok(greedy_steps_to_goal(q, grammar, &start, &config.terminal_state, 2 * sp).is_some())
}

/// Episodes of ε-greedy interaction with per-step updates.
/// Q-learning bootstraps from the greedy value, SARSA from the action it
/// will take next, and the random agent never updates.
pub fn train<O: FeedbackOracle>(
    env: &mut Environment<O>,
    agent_config: &AgentConfig,
    record_observations: bool,
) -> Result<TrainOutput> {
    let grammar = env.grammar().clone();
    let mut agent = Agent::new(
        agent_config.clone(),
        grammar.num_states(),
        env.num_actions(),
    )?;
    let terminal = env.terminal().clone();
    let mut trajectories = Vec::with_capacity(agent_config.episodes);

    for episode in 0..agent_config.episodes {
        let start = env.reset(episode as u64)?;
        let mut s = start.clone();
        let mut a = agent.act(grammar.index_of(&s));
        let mut steps = Vec::new();
        let mut reached_terminal = false;
        loop {
            let out = env.step(&s, Action::from_index(a))?;
            let next_idx = grammar.index_of(&out.next_state);
            let next_a = (agent_config.algorithm == Algorithm::Sarsa).then(|| agent.act(next_idx));
            agent.learn(
                &Transition {
                    state: grammar.index_of(&s),
                    action: a,
                    reward: out.reward,
                    next_state: next_idx,
                    terminal: out.is_terminal,
                },
                next_a,
            );
            reached_terminal |= out.next_state == terminal;
            steps.push(StepRecord {
                state: s,
                action: Action::from_index(a),
                reward: out.reward,
                next_state: out.next_state.clone(),
                digest: ObservationDigest::of(&out.observation, env.ground_truth()),
                distance_to_terminal: env.distance_to_terminal(&out.next_state),
                observation: record_observations.then_some(out.observation),
            });
            s = out.next_state;
            if out.is_terminal || out.truncated {
                break;
            }
            a = next_a.unwrap_or_else(|| agent.act(next_idx));
        }
        trajectories.push(TrajectoryRecord {
            episode,
            start_distance: env.distance_to_terminal(&start),
            start,
            steps,
            reached_terminal,
        });
    }

    let q = agent.into_q();
    let statistics = match trajectories.last() {
        Some(last) => {
            let stats =
                RunStatistics::from_final_episode(last, converged(&q, &grammar, env.config())?);
            stats.check()?;
            Some(stats)
        }
        None => None,
    };
    Ok(TrainOutput {
        q,
        trajectories,
        statistics,
        oracle_calls: env.oracle().generations(),
        oracle_requests: env.oracle().requests(),
    })
}

/// Environment with the oracle the configuration selects.
pub fn build_environment(resolved: &ResolvedConfig) -> Result<DynEnvironment> {
    let oracle = build_oracle(resolved.grammar.clone(), &resolved.oracle)?;
    Environment::new(
        resolved.grammar.clone(),
        resolved.environment.clone(),
        oracle,
        resolved.reward.clone(),
    )
}

pub fn train_config(config: &RunConfiguration) -> Result<TrainOutput> {
    let resolved = config.resolve()?;
    let mut env = build_environment(&resolved)?;
    train(&mut env, &resolved.agent, resolved.verbosity >= 2)
}

/// NDG from the configured (or seeded) start; also returns oracle calls.
pub fn ndg_config(config: &RunConfiguration) -> Result<(NdgResult, u64)> {
    let resolved = config.resolve()?;
    let mut env = build_environment(&resolved)?;
    let start = ndg_start(&env, &resolved.ndg)?;
    let result = run_ndg(&mut env, &start, &resolved.ndg)?;
    Ok((result, env.oracle().generations()))
}

/// Recomputes the statistics from a persisted log. The final episode is
/// re-observed through a fresh oracle and every logged digest, reward and
/// distance must match; the Conv. flag comes from the saved Q-table.
pub fn replay<O: FeedbackOracle>(
    env: &mut Environment<O>,
    trajectories: &[TrajectoryRecord],
    q: &QTable,
) -> Result<Option<RunStatistics>> {
    let Some(last) = trajectories.last() else {
        return Ok(None);
    };
    let grammar = env.grammar().clone();
    if q.num_states() != grammar.num_states() || q.num_actions() != env.num_actions() {
        return Err(Error::Invariant(
            "Q-table shape does not match the grammar".into(),
        ));
    }
    let mut rebuilt = last.clone();
    rebuilt.start_distance = env.distance_to_terminal(&last.start);
    let mut prev = last.start.clone();
    for (i, step) in rebuilt.steps.iter_mut().enumerate() {
        if step.state != prev || env.transition(&step.state, step.action) != step.next_state {
            return Err(Error::Invariant(format!(
                "episode {} step {i} does not follow the transition kernel",
                last.episode
            )));
        }
        let (observation, reward) = env.evaluate(&step.next_state)?;
        let digest = ObservationDigest::of(&observation, env.ground_truth());
        let distance = env.distance_to_terminal(&step.next_state);
        if digest != step.digest || reward != step.reward || distance != step.distance_to_terminal {
            return Err(Error::Invariant(format!(
                "episode {} step {i} disagrees with a fresh observation",
                last.episode
            )));
        }
        step.digest = digest;
        step.distance_to_terminal = distance;
        prev = step.next_state.clone();
    }
    let stats = RunStatistics::from_final_episode(&rebuilt, converged(q, &grammar, env.config())?);
    stats.check()?;
    Ok(Some(stats))
}

/// Agents × rewards × ε × seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub agents: Vec<Algorithm>,
    pub rewards: Vec<RewardKind>,
    pub epsilons: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    /// {Q, Random, SARSA} × {1, 2, 3} × {0.01, 0.10}.
    pub fn standard(seeds: Vec<u64>) -> Self {
        SweepGrid {
            agents: Algorithm::ALL.to_vec(),
            rewards: RewardKind::ALL.to_vec(),
            epsilons: vec![0.01, 0.1],
            seeds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, empty) in [
            ("agents", self.agents.is_empty()),
            ("rewards", self.rewards.is_empty()),
            ("epsilons", self.epsilons.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                return Err(Error::config("sweep", field, "grid dimension is empty"));
            }
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(Error::config(
                "sweep",
                "epsilons",
                format!("{e} is not in [0, 1]"),
            ));
        }
        Ok(())
    }

    /// Cells in grid order, seed varying fastest.
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut cells = Vec::new();
        for &agent in &self.agents {
            for &reward in &self.rewards {
                for &epsilon in &self.epsilons {
                    for &seed in &self.seeds {
                        cells.push(SweepCell {
                            agent,
                            reward,
                            epsilon,
                            seed,
                        });
                    }
                }
            }
        }
        cells
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub agent: Algorithm,
    pub reward: RewardKind,
    pub epsilon: f64,
    pub seed: u64,
}

impl SweepCell {
    /// File-name-safe identifier.
    pub fn key(&self) -> String {
        format!(
            "{}-r{}-e{}-s{}",
            self.agent.label(),
            self.reward.number(),
            self.epsilon,
            self.seed
        )
    }

    pub fn configure(&self, base: &RunConfiguration) -> RunConfiguration {
        let mut c = base.with_seed(self.seed);
        c.agent.algorithm = self.agent;
        c.agent.epsilon = self.epsilon;
        c.reward.kind = self.reward;
        c
    }
}

/// One statistics row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    #[serde(rename = "Agent")]
    pub agent: String,
    #[serde(rename = "Reward")]
    pub reward: u8,
    #[serde(rename = "ε")]
    pub epsilon: f64,
    #[serde(rename = "D_T")]
    pub d_t: u64,
    #[serde(rename = "D_max")]
    pub d_max: u64,
    #[serde(rename = "D_min")]
    pub d_min: u64,
    #[serde(rename = "ρ")]
    pub rho: f64,
    #[serde(rename = "σ²")]
    pub sigma_sq: f64,
    #[serde(rename = "Conv.")]
    pub conv: u8,
    #[serde(rename = "F Semantic")]
    pub f_semantic: u64,
    #[serde(rename = "C Semantic")]
    pub c_semantic: u64,
    pub seed: u64,
    pub oracle_calls: u64,
}

pub const STATS_COLUMNS: [&str; 11] = [
    "Agent",
    "Reward",
    "ε",
    "D_T",
    "D_max",
    "D_min",
    "ρ",
    "σ²",
    "Conv.",
    "F Semantic",
    "C Semantic",
];

impl StatsRow {
    pub fn new(config: &RunConfiguration, stats: &RunStatistics, oracle_calls: u64) -> Self {
        StatsRow {
            agent: config.agent.algorithm.label().to_string(),
            reward: config.reward.kind.number(),
            epsilon: config.agent.epsilon,
            d_t: stats.d_t,
            d_max: stats.d_max,
            d_min: stats.d_min,
            rho: stats.rho,
            sigma_sq: stats.sigma_sq,
            conv: u8::from(stats.conv),
            f_semantic: stats.f_semantic,
            c_semantic: stats.c_semantic,
            seed: config.agent.seed,
            oracle_calls,
        }
    }
}

/// Seed-averaged row for one (agent, reward, ε) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    #[serde(rename = "Agent")]
    pub agent: String,
    #[serde(rename = "Reward")]
    pub reward: u8,
    #[serde(rename = "ε")]
    pub epsilon: f64,
    #[serde(rename = "D_T")]
    pub d_t: f64,
    #[serde(rename = "D_max")]
    pub d_max: f64,
    #[serde(rename = "D_min")]
    pub d_min: f64,
    #[serde(rename = "ρ")]
    pub rho: f64,
    #[serde(rename = "σ²")]
    pub sigma_sq: f64,
    #[serde(rename = "Conv.")]
    pub conv: f64,
    #[serde(rename = "F Semantic")]
    pub f_semantic: f64,
    #[serde(rename = "C Semantic")]
    pub c_semantic: f64,
    pub seeds: usize,
    pub oracle_calls: f64,
}

pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stats_csv<R: std::io::Read>(input: R) -> Result<Vec<StatsRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(Error::from)
}

/// Trains one cell and summarizes it.
pub fn run_cell(base: &RunConfiguration, cell: &SweepCell) -> Result<StatsRow> {
    let config = cell.configure(base);
    let out = train_config(&config)?;
    let stats = out.statistics.ok_or_else(|| {
        Error::config(
            "agent",
            "episodes",
            "a sweep cell needs at least one episode",
        )
    })?;
    Ok(StatsRow::new(&config, &stats, out.oracle_calls))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellOutcome {
    pub cell: SweepCell,
    pub result: std::result::Result<StatsRow, String>,
    /// Loaded from an earlier, interrupted sweep.
    pub resumed: bool,
}

#[derive(Clone, Debug, Default)]
pub struct SweepOptions {
    /// Worker threads; 0 picks the number of cells capped by available cores.
    pub parallel: usize,
    /// Completed cells are stored here and skipped when the sweep is rerun.
    pub cell_dir: Option<PathBuf>,
}

fn cell_path(dir: &Path, cell: &SweepCell) -> PathBuf {
    dir.join(format!("{}.json", cell.key()))
}

fn run_or_resume(base: &RunConfiguration, cell: &SweepCell, dir: Option<&Path>) -> CellOutcome {
    if let Some(dir) = dir {
        if let Ok(text) = fs::read_to_string(cell_path(dir, cell)) {
            if let Ok(row) = serde_json::from_str::<StatsRow>(&text) {
                return CellOutcome {
                    cell: *cell,
                    result: Ok(row),
                    resumed: true,
                };
            }
        }
    }
    let result = run_cell(base, cell).map_err(|e| e.to_string());
    if let (Some(dir), Ok(row)) = (dir, &result) {
        // write-then-rename so a killed sweep never leaves a half cell behind
        let tmp = dir.join(format!(".{}.tmp", cell.key()));
        let saved = serde_json::to_string(row)
            .map_err(Error::from)
            .and_then(|text| fs::write(&tmp, text).map_err(Error::from))
            .and_then(|_| fs::rename(&tmp, cell_path(dir, cell)).map_err(Error::from));
        if let Err(e) = saved {
            return CellOutcome {
                cell: *cell,
                result: Err(format!("could not save cell: {e}")),
                resumed: false,
            };
        }
    }
    CellOutcome {
        cell: *cell,
        result,
        resumed: false,
    }
}

/// Runs every cell; failures are reported per cell. Outcomes come back in
/// grid order regardless of scheduling. `progress` sees each cell as it ends.
pub fn sweep(
    base: &RunConfiguration,
    grid: &SweepGrid,
    options: &SweepOptions,
    progress: &(dyn Fn(&CellOutcome) + Sync),
) -> Result<Vec<CellOutcome>> {
    grid.validate()?;
    base.resolve()?;
    if let Some(dir) = &options.cell_dir {
        fs::create_dir_all(dir)?;
    }
    let cells = grid.cells();
    let dir = options.cell_dir.as_deref();
    let run = |cell: &SweepCell| {
        let outcome = run_or_resume(base, cell, dir);
        progress(&outcome);
        outcome
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let available = std::thread::available_parallelism().map_or(1, |n| n.get());
        let threads = match options.parallel {
            0 => cells.len().min(available),
            n => n,
        };
        if threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?;
            return Ok(pool.install(|| cells.par_iter().map(run).collect()));
        }
    }
    Ok(cells.iter().map(run).collect())
}

/// Averages rows over seeds, keeping first-appearance order.
pub fn seed_means(rows: &[StatsRow]) -> Vec<MeanRow> {
    let mut groups: Vec<(String, u8, f64, Vec<&StatsRow>)> = Vec::new();
    for r in rows {
        match groups
            .iter_mut()
            .find(|g| g.0 == r.agent && g.1 == r.reward && g.2 == r.epsilon)
        {
            Some(g) => g.3.push(r),
            None => groups.push((r.agent.clone(), r.reward, r.epsilon, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(agent, reward, epsilon, rs)| {
            let n = rs.len() as f64;
            let mean = |f: &dyn Fn(&StatsRow) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            MeanRow {
                agent,
                reward,
                epsilon,
                d_t: mean(&|r| r.d_t as f64),
                d_max: mean(&|r| r.d_max as f64),
                d_min: mean(&|r| r.d_min as f64),
                rho: mean(&|r| r.rho),
                sigma_sq: mean(&|r| r.sigma_sq),
                conv: mean(&|r| f64::from(r.conv)),
                f_semantic: mean(&|r| r.f_semantic as f64),
                c_semantic: mean(&|r| r.c_semantic as f64),
                seeds: rs.len(),
                oracle_calls: mean(&|r| r.oracle_calls as f64),
            }
        })
        .collect()
}
