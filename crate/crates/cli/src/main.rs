use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use rldf::agents::{Algorithm, QTable};
use rldf::config::{parse_override, RunConfiguration};
use rldf::grammar::{Grammar, GrammarSpec};
use rldf::harness::{
    build_environment, ndg_config, replay, seed_means, sweep, train_config, write_csv, CellOutcome,
    StatsRow, SweepGrid, SweepOptions,
};
use rldf::rewards::RewardKind;
use rldf::trajectory::{read_trajectories, write_trajectories};
use rldf::{Error, Result};
use serde::Serialize;
use serde_json::Value;

const TRAJECTORIES: &str = "trajectories.ndjson";
const STATISTICS: &str = "statistics.csv";
const QTABLE: &str = "qtable.csv";
const EFFECTIVE: &str = "effective_config.json";

#[derive(Parser)]
#[command(
    name = "rldf",
    version,
    about = "Prompt-lattice search driven by diffusion feedback"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON)
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a dotted config key; applied after --seed, in order
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for every section
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: config output_dir, else "out"]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps; 0 = one per cell, capped by cores
    #[arg(long, default_value_t = 0)]
    parallel: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write the trajectory log, statistics and Q-table
    Train(Common),
    /// Run an agents x rewards x epsilon x seeds grid
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated agents (Q, SARSA, Random)
        #[arg(long, default_value = "Q,Random,SARSA")]
        agents: String,
        /// Comma-separated reward numbers (1 multi, 2 partial, 3 clip)
        #[arg(long, default_value = "1,2,3")]
        rewards: String,
        /// Comma-separated exploration rates
        #[arg(long, default_value = "0.01,0.1")]
        epsilons: String,
        /// Comma-separated seeds [default: --seed, else 0]
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Noisy diffusion gradient from the configured start
    Ndg(Common),
    /// Print the grammar's axes and state count
    DumpGrammar(Common),
    /// Print the prompt for a coordinate vector
    Decode {
        #[command(flatten)]
        common: Common,
        /// One coordinate per axis, e.g. 0,0,0,0
        #[arg(allow_hyphen_values = true, value_delimiter = ',', num_args = 1..)]
        coords: Vec<i64>,
    },
    /// Recompute statistics from a run directory written by `train`
    Replay {
        #[command(flatten)]
        common: Common,
        /// Run directory [default: --out]
        dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(c) => cmd_train(&c),
        Command::Sweep {
            common,
            agents,
            rewards,
            epsilons,
            seeds,
        } => {
            let seeds = match seeds {
                Some(s) => s,
                None => common.seed.unwrap_or(0).to_string(),
            };
            let grid = SweepGrid {
                agents: parse_list(&agents, "agents", parse_agent)?,
                rewards: parse_list(&rewards, "rewards", parse_reward)?,
                epsilons: parse_list(&epsilons, "epsilons", |s| s.parse().ok())?,
                seeds: parse_list(&seeds, "seeds", |s| s.parse().ok())?,
            };
            cmd_sweep(&common, &grid)
        }
        Command::Ndg(c) => cmd_ndg(&c),
        Command::DumpGrammar(c) => cmd_dump_grammar(&c),
        Command::Decode { common, coords } => cmd_decode(&common, &coords),
        Command::Replay { common, dir } => {
            let dir = dir
                .or(common.out.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            cmd_replay(&dir)
        }
    }
}

fn parse_list<T>(raw: &str, field: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            parse(s).ok_or_else(|| Error::config("sweep", field, format!("cannot parse {s:?}")))
        })
        .collect()
}

fn parse_agent(s: &str) -> Option<Algorithm> {
    Algorithm::from_label(s).or_else(|| serde_json::from_value(Value::String(s.to_string())).ok())
}

fn parse_reward(s: &str) -> Option<RewardKind> {
    s.parse()
        .ok()
        .and_then(RewardKind::from_number)
        .or_else(|| serde_json::from_value(Value::String(s.to_string())).ok())
}

fn overrides(c: &Common) -> Result<Vec<(String, String)>> {
    c.set.iter().map(|s| parse_override(s)).collect()
}

fn load(c: &Common) -> Result<RunConfiguration> {
    let path = c
        .config
        .as_ref()
        .ok_or_else(|| Error::ConfigNotFound("no --config given".into()))?;
    RunConfiguration::load(path, c.seed, &overrides(c)?)
}

fn out_dir(c: &Common, config: &RunConfiguration) -> Result<PathBuf> {
    let dir = c
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_effective(dir: &Path, config: &RunConfiguration) -> Result<()> {
    fs::write(dir.join(EFFECTIVE), config.effective()?.to_json_pretty()?)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn cmd_train(c: &Common) -> Result<()> {
    let config = load(c)?;
    let resolved = config.resolve()?;
    let dir = out_dir(c, &config)?;
    write_effective(&dir, &config)?;
    let out = train_config(&config)?;

    let mut log = create(&dir.join(TRAJECTORIES))?;
    write_trajectories(&mut log, &out.trajectories)?;
    log.flush()?;
    let mut q = create(&dir.join(QTABLE))?;
    out.q.write_csv(&resolved.grammar, &mut q)?;
    q.flush()?;
    let rows: Vec<StatsRow> = out
        .statistics
        .iter()
        .map(|s| StatsRow::new(&config, s, out.oracle_calls))
        .collect();
    write_csv(create(&dir.join(STATISTICS))?, &rows)?;

    match &out.statistics {
        Some(s) => println!(
            "train: conv={} d_t={} d_min={} d_max={} oracle_calls={} episodes={} out={}",
            u8::from(s.conv),
            s.d_t,
            s.d_min,
            s.d_max,
            out.oracle_calls,
            out.trajectories.len(),
            dir.display()
        ),
        None => println!(
            "train: no episodes run, oracle_calls={} out={}",
            out.oracle_calls,
            dir.display()
        ),
    }
    Ok(())
}

fn cmd_sweep(c: &Common, grid: &SweepGrid) -> Result<()> {
    grid.validate()?;
    let config = load(c)?;
    let dir = out_dir(c, &config)?;
    write_effective(&dir, &config)?;
    write_json(&dir.join("grid.json"), grid)?;

    let total = grid.cells().len();
    let done = Mutex::new(0usize);
    let progress = |o: &CellOutcome| {
        let mut n = done.lock().unwrap();
        *n += 1;
        let status = match (&o.result, o.resumed) {
            (Ok(_), true) => "resumed".to_string(),
            (Ok(r), false) => format!("ok d_t={} conv={}", r.d_t, r.conv),
            (Err(e), _) => format!("failed: {e}"),
        };
        println!("[{:>3}/{total}] {} {status}", *n, o.cell.key());
    };
    let options = SweepOptions {
        parallel: c.parallel,
        cell_dir: Some(dir.join("cells")),
    };
    let outcomes = sweep(&config, grid, &options, &progress)?;

    let rows: Vec<StatsRow> = outcomes
        .iter()
        .filter_map(|o| o.result.clone().ok())
        .collect();
    write_csv(create(&dir.join(STATISTICS))?, &rows)?;
    write_csv(create(&dir.join("means.csv"))?, &seed_means(&rows))?;
    #[derive(Serialize)]
    struct Failure {
        cell: String,
        error: String,
    }
    let failures: Vec<Failure> = outcomes
        .iter()
        .filter_map(|o| {
            o.result.as_ref().err().map(|e| Failure {
                cell: o.cell.key(),
                error: e.clone(),
            })
        })
        .collect();
    write_csv(create(&dir.join("failures.csv"))?, &failures)?;
    println!(
        "sweep: {} of {total} cells succeeded, {} failed, out={}",
        rows.len(),
        failures.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_ndg(c: &Common) -> Result<()> {
    let config = load(c)?;
    let dir = out_dir(c, &config)?;
    write_effective(&dir, &config)?;
    let (result, calls) = ndg_config(&config)?;
    write_json(&dir.join("ndg.json"), &result)?;
    let status = serde_json::to_value(result.status)?;
    println!(
        "ndg: status={} iterations={} start={} final={} reward={} oracle_calls={calls} out={}",
        status.as_str().unwrap_or_default(),
        result.iterations,
        result.trajectory.start,
        result.final_state,
        result.final_reward,
        dir.display()
    );
    Ok(())
}

fn grammar_for(c: &Common) -> Result<Grammar> {
    match &c.config {
        Some(_) => load(c)?.load_grammar(),
        None => Ok(Grammar::default_grammar()),
    }
}

fn cmd_dump_grammar(c: &Common) -> Result<()> {
    let g = grammar_for(c)?;
    let spec: &GrammarSpec = g.spec();
    for (i, axis) in g.axes().iter().enumerate() {
        println!(
            "axis {i} {} ({} terms): {}",
            axis.name,
            axis.len(),
            axis.vocabulary.join(" | ")
        );
    }
    println!("{}", serde_json::to_string(spec)?);
    println!("states: {}", g.num_states());
    Ok(())
}

fn cmd_decode(c: &Common, coords: &[i64]) -> Result<()> {
    let g = grammar_for(c)?;
    let state = g.state_from_signed(coords)?;
    println!("{}", g.decode(&state)?);
    Ok(())
}

fn cmd_replay(dir: &Path) -> Result<()> {
    let config = RunConfiguration::load(&dir.join(EFFECTIVE), None, &[])?;
    let resolved = config.resolve()?;
    let trajectories = read_trajectories(BufReader::new(File::open(dir.join(TRAJECTORIES))?))?;
    let q = QTable::read_csv(
        &resolved.grammar,
        BufReader::new(File::open(dir.join(QTABLE))?),
    )?;
    let mut env = build_environment(&resolved)?;
    let Some(stats) = replay(&mut env, &trajectories, &q)? else {
        println!("replay: empty log");
        return Ok(());
    };
    let mut row = StatsRow::new(&config, &stats, env.oracle().generations());
    let online = dir.join(STATISTICS);
    if online.exists() {
        let saved = rldf::harness::read_stats_csv(File::open(&online)?)?;
        let matches = saved.first().is_some_and(|s| {
            (s.d_t, s.d_max, s.d_min, s.conv, s.f_semantic, s.c_semantic)
                == (
                    row.d_t,
                    row.d_max,
                    row.d_min,
                    row.conv,
                    row.f_semantic,
                    row.c_semantic,
                )
                && s.rho == row.rho
                && s.sigma_sq == row.sigma_sq
        });
        if !matches {
            return Err(Error::Invariant(format!(
                "replayed statistics differ from {}",
                online.display()
            )));
        }
        // replay only re-observes the final episode; report the online count
        row.oracle_calls = saved[0].oracle_calls;
    }
    let mut out = Vec::new();
    write_csv(&mut out, std::slice::from_ref(&row))?;
    print!("{}", String::from_utf8_lossy(&out));
    println!("replay: statistics match the online run");
    Ok(())
}
