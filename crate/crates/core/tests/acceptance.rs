//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rldf::agents::{
    shortest_path_length, value_iteration, AgentConfig, Algorithm, LearningRate, QTable,
    TabularModel,
};
use rldf::config::RunConfiguration;
use rldf::environment::{Environment, EnvironmentConfig};
use rldf::grammar::{semantic_distance, EncodedState, Grammar, GrammarSpec, SemanticAxis};
use rldf::harness::{
    build_environment, greedy_steps_to_goal, probe_start, replay, run_cell, sweep, train,
    train_config, write_csv, StatsRow, SweepCell, SweepGrid, SweepOptions, STATS_COLUMNS,
};
use rldf::ndg::{ndg_start, run_ndg, NdgConfig, NdgStatus};
use rldf::oracle::{cosine, OracleConfig, SemanticObservation, SimulatedOracle};
use rldf::rewards::{
    clip_reward, multi_semantic_reward, partial_semantic_reward, GroundTruth, RewardKind,
    RewardSpec,
};
use rldf::seeding;
use rldf::trajectory::{read_trajectories, write_trajectories};
use serde_json::json;
use statrs::distribution::{Binomial, DiscreteCDF};

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn line_env(n: usize, terminal: usize) -> Environment<SimulatedOracle> {
    let g = Arc::new(
        Grammar::from_spec(GrammarSpec::from_axes(vec![SemanticAxis::new(
            "scene",
            (0..n).map(|i| format!("s{i}")),
        )]))
        .unwrap(),
    );
    let oracle = SimulatedOracle::new(g.clone(), OracleConfig::noiseless()).unwrap();
    let mut config = EnvironmentConfig::new(EncodedState::new(vec![terminal]));
    config.terminal_stops_episode = true;
    Environment::new(
        g,
        config,
        oracle,
        RewardSpec::new(RewardKind::PartialSemantic),
    )
    .unwrap()
}

fn line_q_sup(learning_rate: LearningRate, seed: u64) -> f64 {
    let mut env = line_env(5, 4);
    let model = TabularModel::from_environment(&mut env).unwrap();
    let reference = value_iteration(&model, 0.9, 1e-12).unwrap();
    let agent = AgentConfig {
        epsilon: 0.1,
        discount: 0.9,
        learning_rate,
        episodes: 2000,
        seed,
        ..AgentConfig::new(Algorithm::QLearning)
    };
    let out = train(&mut env, &agent, false).unwrap();
    // the absorbing terminal row is never bootstrapped from, so it is excluded
    let mut sup: f64 = 0.0;
    for s in (0..model.num_states).filter(|&s| !model.absorbing[s]) {
        for a in 0..model.num_actions {
            sup = sup.max((out.q.get(s, a) - reference.q(s, a)).abs());
        }
    }
    sup
}

fn q_convergence() -> Outcome {
    let sups: Vec<f64> = (0..5)
        .map(|seed| line_q_sup(LearningRate::Polynomial { omega: 0.6 }, seed))
        .collect();
    let worst = sups.iter().cloned().fold(0.0, f64::max);
    let harmonic = line_q_sup(LearningRate::VisitCount, 0);
    outcome(
        worst <= 1e-2,
        format!("max over 5 seeds sup |Q - q*| = {worst:.2e} with alpha = (1+n)^-0.6 (tol 1e-2); alpha = 1/(1+n) gives {harmonic:.2e}"),
    )
}

fn default_config(kind: &str, episodes: usize) -> RunConfiguration {
    RunConfiguration::from_value(
        json!({
            "environment": {"terminal": {"frequency": "one", "noun": "banana", "density": "no", "scene": "farm"}},
            "reward": {"kind": kind},
            "agent": {"algorithm": "q_learning", "epsilon": 0.1, "learning_rate": {"schedule": "visit_count"}, "episodes": episodes}
        }),
        None,
        &[],
    )
    .unwrap()
}

fn greedy_hits(agent: serde_json::Value, max_steps: usize) -> usize {
    let config = RunConfiguration::from_value(
        json!({
            "environment": {"terminal": {"frequency": "one", "noun": "banana", "density": "no", "scene": "farm"}, "max_steps_per_episode": max_steps},
            "reward": {"kind": "multi_semantic"},
            "agent": agent
        }),
        None,
        &[],
    )
    .unwrap();
    let resolved = config.resolve().unwrap();
    let mut env = build_environment(&resolved).unwrap();
    let out = train(&mut env, &resolved.agent, false).unwrap();
    let g = &resolved.grammar;
    let terminal = &resolved.environment.terminal_state;
    (0..30u64)
        .filter(|&k| {
            let start = probe_start(g, &resolved.environment, k).unwrap();
            let sp = shortest_path_length(g, &start, terminal).unwrap() as usize;
            greedy_steps_to_goal(&out.q, g, &start, terminal, 4 * sp + 10) == Some(sp)
        })
        .count()
}

fn greedy_optimality() -> Outcome {
    // uniform behaviour policy, greedy target policy
    let hits = greedy_hits(
        json!({"algorithm": "q_learning", "epsilon": 1.0, "learning_rate": {"schedule": "polynomial", "omega": 0.6}, "episodes": 500}),
        500,
    );
    let on_policy = greedy_hits(
        json!({"algorithm": "q_learning", "epsilon": 0.1, "learning_rate": {"schedule": "visit_count"}, "episodes": 500}),
        100,
    );
    outcome(
        hits >= 28,
        format!("{hits}/30 probes on a shortest path (need 28) with epsilon 1.0, 500 steps/episode; epsilon 0.1, 100 steps/episode gives {on_policy}/30"),
    )
}

fn epsilon_study() -> Outcome {
    let base = default_config("partial_semantic", 500);
    let cell = |agent, seed| SweepCell {
        agent,
        reward: RewardKind::PartialSemantic,
        epsilon: 0.1,
        seed,
    };
    let (mut wins, mut losses) = (0u64, 0u64);
    let (mut q_sum, mut r_sum) = (0.0, 0.0);
    for seed in 0..20 {
        let q = run_cell(&base, &cell(Algorithm::QLearning, seed))
            .unwrap()
            .d_t;
        let r = run_cell(&base, &cell(Algorithm::Random, seed)).unwrap().d_t;
        q_sum += q as f64;
        r_sum += r as f64;
        match q.cmp(&r) {
            std::cmp::Ordering::Less => wins += 1,
            std::cmp::Ordering::Greater => losses += 1,
            std::cmp::Ordering::Equal => {}
        }
    }
    let n = wins + losses;
    // one-sided: P(X >= wins) under Binomial(n, 1/2)
    let p = if n == 0 || wins == 0 {
        1.0
    } else {
        1.0 - Binomial::new(0.5, n).unwrap().cdf(wins - 1)
    };
    let (qm, rm) = (q_sum / 20.0, r_sum / 20.0);
    outcome(
        qm <= rm && p < 0.05,
        format!("mean d_t Q {qm:.2} vs Random {rm:.2}; sign test {wins}-{losses}, p = {p:.2e}"),
    )
}

fn reward_suite() -> Outcome {
    let tol = 1e-9;
    let spec = RewardSpec::new(RewardKind::MultiSemantic);
    let obs = |objects: &[&str], scene: &str, e: Vec<f64>| SemanticObservation {
        objects: objects.iter().map(|s| s.to_string()).collect(),
        scene: scene.into(),
        embedding: e,
    };
    let gt = GroundTruth::strict(&obs(&["one banana", "no people"], "farm", vec![1.0, 0.0]));
    let mut checks = vec![
        (
            partial_semantic_reward(&obs(&[], "farm", vec![1.0, 0.0]), &gt, &spec),
            0.5,
        ),
        (
            partial_semantic_reward(&obs(&[], "beach", vec![1.0, 0.0]), &gt, &spec),
            -0.5,
        ),
        (
            multi_semantic_reward(
                &obs(&["one banana", "no people"], "farm", vec![1.0, 0.0]),
                &gt,
                &spec,
            ),
            2.5,
        ),
        (
            multi_semantic_reward(&obs(&["one banana"], "beach", vec![1.0, 0.0]), &gt, &spec),
            0.5,
        ),
        (
            multi_semantic_reward(&obs(&[], "beach", vec![1.0, 0.0]), &gt, &spec),
            -0.5,
        ),
        (
            clip_reward(&obs(&[], "farm", vec![1.0, 0.0]), &gt).unwrap(),
            1.0,
        ),
        (
            clip_reward(&obs(&[], "farm", vec![0.0, 3.0]), &gt).unwrap(),
            0.0,
        ),
        (
            clip_reward(&obs(&[], "farm", vec![1.0, 1.0]), &gt).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
        ),
    ];
    checks.push((cosine(&[2.0, 0.0], &[5.0, 5.0]).unwrap(), 2f64.sqrt() / 2.0));
    let worst = checks
        .iter()
        .map(|(got, want)| (got - want).abs())
        .fold(0.0, f64::max);
    outcome(
        worst <= tol,
        format!(
            "{} values, worst error {worst:.1e} (tol 1e-9)",
            checks.len()
        ),
    )
}

fn grammar_round_trip() -> Outcome {
    let two = Grammar::from_spec(GrammarSpec::from_axes(vec![
        SemanticAxis::new("noun", ["banana", "apple", "orange", "monkey"]),
        SemanticAxis::new("scene", ["farm", "park", "beach"]),
    ]))
    .unwrap();
    let mut failures = 0;
    let mut prompts = HashSet::new();
    for s in two.states() {
        let terms = two.semantics(&s).unwrap();
        failures += usize::from(two.encode(&terms).unwrap() != s);
        failures += usize::from(!prompts.insert(two.decode(&s).unwrap().0));
    }
    let g = Grammar::default_grammar();
    let mut rng = seeding::rng(&[0xacce]);
    for _ in 0..10_000 {
        let s = g.state_at(rng.gen_range(0..g.num_states()));
        let terms: BTreeMap<String, String> = g.semantics(&s).unwrap();
        failures += usize::from(g.encode(&terms).unwrap() != s);
    }
    outcome(
        failures == 0,
        format!(
            "{} exhaustive + 10000 random states, {failures} failures",
            two.num_states()
        ),
    )
}

fn locality_ordering() -> Outcome {
    let g = Grammar::default_grammar();
    let at = |scene: &str| {
        let mut t = g.semantics(&g.state_at(0)).unwrap();
        t.insert("scene".into(), scene.into());
        g.encode(&t).unwrap()
    };
    let park = at("park");
    let near = semantic_distance(&park, &at("vegetable garden")).unwrap();
    let far = semantic_distance(&park, &at("train station platform")).unwrap();
    outcome(
        near < far,
        format!("d(park, vegetable garden) = {near} < d(park, train station platform) = {far}"),
    )
}

fn ndg() -> Outcome {
    let g = Arc::new(Grammar::default_grammar());
    let smooth = OracleConfig {
        locality_bandwidth: 10.0,
        embedding_dim: 128,
        ..OracleConfig::noiseless()
    };
    let goal = EncodedState::new(vec![1, 4, 1, 6]);
    let mut env = Environment::new(
        g.clone(),
        EnvironmentConfig::new(goal.clone()),
        SimulatedOracle::new(g.clone(), smooth).unwrap(),
        RewardSpec::new(RewardKind::Clip),
    )
    .unwrap();
    let mut smooth_ok = 0;
    for seed in 0..20 {
        let cfg = NdgConfig {
            seed,
            ..NdgConfig::default()
        };
        let start = ndg_start(&env, &cfg).unwrap();
        let r = run_ndg(&mut env, &start, &cfg).unwrap();
        let sp = semantic_distance(&start, &goal).unwrap() as usize;
        smooth_ok +=
            usize::from(r.status == NdgStatus::ReachedGoal && r.trajectory.steps.len() == sp);
    }

    let flat = Arc::new(
        Grammar::from_spec(GrammarSpec::from_axes(vec![
            SemanticAxis::new("frequency", ["one", "many"]),
            SemanticAxis::new(
                "noun",
                ["banana", "apple", "orange", "monkey", "dog", "cat"],
            ),
            SemanticAxis::new("scene", ["farm", "vegetable garden", "park"]),
        ]))
        .unwrap(),
    );
    let goal = EncodedState::new(vec![0, 2, 1]);
    let mut env = Environment::new(
        flat.clone(),
        EnvironmentConfig::new(goal.clone()),
        SimulatedOracle::new(flat.clone(), OracleConfig::noiseless()).unwrap(),
        RewardSpec::new(RewardKind::PartialSemantic),
    )
    .unwrap();
    let mut rng = seeding::rng(&[0x91a7]);
    let mut flat_ok = 0;
    for _ in 0..20 {
        // object coordinates off the goal so the flat axes are actually tested
        let start = EncodedState::new(vec![1, rng.gen_range(3..6), rng.gen_range(0..3)]);
        let r = run_ndg(&mut env, &start, &NdgConfig::default()).unwrap();
        let objects_kept = r.final_state.coords()[..2] == start.coords()[..2];
        flat_ok += usize::from(
            r.status == NdgStatus::Plateau && r.final_state.coords()[2] == 1 && objects_kept,
        );
    }
    outcome(smooth_ok == 20 && flat_ok == 20, format!("smooth CLIP {smooth_ok}/20 on L1-length paths, flat objects {flat_ok}/20 plateau at the goal scene"))
}

fn determinism() -> Outcome {
    let config = default_config("multi_semantic", 50).with_seed(3);
    let csv = || {
        let out = train_config(&config).unwrap();
        let row = StatsRow::new(&config, out.statistics.as_ref().unwrap(), out.oracle_calls);
        let mut buf = Vec::new();
        write_csv(&mut buf, &[row]).unwrap();
        (buf, out)
    };
    let (a, out) = csv();
    let (b, _) = csv();

    let resolved = config.resolve().unwrap();
    let mut log = Vec::new();
    write_trajectories(&mut log, &out.trajectories).unwrap();
    let mut qcsv = Vec::new();
    out.q.write_csv(&resolved.grammar, &mut qcsv).unwrap();
    let logged = read_trajectories(&log[..]).unwrap();
    let q = QTable::read_csv(&resolved.grammar, &qcsv[..]).unwrap();
    let mut fresh = build_environment(&resolved).unwrap();
    let replayed = replay(&mut fresh, &logged, &q).unwrap();
    let same_csv = a == b;
    let same_stats = replayed == out.statistics;
    outcome(
        same_csv && same_stats,
        format!("byte-identical CSV: {same_csv}; replay equals online statistics: {same_stats}"),
    )
}

fn sweep_shape() -> Outcome {
    let base = default_config("multi_semantic", 20);
    let outcomes = sweep(
        &base,
        &SweepGrid::standard(vec![0]),
        &SweepOptions::default(),
        &|_| {},
    )
    .unwrap();
    let rows: Vec<StatsRow> = outcomes.into_iter().filter_map(|o| o.result.ok()).collect();
    let mut buf = Vec::new();
    write_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap_or("").split(',').collect();
    let data_rows = text.lines().count().saturating_sub(1);
    let columns_ok = header.len() >= 11 && header[..11] == STATS_COLUMNS;
    outcome(
        data_rows == 18 && columns_ok,
        format!("{data_rows} rows; header {}", header.join(",")),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("Q-convergence vs value iteration", q_convergence),
        (
            "greedy optimality on the 480-state lattice",
            greedy_optimality,
        ),
        (
            "epsilon study: Q beats Random on final distance",
            epsilon_study,
        ),
        ("reward unit suite", reward_suite),
        ("grammar round trip", grammar_round_trip),
        ("locality ordering", locality_ordering),
        ("NDG smooth and flat landscapes", ndg),
        ("determinism and replay", determinism),
        ("sweep shape", sweep_shape),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "{} {name}: {} [{:.2}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
