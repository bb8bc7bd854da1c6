//! The newline-delimited JSON client against in-process, TCP and child-process fakes.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Cursor, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use rldf::agents::{AgentConfig, Algorithm};
use rldf::environment::{Environment, EnvironmentConfig};
use rldf::grammar::{EncodedState, Grammar};
use rldf::harness::train;
use rldf::oracle::{
    build_oracle, ExternalConfig, ExternalOracle, FeedbackOracle, OracleConfig, OracleKind,
    SimulatedOracle, Transport,
};
use rldf::rewards::{RewardKind, RewardSpec};
use rldf::{Error, OracleError};
use serde_json::{json, Value};

#[derive(Clone, Default)]
struct SharedBuf(Arc<Mutex<Vec<u8>>>);

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn external(transport: Transport, dim: usize, timeout_secs: f64) -> OracleConfig {
    OracleConfig {
        kind: OracleKind::External,
        seed: 7,
        embedding_dim: dim,
        external: Some(ExternalConfig {
            transport,
            timeout_secs,
            options: None,
        }),
        ..OracleConfig::default()
    }
}

fn sh(script: &str) -> Transport {
    Transport::Command {
        program: "sh".into(),
        args: vec!["-c".into(), script.into()],
    }
}

fn grammar() -> Arc<Grammar> {
    Arc::new(Grammar::default_grammar())
}

fn oracle_err(r: Result<impl std::fmt::Debug, OracleError>) -> OracleError {
    r.expect_err("expected an oracle error")
}

#[test]
fn request_bytes_and_out_of_order_responses() {
    let g = grammar();
    let responses = concat!(
        r#"{"id":1,"objects":["many apple"],"scene":"park","embedding":[0,2]}"#,
        "\n",
        r#"{"id":0,"objects":["one banana","no people"],"scene":"farm","embedding":[3,4]}"#,
        "\n",
    );
    let out = SharedBuf::default();
    let mut config = external(sh("unused"), 2, 5.0);
    config.external.as_mut().unwrap().options = Some(json!({"negative_prompt": ["blurry"]}));
    let mut o = ExternalOracle::from_streams(
        g.clone(),
        &config,
        Box::new(Cursor::new(responses)),
        Box::new(out.clone()),
    )
    .unwrap();

    let a = o.observe(&EncodedState::new(vec![0, 0, 0, 0])).unwrap();
    assert_eq!(a.scene, "farm");
    assert_eq!(
        a.objects.iter().cloned().collect::<Vec<_>>(),
        ["no people", "one banana"]
    );
    assert_eq!(a.embedding, vec![0.6, 0.8]);
    let b = o.observe(&EncodedState::new(vec![1, 1, 2, 2])).unwrap();
    assert_eq!(b.scene, "park");
    assert_eq!(b.embedding, vec![0.0, 1.0]);

    let sent = String::from_utf8(out.0.lock().unwrap().clone()).unwrap();
    assert_eq!(
        sent,
        concat!(
            r#"{"id":0,"prompt":"a photo of one banana and no people in farm","seed":7,"options":{"negative_prompt":["blurry"]}}"#,
            "\n",
            r#"{"id":1,"prompt":"a photo of many apple and many people in park","seed":7,"options":{"negative_prompt":["blurry"]}}"#,
            "\n",
        )
    );
}

#[test]
fn child_process_backend() {
    // answers every request with the same observation, echoing the id
    let script = r#"exec sed -u 's/^{"id":\([0-9]*\),.*$/{"id":\1,"objects":["one banana"],"scene":"farm","embedding":[3,4]}/'"#;
    let mut o = build_oracle(grammar(), &external(sh(script), 2, 10.0)).unwrap();
    for coords in [[0, 0, 0, 0], [1, 3, 2, 9], [0, 7, 1, 4]] {
        let obs = o.observe(&EncodedState::new(coords.to_vec())).unwrap();
        assert_eq!(obs.scene, "farm");
        assert_eq!(obs.embedding, vec![0.6, 0.8]);
    }
    // goal semantics come from the grammar, the embedding from the backend
    let gt = o
        .target_semantics(&EncodedState::new(vec![1, 1, 2, 2]))
        .unwrap();
    assert_eq!(gt.scene, "park");
    assert!(gt.objects.contains("many apple") && gt.objects.contains("many people"));
    assert_eq!(gt.embedding, vec![0.6, 0.8]);
}

#[test]
fn silent_backend_times_out() {
    let mut o = build_oracle(grammar(), &external(sh("exec sleep 30"), 2, 0.3)).unwrap();
    let err = oracle_err(o.observe(&EncodedState::new(vec![0, 0, 0, 0])));
    assert!(matches!(err, OracleError::Timeout { id: 0, .. }), "{err}");
    assert_eq!(Error::from(err).exit_code(), 3);
}

#[test]
fn backend_errors_are_reported() {
    let script = r#"exec sed -u 's/^{"id":\([0-9]*\),.*$/{"id":\1,"error":"model not loaded"}/'"#;
    let mut o = build_oracle(grammar(), &external(sh(script), 2, 10.0)).unwrap();
    let err = oracle_err(o.observe(&EncodedState::new(vec![0, 0, 0, 0])));
    assert!(
        matches!(&err, OracleError::Backend { id: 0, message } if message == "model not loaded"),
        "{err}"
    );
}

#[test]
fn malformed_responses_are_rejected() {
    let cases = [
        "not json",
        r#"{"id":0,"objects":[],"scene":"farm"}"#,
        r#"{"id":0,"objects":[],"scene":"farm","embedding":[1,2,3]}"#,
        r#"{"id":0,"objects":[],"scene":"farm","embedding":[0,0]}"#,
    ];
    for raw in cases {
        let input = format!("{raw}\n");
        let mut o = ExternalOracle::from_streams(
            grammar(),
            &external(sh("unused"), 2, 5.0),
            Box::new(Cursor::new(input)),
            Box::new(SharedBuf::default()),
        )
        .unwrap();
        let err = oracle_err(o.observe(&EncodedState::new(vec![0, 0, 0, 0])));
        assert!(matches!(err, OracleError::Malformed { .. }), "{raw}: {err}");
    }
}

#[test]
fn closed_backend_disconnects() {
    let mut o = ExternalOracle::from_streams(
        grammar(),
        &external(sh("unused"), 2, 5.0),
        Box::new(Cursor::new("")),
        Box::new(SharedBuf::default()),
    )
    .unwrap();
    let err = oracle_err(o.observe(&EncodedState::new(vec![0, 0, 0, 0])));
    assert!(matches!(err, OracleError::Disconnected), "{err}");
}

/// Serves the simulated oracle's observations over TCP, keyed by prompt.
fn spawn_simulated_server(g: Arc<Grammar>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let address = listener.local_addr().unwrap().to_string();
    std::thread::spawn(move || {
        let sim = SimulatedOracle::new(g.clone(), OracleConfig::noiseless()).unwrap();
        let by_prompt: HashMap<String, EncodedState> =
            g.states().map(|s| (g.decode(&s).unwrap().0, s)).collect();
        let (stream, _) = listener.accept().unwrap();
        stream.set_nodelay(true).unwrap();
        let mut out = stream.try_clone().unwrap();
        for line in BufReader::new(stream).lines() {
            let Ok(line) = line else { break };
            let req: Value = serde_json::from_str(&line).unwrap();
            let obs = sim.noiseless(&by_prompt[req["prompt"].as_str().unwrap()]);
            let resp = json!({"id": req["id"], "objects": obs.objects, "scene": obs.scene, "embedding": obs.embedding});
            if writeln!(out, "{resp}").is_err() {
                break;
            }
        }
    });
    address
}

#[test]
fn tcp_backend_trains_like_the_simulator() {
    let g = grammar();
    let address = spawn_simulated_server(g.clone());
    let remote = build_oracle(g.clone(), &external(Transport::Tcp { address }, 64, 10.0)).unwrap();
    let local = SimulatedOracle::new(g.clone(), OracleConfig::noiseless()).unwrap();
    let env_config = EnvironmentConfig::new(EncodedState::new(vec![0, 2, 1, 3]));
    let agent = AgentConfig {
        episodes: 20,
        ..AgentConfig::new(Algorithm::QLearning)
    };
    let spec = RewardSpec::new(RewardKind::MultiSemantic);

    let mut a = Environment::new(g.clone(), env_config.clone(), remote, spec.clone()).unwrap();
    let mut b = Environment::new(g, env_config, local, spec).unwrap();
    let ra = train(&mut a, &agent, false).unwrap();
    let rb = train(&mut b, &agent, false).unwrap();
    assert_eq!(ra.trajectories, rb.trajectories);
    assert_eq!(ra.statistics, rb.statistics);
    assert_eq!(ra.oracle_calls, rb.oracle_calls);
}
