//! Diffusion feedback: what a recognizer stack reports about the image
//! generated at a lattice state.
//!
//! [`SimulatedOracle`] stands in for the generator and recognizers with a
//! seeded, pure model of the same observation. [`ExternalOracle`] speaks
//! newline-delimited JSON to a real backend over a child process or TCP.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, OracleError, Result};
use crate::grammar::{EncodedState, Grammar};
use crate::seeding::{self, stream};

/// Recognized semantics of one generated image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticObservation {
    pub objects: BTreeSet<String>,
    pub scene: String,
    /// Unit-norm image embedding.
    pub embedding: Vec<f64>,
}

pub trait FeedbackOracle {
    fn observe(&mut self, state: &EncodedState) -> Result<SemanticObservation, OracleError>;

    /// Ground-truth semantics of the goal image.
    fn target_semantics(
        &mut self,
        terminal: &EncodedState,
    ) -> Result<SemanticObservation, OracleError>;
}

impl<O: FeedbackOracle + ?Sized> FeedbackOracle for Box<O> {
    fn observe(&mut self, state: &EncodedState) -> Result<SemanticObservation, OracleError> {
        (**self).observe(state)
    }

    fn target_semantics(
        &mut self,
        terminal: &EncodedState,
    ) -> Result<SemanticObservation, OracleError> {
        (**self).target_semantics(terminal)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    #[default]
    Simulated,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    /// Spawn `program args...` and talk over its stdin/stdout.
    Command {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
    Tcp {
        address: String,
    },
}

fn default_timeout() -> f64 {
    120.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    pub transport: Transport,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Passed through untouched in every request (negative prompts, scheduler settings, ...).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<serde_json::Value>,
}

fn default_embedding_dim() -> usize {
    64
}

fn default_bandwidth() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default)]
    pub kind: OracleKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise_drop_prob: f64,
    #[serde(default)]
    pub noise_swap_prob: f64,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_bandwidth")]
    pub locality_bandwidth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalConfig>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            kind: OracleKind::Simulated,
            seed: 0,
            noise_drop_prob: 0.0,
            noise_swap_prob: 0.0,
            embedding_dim: default_embedding_dim(),
            locality_bandwidth: default_bandwidth(),
            external: None,
        }
    }
}

impl OracleConfig {
    pub fn noiseless() -> Self {
        OracleConfig::default()
    }

    pub fn validate(&self) -> Result<()> {
        for (field, p) in [
            ("noise_drop_prob", self.noise_drop_prob),
            ("noise_swap_prob", self.noise_swap_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(
                    "oracle",
                    field,
                    format!("{p} is not a probability"),
                ));
            }
        }
        if self.embedding_dim < 2 {
            return Err(Error::config(
                "oracle",
                "embedding_dim",
                "must be at least 2",
            ));
        }
        if !self.locality_bandwidth.is_finite() || self.locality_bandwidth < 0.0 {
            return Err(Error::config(
                "oracle",
                "locality_bandwidth",
                "must be a finite non-negative number",
            ));
        }
        match (self.kind, &self.external) {
            (OracleKind::External, None) => Err(Error::config(
                "oracle",
                "external",
                "required when kind is external",
            )),
            (OracleKind::External, Some(ext))
                if ext.timeout_secs.is_nan() || ext.timeout_secs <= 0.0 =>
            {
                Err(Error::config(
                    "oracle",
                    "external.timeout_secs",
                    "must be positive",
                ))
            }
            _ => Ok(()),
        }
    }
}

fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

/// Feature layout for the locality-smoothed embedding. Each axis owns a
/// block of `n + 2 * pad` coordinates; term `k` is a triangular bump centred
/// on slot `pad + k`, so every term vector has the same norm and the overlap
/// of two terms depends only on their index gap.
#[derive(Clone, Debug)]
pub struct EmbeddingLayout {
    offsets: Vec<usize>,
    pad: usize,
    weights: Vec<f64>,
    dim: usize,
}

impl EmbeddingLayout {
    pub fn new(grammar: &Grammar, bandwidth: f64) -> Self {
        let pad = bandwidth.ceil() as usize;
        // w(t) = max(0, 1 - |t| / (b + 1)); b = 0 gives a one-hot indicator
        let weights = (0..=pad)
            .map(|t| (1.0 - t as f64 / (bandwidth + 1.0)).max(0.0))
            .collect();
        let mut offsets = Vec::with_capacity(grammar.num_axes());
        let mut dim = 0;
        for axis in grammar.axes() {
            offsets.push(dim);
            dim += axis.len() + 2 * pad;
        }
        EmbeddingLayout {
            offsets,
            pad,
            weights,
            dim,
        }
    }

    /// Number of features the layout needs; the configured dimension must be at least this.
    pub fn required_dim(&self) -> usize {
        self.dim
    }

    pub fn embed(&self, coords: &[usize], dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        for (axis, &c) in coords.iter().enumerate() {
            let centre = self.offsets[axis] + self.pad + c;
            for (t, &w) in self.weights.iter().enumerate() {
                v[centre + t] += w;
                if t > 0 {
                    v[centre - t] += w;
                }
            }
        }
        normalize(&mut v);
        v
    }
}

/// Seeded stand-in for generator + recognizers.
#[derive(Clone, Debug)]
pub struct SimulatedOracle {
    grammar: Arc<Grammar>,
    config: OracleConfig,
    layout: EmbeddingLayout,
}

impl SimulatedOracle {
    pub fn new(grammar: Arc<Grammar>, config: OracleConfig) -> Result<Self> {
        config.validate()?;
        let layout = EmbeddingLayout::new(&grammar, config.locality_bandwidth);
        if layout.required_dim() > config.embedding_dim {
            return Err(Error::config(
                "oracle",
                "embedding_dim",
                format!(
                    "{} is too small for this grammar at locality_bandwidth {}; need at least {}",
                    config.embedding_dim,
                    config.locality_bandwidth,
                    layout.required_dim()
                ),
            ));
        }
        Ok(SimulatedOracle {
            grammar,
            config,
            layout,
        })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn grammar(&self) -> &Arc<Grammar> {
        &self.grammar
    }

    pub fn embedding(&self, coords: &[usize]) -> Vec<f64> {
        self.layout.embed(coords, self.config.embedding_dim)
    }

    pub fn noiseless(&self, state: &EncodedState) -> SemanticObservation {
        SemanticObservation {
            objects: self.grammar.object_terms(state).into_iter().collect(),
            scene: self
                .grammar
                .scene_term(state)
                .unwrap_or_default()
                .to_string(),
            embedding: self.embedding(state.coords()),
        }
    }

    /// Pure function of `(seed, state)`.
    pub fn observe_state(&self, state: &EncodedState) -> SemanticObservation {
        let mut rng = seeding::rng(&[
            stream::ORACLE,
            self.config.seed,
            seeding::mix(&state.coords().iter().map(|&c| c as u64).collect::<Vec<_>>()),
        ]);
        let mut coords = state.coords().to_vec();

        // scene confusion happens in the image, so it also shifts the embedding
        if let Some(scene) = self.grammar.scene_axis() {
            let size = self.grammar.axes()[scene].len();
            if rng.gen_bool(self.config.noise_swap_prob) && size > 1 {
                let c = coords[scene];
                coords[scene] = if c == 0 {
                    1
                } else if c + 1 == size {
                    c - 1
                } else if rng.gen_bool(0.5) {
                    c + 1
                } else {
                    c - 1
                };
            }
        }
        let shown = EncodedState::new(coords);

        // missed detections only affect the recognizer output
        let objects = self
            .grammar
            .object_terms(&shown)
            .into_iter()
            .filter(|_| !rng.gen_bool(self.config.noise_drop_prob))
            .collect();

        SemanticObservation {
            objects,
            scene: self
                .grammar
                .scene_term(&shown)
                .unwrap_or_default()
                .to_string(),
            embedding: self.embedding(shown.coords()),
        }
    }
}

impl FeedbackOracle for SimulatedOracle {
    fn observe(&mut self, state: &EncodedState) -> Result<SemanticObservation, OracleError> {
        Ok(self.observe_state(state))
    }

    fn target_semantics(
        &mut self,
        terminal: &EncodedState,
    ) -> Result<SemanticObservation, OracleError> {
        Ok(self.noiseless(terminal))
    }
}

/// Memoizes one observation per state, mirroring fixed-seed generation, and
/// counts how often the backend was actually asked.
pub struct CachedOracle<O> {
    inner: O,
    cache: HashMap<EncodedState, SemanticObservation>,
    requests: u64,
    generations: u64,
}

impl<O: FeedbackOracle> CachedOracle<O> {
    pub fn new(inner: O) -> Self {
        CachedOracle {
            inner,
            cache: HashMap::new(),
            requests: 0,
            generations: 0,
        }
    }

    /// Observations requested, including cache hits.
    pub fn requests(&self) -> u64 {
        self.requests
    }

    /// Backend invocations (cache misses).
    pub fn generations(&self) -> u64 {
        self.generations
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: FeedbackOracle> FeedbackOracle for CachedOracle<O> {
    fn observe(&mut self, state: &EncodedState) -> Result<SemanticObservation, OracleError> {
        self.requests += 1;
        if let Some(obs) = self.cache.get(state) {
            return Ok(obs.clone());
        }
        let obs = self.inner.observe(state)?;
        self.generations += 1;
        self.cache.insert(state.clone(), obs.clone());
        Ok(obs)
    }

    fn target_semantics(
        &mut self,
        terminal: &EncodedState,
    ) -> Result<SemanticObservation, OracleError> {
        self.inner.target_semantics(terminal)
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    id: u64,
    prompt: &'a str,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    options: Option<&'a serde_json::Value>,
}

#[derive(Deserialize)]
struct WireId {
    id: u64,
}

#[derive(Deserialize)]
struct WireResponse {
    id: u64,
    #[serde(default)]
    objects: Option<Vec<String>>,
    #[serde(default)]
    scene: Option<String>,
    #[serde(default)]
    embedding: Option<Vec<f64>>,
    #[serde(default)]
    error: Option<String>,
}

/// Client for a real feedback backend.
///
/// One request is in flight at a time; responses are matched by id, and
/// stray responses for other ids are buffered.
pub struct ExternalOracle {
    grammar: Arc<Grammar>,
    seed: u64,
    dim: usize,
    timeout: Duration,
    options: Option<serde_json::Value>,
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    stash: HashMap<u64, String>,
    next_id: u64,
    child: Option<Child>,
}

impl ExternalOracle {
    pub fn connect(grammar: Arc<Grammar>, config: &OracleConfig) -> Result<Self> {
        config.validate()?;
        let ext = config
            .external
            .as_ref()
            .ok_or_else(|| Error::config("oracle", "external", "missing external section"))?;
        let (reader, writer, child): (Box<dyn Read + Send>, Box<dyn Write + Send>, Option<Child>) =
            match &ext.transport {
                Transport::Command { program, args } => {
                    let mut child = Command::new(program)
                        .args(args)
                        .stdin(Stdio::piped())
                        .stdout(Stdio::piped())
                        .stderr(Stdio::inherit())
                        .spawn()
                        .map_err(OracleError::Transport)?;
                    let stdin = child.stdin.take().expect("piped stdin");
                    let stdout = child.stdout.take().expect("piped stdout");
                    (Box::new(stdout), Box::new(stdin), Some(child))
                }
                Transport::Tcp { address } => {
                    let stream = TcpStream::connect(address).map_err(OracleError::Transport)?;
                    stream.set_nodelay(true).map_err(OracleError::Transport)?;
                    let read_half = stream.try_clone().map_err(OracleError::Transport)?;
                    (Box::new(read_half), Box::new(stream), None)
                }
            };
        let mut oracle = Self::from_streams(grammar, config, reader, writer)?;
        oracle.child = child;
        Ok(oracle)
    }

    pub fn from_streams(
        grammar: Arc<Grammar>,
        config: &OracleConfig,
        reader: Box<dyn Read + Send>,
        writer: Box<dyn Write + Send>,
    ) -> Result<Self> {
        let ext = config.external.as_ref();
        let timeout = Duration::from_secs_f64(ext.map_or(default_timeout(), |e| e.timeout_secs));
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(ExternalOracle {
            grammar,
            seed: config.seed,
            dim: config.embedding_dim,
            timeout,
            options: ext.and_then(|e| e.options.clone()),
            writer,
            lines: rx,
            stash: HashMap::new(),
            next_id: 0,
            child: None,
        })
    }

    fn send(&mut self, prompt: &str) -> Result<u64, OracleError> {
        let id = self.next_id;
        self.next_id += 1;
        let request = WireRequest {
            id,
            prompt,
            seed: self.seed,
            options: self.options.as_ref(),
        };
        let mut line = serde_json::to_string(&request).expect("request serializes");
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        Ok(id)
    }

    fn wait_for(&mut self, id: u64) -> Result<String, OracleError> {
        if let Some(raw) = self.stash.remove(&id) {
            return Ok(raw);
        }
        let deadline = Instant::now() + self.timeout;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let line = match self.lines.recv_timeout(remaining) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(OracleError::Transport(e)),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(OracleError::Timeout {
                        id,
                        secs: self.timeout.as_secs_f64(),
                    })
                }
                Err(RecvTimeoutError::Disconnected) => return Err(OracleError::Disconnected),
            };
            if line.trim().is_empty() {
                continue;
            }
            let got = serde_json::from_str::<WireId>(&line)
                .map_err(|e| OracleError::Malformed {
                    reason: e.to_string(),
                    raw: line.clone(),
                })?
                .id;
            if got == id {
                return Ok(line);
            }
            self.stash.insert(got, line);
        }
    }

    fn parse(&self, raw: String) -> Result<SemanticObservation, OracleError> {
        let malformed = |reason: String| OracleError::Malformed {
            reason,
            raw: raw.clone(),
        };
        let resp: WireResponse =
            serde_json::from_str(&raw).map_err(|e| malformed(e.to_string()))?;
        if let Some(message) = resp.error {
            return Err(OracleError::Backend {
                id: resp.id,
                message,
            });
        }
        let objects = resp
            .objects
            .ok_or_else(|| malformed("missing `objects`".into()))?;
        let scene = resp
            .scene
            .ok_or_else(|| malformed("missing `scene`".into()))?;
        let mut embedding = resp
            .embedding
            .ok_or_else(|| malformed("missing `embedding`".into()))?;
        if embedding.len() != self.dim {
            return Err(malformed(format!(
                "embedding has {} entries, expected {}",
                embedding.len(),
                self.dim
            )));
        }
        if !normalize(&mut embedding) {
            return Err(malformed("embedding has zero or non-finite norm".into()));
        }
        Ok(SemanticObservation {
            objects: objects.into_iter().collect(),
            scene,
            embedding,
        })
    }
}

impl FeedbackOracle for ExternalOracle {
    fn observe(&mut self, state: &EncodedState) -> Result<SemanticObservation, OracleError> {
        let prompt = self
            .grammar
            .decode(state)
            .map_err(|e| OracleError::Malformed {
                reason: "state does not decode".into(),
                raw: e.to_string(),
            })?;
        let id = self.send(prompt.as_str())?;
        let raw = self.wait_for(id)?;
        self.parse(raw)
    }

    /// Objects and scene come from the grammar; only the embedding is the backend's.
    fn target_semantics(
        &mut self,
        terminal: &EncodedState,
    ) -> Result<SemanticObservation, OracleError> {
        let observed = self.observe(terminal)?;
        Ok(SemanticObservation {
            objects: self.grammar.object_terms(terminal).into_iter().collect(),
            scene: self
                .grammar
                .scene_term(terminal)
                .unwrap_or_default()
                .to_string(),
            embedding: observed.embedding,
        })
    }
}

impl Drop for ExternalOracle {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Builds the oracle selected by `config`.
pub fn build_oracle(
    grammar: Arc<Grammar>,
    config: &OracleConfig,
) -> Result<Box<dyn FeedbackOracle + Send>> {
    match config.kind {
        OracleKind::Simulated => Ok(Box::new(SimulatedOracle::new(grammar, config.clone())?)),
        OracleKind::External => Ok(Box::new(ExternalOracle::connect(grammar, config)?)),
    }
}

pub fn cosine(x: &[f64], y: &[f64]) -> Option<f64> {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        None
    } else {
        Some((dot / (nx * ny)).clamp(-1.0, 1.0))
    }
}
