//! The run configuration file: one JSON document with a section per
//! component, dotted-path overrides and a single seed that fans out to
//! every section.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::{AgentConfig, Algorithm};
use crate::environment::EnvironmentConfig;
use crate::error::{Error, Result};
use crate::grammar::{EncodedState, Grammar, GrammarSpec};
use crate::ndg::NdgConfig;
use crate::oracle::{EmbeddingLayout, OracleConfig, OracleKind};
use crate::rewards::{RewardKind, RewardSpec};

/// Where the grammar comes from; the shipped default when both are absent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrammarSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inline: Option<GrammarSpec>,
}

/// A state given either as coordinates or as `{axis: term}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Coords(Vec<usize>),
    Terms(BTreeMap<String, String>),
}

impl StateSpec {
    pub fn resolve(&self, grammar: &Grammar) -> Result<EncodedState> {
        match self {
            StateSpec::Coords(c) => {
                let s = EncodedState::new(c.clone());
                grammar.check(&s)?;
                Ok(s)
            }
            StateSpec::Terms(t) => grammar.encode(t),
        }
    }
}

fn default_max_steps() -> usize {
    100
}

fn default_penalty() -> f64 {
    -1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    pub terminal: StateSpec,
    #[serde(default = "default_max_steps")]
    pub max_steps_per_episode: usize,
    #[serde(default)]
    pub terminal_stops_episode: bool,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub penalty_states: Vec<StateSpec>,
    #[serde(default = "default_penalty")]
    pub penalty_reward: f64,
}

fn default_reward() -> RewardSpec {
    RewardSpec::new(RewardKind::MultiSemantic)
}

fn default_agent() -> AgentConfig {
    AgentConfig::new(Algorithm::QLearning)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfiguration {
    #[serde(default)]
    pub grammar: GrammarSource,
    pub environment: EnvironmentSection,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default = "default_reward")]
    pub reward: RewardSpec,
    #[serde(default = "default_agent")]
    pub agent: AgentConfig,
    #[serde(default)]
    pub ndg: NdgConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub verbosity: u8,
}

/// A configuration checked across sections and ready to run.
#[derive(Clone, Debug)]
pub struct ResolvedConfig {
    pub grammar: Arc<Grammar>,
    pub environment: EnvironmentConfig,
    pub oracle: OracleConfig,
    pub reward: RewardSpec,
    pub agent: AgentConfig,
    pub ndg: NdgConfig,
    pub verbosity: u8,
}

/// Sets `a.b.c` in a JSON tree. The value is parsed as JSON when possible
/// and kept as a string otherwise; missing objects along the path are created.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config("set", key, "empty path segment"));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::config("set", key, format!("`{part}` is not inside an object"))
        })?;
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| Error::config("set", key, "parent is not an object"))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses `KEY=VALUE`.
pub fn parse_override(arg: &str) -> Result<(String, String)> {
    match arg.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.to_string())),
        _ => Err(Error::config("set", arg, "expected KEY=VALUE")),
    }
}

const SECTIONS: [&str; 8] = [
    "grammar",
    "environment",
    "oracle",
    "reward",
    "agent",
    "ndg",
    "output_dir",
    "verbosity",
];

/// The four section seeds a single `--seed` controls.
pub const SEED_PATHS: [&str; 4] = [
    "environment.rng_seed",
    "oracle.seed",
    "agent.seed",
    "ndg.seed",
];

impl RunConfiguration {
    /// Precedence, lowest first: file, `seed`, `overrides` in order.
    pub fn from_value(
        mut doc: Value,
        seed: Option<u64>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        if !doc.is_object() {
            return Err(Error::config("file", "", "top level must be a JSON object"));
        }
        if let Some(seed) = seed {
            for path in SEED_PATHS {
                apply_override(&mut doc, path, &seed.to_string())?;
            }
        }
        for (k, v) in overrides {
            apply_override(&mut doc, k, v)?;
        }
        serde_path_to_error::deserialize(doc).map_err(|e| {
            let path = e.path().to_string();
            let (head, rest) = path.split_once('.').unwrap_or((path.as_str(), ""));
            let section = SECTIONS
                .iter()
                .find(|s| **s == head)
                .copied()
                .unwrap_or("file");
            let message = e.into_inner().to_string();
            let missing = message
                .strip_prefix("missing field `")
                .and_then(|m| m.split('`').next());
            let field = match (section, rest, missing) {
                ("file", _, _) => path.clone(),
                (_, "", Some(name)) => name.to_string(),
                _ => rest.to_string(),
            };
            Error::config(section, field, message)
        })
    }

    /// Reads a file; a relative grammar path is taken relative to it.
    pub fn load(path: &Path, seed: Option<u64>, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::ConfigNotFound(path.display().to_string()),
            _ => Error::Io(e),
        })?;
        let doc: Value = serde_json::from_str(&text)
            .map_err(|e| Error::config("file", path.display().to_string(), e.to_string()))?;
        let mut config = Self::from_value(doc, seed, overrides)?;
        if let Some(p) = &config.grammar.path {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    config.grammar.path = Some(dir.join(p));
                }
            }
        }
        Ok(config)
    }

    pub fn load_grammar(&self) -> Result<Grammar> {
        match (&self.grammar.path, &self.grammar.inline) {
            (Some(_), Some(_)) => Err(Error::config(
                "grammar",
                "path",
                "give either path or inline, not both",
            )),
            (Some(p), None) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::config("grammar", "path", format!("{}: {e}", p.display()))
                })?;
                Grammar::from_json(&text)
            }
            (None, Some(spec)) => Grammar::from_spec(spec.clone()),
            (None, None) => Ok(Grammar::default_grammar()),
        }
    }

    /// Cross-section validation: terminal and penalty states against the
    /// grammar, embedding dimension against the grammar's layout, and
    /// every section's own bounds.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let grammar = Arc::new(self.load_grammar()?);
        let env = &self.environment;
        let terminal = env
            .terminal
            .resolve(&grammar)
            .map_err(|e| Error::config("environment", "terminal", e.to_string()))?;
        let penalty_states = env
            .penalty_states
            .iter()
            .map(|s| s.resolve(&grammar))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::config("environment", "penalty_states", e.to_string()))?;
        let environment = EnvironmentConfig {
            terminal_state: terminal,
            max_steps_per_episode: env.max_steps_per_episode,
            terminal_stops_episode: env.terminal_stops_episode,
            rng_seed: env.rng_seed,
            penalty_states,
            penalty_reward: env.penalty_reward,
        };
        environment.validate(&grammar)?;
        self.oracle.validate()?;
        if self.oracle.kind == OracleKind::Simulated {
            let need =
                EmbeddingLayout::new(&grammar, self.oracle.locality_bandwidth).required_dim();
            if self.oracle.embedding_dim < need {
                return Err(Error::config(
                    "oracle",
                    "embedding_dim",
                    format!(
                        "{} is smaller than the {need} the grammar needs",
                        self.oracle.embedding_dim
                    ),
                ));
            }
        }
        self.reward.validate()?;
        self.agent.validate()?;
        self.ndg.validate()?;
        if let Some(s) = &self.ndg.start {
            grammar
                .check(s)
                .map_err(|e| Error::config("ndg", "start", e.to_string()))?;
        }
        Ok(ResolvedConfig {
            grammar,
            environment,
            oracle: self.oracle.clone(),
            reward: self.reward.clone(),
            agent: self.agent.clone(),
            ndg: self.ndg.clone(),
            verbosity: self.verbosity,
        })
    }

    /// Self-contained copy for persisting next to outputs: the grammar is
    /// inlined so a replay does not depend on other files.
    pub fn effective(&self) -> Result<Self> {
        let grammar = self.load_grammar()?;
        let mut out = self.clone();
        out.grammar = GrammarSource {
            path: None,
            inline: Some(grammar.spec().clone()),
        };
        Ok(out)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Same configuration with one seed fanned out to every section.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.environment.rng_seed = seed;
        c.oracle.seed = seed;
        c.agent.seed = seed;
        c.ndg.seed = seed;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> Value {
        json!({
            "environment": {"terminal": {"frequency": "one", "noun": "banana", "density": "no", "scene": "farm"}},
            "agent": {"algorithm": "q_learning", "episodes": 5}
        })
    }

    #[test]
    fn defaults_fill_missing_sections() {
        let c = RunConfiguration::from_value(base(), None, &[]).unwrap();
        let r = c.resolve().unwrap();
        assert_eq!(r.grammar.num_states(), 480);
        assert_eq!(r.environment.terminal_state.coords(), &[0, 0, 0, 0]);
        assert_eq!(r.reward.kind, RewardKind::MultiSemantic);
        assert_eq!(r.agent.epsilon, 0.1);
    }

    #[test]
    fn overrides_take_json_or_strings() {
        let over = vec![
            parse_override("agent.epsilon=0.25").unwrap(),
            parse_override("reward.kind=partial_semantic").unwrap(),
            parse_override("environment.terminal=[1,2,0,3]").unwrap(),
        ];
        let c = RunConfiguration::from_value(base(), None, &over).unwrap();
        assert_eq!(c.agent.epsilon, 0.25);
        assert_eq!(c.reward.kind, RewardKind::PartialSemantic);
        assert_eq!(c.environment.terminal, StateSpec::Coords(vec![1, 2, 0, 3]));
    }

    #[test]
    fn seed_precedence() {
        let mut doc = base();
        doc["agent"]["seed"] = json!(3);
        let c = RunConfiguration::from_value(doc.clone(), None, &[]).unwrap();
        assert_eq!(c.agent.seed, 3);
        let c = RunConfiguration::from_value(doc.clone(), Some(11), &[]).unwrap();
        assert_eq!(
            (
                c.agent.seed,
                c.oracle.seed,
                c.environment.rng_seed,
                c.ndg.seed
            ),
            (11, 11, 11, 11)
        );
        let c = RunConfiguration::from_value(doc, Some(11), &[("oracle.seed".into(), "4".into())])
            .unwrap();
        assert_eq!((c.agent.seed, c.oracle.seed), (11, 4));
    }

    #[test]
    fn errors_name_section_and_field() {
        let over = vec![("oracle.embedding_dim".to_string(), "8".to_string())];
        let err = RunConfiguration::from_value(base(), None, &over)
            .unwrap()
            .resolve()
            .unwrap_err();
        assert!(
            matches!(err, Error::Config { section: "oracle", ref field, .. } if field == "embedding_dim"),
            "{err}"
        );
        let over = vec![("environment.terminal".to_string(), "[9,0,0,0]".to_string())];
        let err = RunConfiguration::from_value(base(), None, &over)
            .unwrap()
            .resolve()
            .unwrap_err();
        assert!(err.to_string().contains("environment.terminal"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let over = vec![("agent.epsilonn".to_string(), "0.2".to_string())];
        assert!(RunConfiguration::from_value(base(), None, &over).is_err());
    }

    #[test]
    fn missing_file_is_reported() {
        let err =
            RunConfiguration::load(Path::new("/nonexistent/run.json"), None, &[]).unwrap_err();
        assert!(err.to_string().contains("config not found"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn effective_config_round_trips() {
        let c = RunConfiguration::from_value(base(), Some(2), &[]).unwrap();
        let e = c.effective().unwrap();
        let back: RunConfiguration = serde_json::from_str(&e.to_json_pretty().unwrap()).unwrap();
        assert_eq!(back, e);
        assert_eq!(back.resolve().unwrap().grammar.num_states(), 480);
    }

    #[test]
    fn parse_errors_name_section_and_field() {
        let cases = [
            ("agent.bogus", "1", "agent", "bogus"),
            (
                "agent.learning_rate.schedule",
                "\"nope\"",
                "agent",
                "learning_rate.schedule",
            ),
            (
                "oracle.embedding_dim",
                "\"wide\"",
                "oracle",
                "embedding_dim",
            ),
        ];
        for (key, value, want_section, want_field) in cases {
            let err = RunConfiguration::from_value(base(), None, &[(key.into(), value.into())])
                .unwrap_err();
            match err {
                Error::Config { section, field, .. } => assert_eq!(
                    (section, field.as_str()),
                    (want_section, want_field),
                    "{key}"
                ),
                other => panic!("{key}: {other}"),
            }
        }
        let mut doc = base();
        doc["agent"].as_object_mut().unwrap().remove("algorithm");
        let err = RunConfiguration::from_value(doc, None, &[]).unwrap_err();
        assert!(
            matches!(err, Error::Config { section: "agent", ref field, .. } if field == "algorithm"),
            "{err}"
        );
    }
}
