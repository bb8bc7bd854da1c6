//! Prompt grammar and the lattice encoding of its sentences.
//!
//! A [`Grammar`] is an ordered list of semantic axes plus a production
//! template. Every sentence is picked out by one vocabulary index per axis,
//! so the sentence space is the integer lattice `[0, n_0) x ... x [0, n_k)`
//! and an [`EncodedState`] is a point on it.
//!
//! The default template is
//!
//! ```text
//! S  -> P NP [VP] A DP I LC
//! NP -> Frequency Noun     DP -> Density H     LC -> Scene     VP -> Verb
//! P  -> "a photo of"       A  -> "and"         I  -> "in"      H  -> "people"
//! ```
//!
//! with `VP` only present when the verb axis is enabled.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_GRAMMAR_JSON: &str = include_str!("../data/default_grammar.json");

const VERB_AXIS: &str = "verb";
const DEFAULT_SCENE_AXIS: &str = "scene";
const DEFAULT_TEMPLATE: [&str; 9] = [
    "P",
    "frequency",
    "noun",
    "verb",
    "F",
    "density",
    "H",
    "C",
    "scene",
];

fn default_fixed_terminals() -> BTreeMap<String, String> {
    [
        ("P", "a photo of"),
        ("F", "and"),
        ("C", "in"),
        ("H", "people"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

fn default_object_phrases() -> Vec<Vec<String>> {
    vec![
        vec!["frequency".into(), "noun".into()],
        vec![VERB_AXIS.into()],
        vec!["density".into(), "H".into()],
    ]
}

/// One label-encoded image property.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticAxis {
    pub name: String,
    pub vocabulary: Vec<String>,
    /// Inclusive `[lo, hi]` index ranges of visually similar terms.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub locality_groups: Vec<[usize; 2]>,
}

impl SemanticAxis {
    pub fn new<I>(name: impl Into<String>, vocabulary: I) -> Self
    where
        I: IntoIterator,
        I::Item: AsRef<str>,
    {
        SemanticAxis {
            name: name.into(),
            vocabulary: vocabulary
                .into_iter()
                .map(|s| s.as_ref().to_string())
                .collect(),
            locality_groups: Vec::new(),
        }
    }

    pub fn with_groups(mut self, groups: &[[usize; 2]]) -> Self {
        self.locality_groups = groups.to_vec();
        self
    }

    pub fn len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocabulary.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.vocabulary.iter().position(|t| t == term)
    }

    fn validate(&self) -> Result<()> {
        if self.vocabulary.is_empty() {
            return Err(Error::InvalidGrammar(format!(
                "axis `{}` has an empty vocabulary",
                self.name
            )));
        }
        let mut seen = HashMap::new();
        for (i, term) in self.vocabulary.iter().enumerate() {
            if let Some(j) = seen.insert(term.as_str(), i) {
                return Err(Error::InvalidGrammar(format!(
                    "axis `{}` repeats term `{term}` at indices {j} and {i}",
                    self.name
                )));
            }
        }
        for &[lo, hi] in &self.locality_groups {
            if lo > hi || hi >= self.vocabulary.len() {
                return Err(Error::InvalidGrammar(format!(
                    "axis `{}` has locality group [{lo}, {hi}] outside [0, {})",
                    self.name,
                    self.vocabulary.len()
                )));
            }
        }
        Ok(())
    }
}

/// The on-disk grammar document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrammarSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub axes: Vec<SemanticAxis>,
    #[serde(default = "default_fixed_terminals")]
    pub fixed_terminals: BTreeMap<String, String>,
    #[serde(default)]
    pub include_verb_axis: bool,
    /// Symbol sequence for `S`; defaults to the standard template filtered to the enabled axes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub production_template: Option<Vec<String>>,
    /// Symbol groups that a recognizer reports as one object, e.g. `["frequency", "noun"]` -> "one banana".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_phrases: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_axis: Option<String>,
}

impl GrammarSpec {
    pub fn from_axes(axes: Vec<SemanticAxis>) -> Self {
        GrammarSpec {
            description: None,
            axes,
            fixed_terminals: default_fixed_terminals(),
            include_verb_axis: false,
            production_template: None,
            object_phrases: None,
            scene_axis: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Symbol {
    Axis(usize),
    Fixed(String),
}

/// A validated, immutable grammar.
#[derive(Clone, Debug)]
pub struct Grammar {
    spec: GrammarSpec,
    axes: Vec<SemanticAxis>,
    template: Vec<Symbol>,
    phrases: Vec<Vec<Symbol>>,
    scene_axis: Option<usize>,
    num_states: usize,
}

/// A lattice point: one vocabulary index per enabled axis, in axis order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EncodedState(Vec<usize>);

impl EncodedState {
    pub fn new(coords: Vec<usize>) -> Self {
        EncodedState(coords)
    }

    pub fn coords(&self) -> &[usize] {
        &self.0
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }
}

impl From<Vec<usize>> for EncodedState {
    fn from(coords: Vec<usize>) -> Self {
        EncodedState(coords)
    }
}

impl fmt::Display for EncodedState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// The prompt string a state decodes to.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RawState(pub String);

impl RawState {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RawState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Grammar {
    pub fn from_spec(spec: GrammarSpec) -> Result<Self> {
        let axes: Vec<SemanticAxis> = spec
            .axes
            .iter()
            .filter(|a| spec.include_verb_axis || a.name != VERB_AXIS)
            .cloned()
            .collect();
        if axes.is_empty() {
            return Err(Error::InvalidGrammar("no enabled axes".into()));
        }
        let mut by_name = HashMap::new();
        for (i, axis) in axes.iter().enumerate() {
            axis.validate()?;
            if by_name.insert(axis.name.clone(), i).is_some() {
                return Err(Error::InvalidGrammar(format!(
                    "duplicate axis `{}`",
                    axis.name
                )));
            }
        }
        if spec.include_verb_axis && !by_name.contains_key(VERB_AXIS) {
            return Err(Error::InvalidGrammar(
                "include_verb_axis is set but no `verb` axis is defined".into(),
            ));
        }
        for key in by_name.keys() {
            if spec.fixed_terminals.contains_key(key) {
                return Err(Error::InvalidGrammar(format!(
                    "`{key}` is both an axis and a fixed terminal"
                )));
            }
        }

        let resolve = |sym: &str| -> Option<Symbol> {
            if let Some(&i) = by_name.get(sym) {
                Some(Symbol::Axis(i))
            } else {
                spec.fixed_terminals
                    .get(sym)
                    .map(|_| Symbol::Fixed(sym.to_string()))
            }
        };

        let template: Vec<Symbol> = match &spec.production_template {
            Some(symbols) => symbols
                .iter()
                .map(|s| {
                    resolve(s).ok_or_else(|| {
                        Error::InvalidGrammar(format!(
                            "template symbol `{s}` is neither an axis nor a fixed terminal"
                        ))
                    })
                })
                .collect::<Result<_>>()?,
            None => DEFAULT_TEMPLATE.iter().filter_map(|s| resolve(s)).collect(),
        };
        let mut uses = vec![0usize; axes.len()];
        for sym in &template {
            if let Symbol::Axis(i) = sym {
                uses[*i] += 1;
            }
        }
        if let Some(i) = uses.iter().position(|&n| n != 1) {
            return Err(Error::InvalidGrammar(format!(
                "axis `{}` appears {} times in the production template, expected exactly once",
                axes[i].name, uses[i]
            )));
        }

        let scene_name = spec.scene_axis.as_deref().unwrap_or(DEFAULT_SCENE_AXIS);
        let scene_axis = by_name.get(scene_name).copied();
        if spec.scene_axis.is_some() && scene_axis.is_none() {
            return Err(Error::InvalidGrammar(format!(
                "scene axis `{scene_name}` is not an enabled axis"
            )));
        }

        let requested = spec
            .object_phrases
            .clone()
            .unwrap_or_else(default_object_phrases);
        let explicit = spec.object_phrases.is_some();
        let mut phrases = Vec::new();
        let mut in_phrase = vec![false; axes.len()];
        for group in &requested {
            let mut phrase = Vec::new();
            for s in group {
                match resolve(s) {
                    Some(sym) => phrase.push(sym),
                    None if explicit => {
                        return Err(Error::InvalidGrammar(format!(
                            "object phrase symbol `{s}` is unknown"
                        )));
                    }
                    None => {}
                }
            }
            let mut has_axis = false;
            for sym in &phrase {
                if let Symbol::Axis(i) = sym {
                    if Some(*i) == scene_axis {
                        return Err(Error::InvalidGrammar(
                            "the scene axis cannot be part of an object phrase".into(),
                        ));
                    }
                    if in_phrase[*i] {
                        return Err(Error::InvalidGrammar(format!(
                            "axis `{}` is in more than one object phrase",
                            axes[*i].name
                        )));
                    }
                    in_phrase[*i] = true;
                    has_axis = true;
                }
            }
            if has_axis {
                phrases.push(phrase);
            }
        }
        for (i, &used) in in_phrase.iter().enumerate() {
            if !used && Some(i) != scene_axis {
                phrases.push(vec![Symbol::Axis(i)]);
            }
        }

        let num_states = axes
            .iter()
            .try_fold(1usize, |acc, a| acc.checked_mul(a.len()))
            .ok_or_else(|| Error::InvalidGrammar("state count overflows usize".into()))?;

        Ok(Grammar {
            spec,
            axes,
            template,
            phrases,
            scene_axis,
            num_states,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Grammar::from_spec(GrammarSpec::from_json(text)?)
    }

    /// The shipped demo vocabulary (480 states).
    pub fn default_grammar() -> Self {
        Grammar::from_json(DEFAULT_GRAMMAR_JSON).expect("shipped grammar is valid")
    }

    pub fn default_spec() -> GrammarSpec {
        GrammarSpec::from_json(DEFAULT_GRAMMAR_JSON).expect("shipped grammar is valid")
    }

    pub fn spec(&self) -> &GrammarSpec {
        &self.spec
    }

    pub fn axes(&self) -> &[SemanticAxis] {
        &self.axes
    }

    pub fn num_axes(&self) -> usize {
        self.axes.len()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn axis_index(&self, name: &str) -> Result<usize> {
        self.axes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAxis(name.to_string()))
    }

    pub fn scene_axis(&self) -> Option<usize> {
        self.scene_axis
    }

    pub fn check(&self, state: &EncodedState) -> Result<()> {
        if state.dims() != self.axes.len() {
            return Err(Error::DimensionMismatch {
                expected: self.axes.len(),
                found: state.dims(),
            });
        }
        for (axis, &c) in self.axes.iter().zip(state.coords()) {
            if c >= axis.len() {
                return Err(Error::EncodingBounds {
                    axis: axis.name.clone(),
                    index: c as i64,
                    size: axis.len(),
                });
            }
        }
        Ok(())
    }

    /// Builds a state from signed coordinates, as typed by a user.
    pub fn state_from_signed(&self, coords: &[i64]) -> Result<EncodedState> {
        if coords.len() != self.axes.len() {
            return Err(Error::DimensionMismatch {
                expected: self.axes.len(),
                found: coords.len(),
            });
        }
        let mut out = Vec::with_capacity(coords.len());
        for (axis, &c) in self.axes.iter().zip(coords) {
            if c < 0 || c as usize >= axis.len() {
                return Err(Error::EncodingBounds {
                    axis: axis.name.clone(),
                    index: c,
                    size: axis.len(),
                });
            }
            out.push(c as usize);
        }
        Ok(EncodedState(out))
    }

    fn symbol_text<'a>(&'a self, sym: &'a Symbol, state: &EncodedState) -> &'a str {
        match sym {
            Symbol::Axis(i) => &self.axes[*i].vocabulary[state.0[*i]],
            Symbol::Fixed(key) => &self.spec.fixed_terminals[key],
        }
    }

    pub fn decode(&self, state: &EncodedState) -> Result<RawState> {
        self.check(state)?;
        let words: Vec<&str> = self
            .template
            .iter()
            .map(|s| self.symbol_text(s, state))
            .collect();
        Ok(RawState(words.join(" ")))
    }

    /// Label-encodes one term per axis. Extra keys naming unknown axes are rejected.
    pub fn encode<K, V>(&self, semantics: &BTreeMap<K, V>) -> Result<EncodedState>
    where
        K: AsRef<str> + Ord,
        V: AsRef<str>,
    {
        for key in semantics.keys() {
            self.axis_index(key.as_ref())?;
        }
        let lookup: HashMap<&str, &str> = semantics
            .iter()
            .map(|(k, v)| (k.as_ref(), v.as_ref()))
            .collect();
        let coords = self
            .axes
            .iter()
            .map(|axis| {
                let term = lookup
                    .get(axis.name.as_str())
                    .ok_or_else(|| Error::MissingAxis(axis.name.clone()))?;
                axis.index_of(term).ok_or_else(|| Error::VocabularyMiss {
                    axis: axis.name.clone(),
                    term: term.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EncodedState(coords))
    }

    /// Axis name -> term for a valid state.
    pub fn semantics(&self, state: &EncodedState) -> Result<BTreeMap<String, String>> {
        self.check(state)?;
        Ok(self
            .axes
            .iter()
            .zip(state.coords())
            .map(|(a, &c)| (a.name.clone(), a.vocabulary[c].clone()))
            .collect())
    }

    /// Shifts one coordinate by `delta`, clamped to the vocabulary. Never wraps.
    pub fn slide(&self, state: &EncodedState, axis: usize, delta: i64) -> EncodedState {
        let mut coords = state.0.clone();
        let max = self.axes[axis].len() as i64 - 1;
        coords[axis] = (coords[axis] as i64 + delta).clamp(0, max) as usize;
        EncodedState(coords)
    }

    pub fn slide_named(
        &self,
        state: &EncodedState,
        axis: &str,
        delta: i64,
    ) -> Result<EncodedState> {
        let i = self.axis_index(axis)?;
        self.check(state)?;
        Ok(self.slide(state, i, delta))
    }

    /// Row-major index, last axis fastest.
    pub fn index_of(&self, state: &EncodedState) -> usize {
        self.axes
            .iter()
            .zip(state.coords())
            .fold(0usize, |acc, (a, &c)| acc * a.len() + c)
    }

    pub fn state_at(&self, mut index: usize) -> EncodedState {
        let mut coords = vec![0; self.axes.len()];
        for (slot, axis) in coords.iter_mut().zip(&self.axes).rev() {
            *slot = index % axis.len();
            index /= axis.len();
        }
        EncodedState(coords)
    }

    pub fn states(&self) -> impl Iterator<Item = EncodedState> + '_ {
        (0..self.num_states).map(move |i| self.state_at(i))
    }

    /// Object phrases a recognizer would report for this state, in phrase order.
    pub fn object_terms(&self, state: &EncodedState) -> Vec<String> {
        self.phrases
            .iter()
            .map(|p| {
                p.iter()
                    .map(|s| self.symbol_text(s, state))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    }

    /// Axes that make up each object phrase.
    pub fn object_phrase_axes(&self) -> Vec<Vec<usize>> {
        self.phrases
            .iter()
            .map(|p| {
                p.iter()
                    .filter_map(|s| match s {
                        Symbol::Axis(i) => Some(*i),
                        Symbol::Fixed(_) => None,
                    })
                    .collect()
            })
            .collect()
    }

    pub fn scene_term(&self, state: &EncodedState) -> Option<&str> {
        self.scene_axis
            .map(|i| self.axes[i].vocabulary[state.0[i]].as_str())
    }

    pub fn locality_group(&self, axis: usize, index: usize) -> Option<[usize; 2]> {
        self.axes[axis]
            .locality_groups
            .iter()
            .copied()
            .find(|&[lo, hi]| lo <= index && index <= hi)
    }
}

/// L1 distance between two lattice points.
pub fn semantic_distance(a: &EncodedState, b: &EncodedState) -> Result<u64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    Ok(a.coords()
        .iter()
        .zip(b.coords())
        .map(|(&x, &y)| x.abs_diff(y) as u64)
        .sum())
}
