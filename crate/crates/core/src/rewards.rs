//! Reward functions over diffusion feedback.
//!
//! None of these read lattice coordinates: two states at the same distance
//! from the goal can earn different rewards.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{EncodedState, Grammar};
use crate::oracle::{cosine, SemanticObservation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// Dense: `C` per matched object plus `+/-C_s` for the scene.
    MultiSemantic,
    /// Sparse: `+/-C_s` for the scene only.
    PartialSemantic,
    /// Cosine similarity of image embeddings.
    Clip,
}

impl RewardKind {
    pub const ALL: [RewardKind; 3] = [
        RewardKind::MultiSemantic,
        RewardKind::PartialSemantic,
        RewardKind::Clip,
    ];

    /// Column label used in statistics tables.
    pub fn number(self) -> u8 {
        match self {
            RewardKind::MultiSemantic => 1,
            RewardKind::PartialSemantic => 2,
            RewardKind::Clip => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        RewardKind::ALL.into_iter().find(|k| k.number() == n)
    }
}

fn default_c() -> f64 {
    1.0
}

fn default_cs() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSpec {
    pub kind: RewardKind,
    #[serde(default = "default_c")]
    pub object_match_constant: f64,
    #[serde(default = "default_cs")]
    pub scene_match_constant: f64,
    /// Accept any scene in the goal scene's locality group as a match.
    #[serde(default)]
    pub scene_locality_relaxation: bool,
}

impl RewardSpec {
    pub fn new(kind: RewardKind) -> Self {
        RewardSpec {
            kind,
            object_match_constant: default_c(),
            scene_match_constant: default_cs(),
            scene_locality_relaxation: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.object_match_constant > 0.0 && self.object_match_constant.is_finite()) {
            return Err(Error::config(
                "reward",
                "object_match_constant",
                "must be positive and finite",
            ));
        }
        if !(self.scene_match_constant > 0.0 && self.scene_match_constant.is_finite()) {
            return Err(Error::config(
                "reward",
                "scene_match_constant",
                "must be positive and finite",
            ));
        }
        Ok(())
    }

    /// Upper bound on |R| for a goal with `gt_objects` objects.
    pub fn bound(&self, gt_objects: usize) -> f64 {
        match self.kind {
            RewardKind::MultiSemantic => {
                self.object_match_constant * gt_objects as f64 + self.scene_match_constant
            }
            RewardKind::PartialSemantic => self.scene_match_constant,
            RewardKind::Clip => 1.0,
        }
    }
}

/// What the goal image looks like, as the rewards consume it.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub objects: BTreeSet<String>,
    pub scenes: BTreeSet<String>,
    pub embedding: Vec<f64>,
}

impl GroundTruth {
    pub fn strict(target: &SemanticObservation) -> Self {
        GroundTruth {
            objects: target.objects.clone(),
            scenes: BTreeSet::from([target.scene.clone()]),
            embedding: target.embedding.clone(),
        }
    }

    /// Builds the goal semantics for `spec`, widening the scene set to the
    /// terminal's locality group when relaxation is on.
    pub fn for_spec(
        target: &SemanticObservation,
        grammar: &Grammar,
        terminal: &EncodedState,
        spec: &RewardSpec,
    ) -> Self {
        let mut gt = GroundTruth::strict(target);
        if spec.scene_locality_relaxation {
            if let Some(axis) = grammar.scene_axis() {
                if let Some([lo, hi]) = grammar.locality_group(axis, terminal.coords()[axis]) {
                    gt.scenes
                        .extend(grammar.axes()[axis].vocabulary[lo..=hi].iter().cloned());
                }
            }
        }
        gt
    }

    pub fn matched_objects(&self, obs: &SemanticObservation) -> usize {
        obs.objects.intersection(&self.objects).count()
    }

    pub fn scene_matches(&self, obs: &SemanticObservation) -> bool {
        self.scenes.contains(&obs.scene)
    }
}

fn scene_term(obs: &SemanticObservation, gt: &GroundTruth, spec: &RewardSpec) -> f64 {
    if gt.scene_matches(obs) {
        spec.scene_match_constant
    } else {
        -spec.scene_match_constant
    }
}

pub fn multi_semantic_reward(
    obs: &SemanticObservation,
    gt: &GroundTruth,
    spec: &RewardSpec,
) -> f64 {
    spec.object_match_constant * gt.matched_objects(obs) as f64 + scene_term(obs, gt, spec)
}

pub fn partial_semantic_reward(
    obs: &SemanticObservation,
    gt: &GroundTruth,
    spec: &RewardSpec,
) -> f64 {
    scene_term(obs, gt, spec)
}

pub fn clip_reward(obs: &SemanticObservation, gt: &GroundTruth) -> Result<f64> {
    cosine(&gt.embedding, &obs.embedding).ok_or(Error::DegenerateEmbedding)
}

pub fn reward(obs: &SemanticObservation, gt: &GroundTruth, spec: &RewardSpec) -> Result<f64> {
    match spec.kind {
        RewardKind::MultiSemantic => Ok(multi_semantic_reward(obs, gt, spec)),
        RewardKind::PartialSemantic => Ok(partial_semantic_reward(obs, gt, spec)),
        RewardKind::Clip => clip_reward(obs, gt),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{FeedbackOracle, OracleConfig, SimulatedOracle};
    use proptest::prelude::*;
    use std::sync::Arc;

    const TOL: f64 = 1e-9;

    fn obs(objects: &[&str], scene: &str, embedding: &[f64]) -> SemanticObservation {
        SemanticObservation {
            objects: objects.iter().map(|s| s.to_string()).collect(),
            scene: scene.into(),
            embedding: embedding.to_vec(),
        }
    }

    fn gt() -> GroundTruth {
        GroundTruth::strict(&obs(&["one banana"], "farm", &[1.0, 0.0]))
    }

    #[test]
    fn multi_semantic_examples() {
        let spec = RewardSpec::new(RewardKind::MultiSemantic);
        let r = multi_semantic_reward(&obs(&["one banana"], "farm", &[1.0, 0.0]), &gt(), &spec);
        assert!((r - 1.5).abs() < TOL);
        let r = multi_semantic_reward(&obs(&["one dog"], "beach", &[1.0, 0.0]), &gt(), &spec);
        assert!((r + 0.5).abs() < TOL);
        let r = multi_semantic_reward(&obs(&[], "farm", &[1.0, 0.0]), &gt(), &spec);
        assert!((r - 0.5).abs() < TOL);
    }

    #[test]
    fn partial_semantic_signs() {
        let spec = RewardSpec::new(RewardKind::PartialSemantic);
        assert!(
            (partial_semantic_reward(&obs(&[], "farm", &[1.0]), &gt(), &spec) - 0.5).abs() < TOL
        );
        assert!(
            (partial_semantic_reward(&obs(&[], "park", &[1.0]), &gt(), &spec) + 0.5).abs() < TOL
        );
        let with = partial_semantic_reward(
            &obs(&["one banana", "no people"], "farm", &[1.0]),
            &gt(),
            &spec,
        );
        let without = partial_semantic_reward(&obs(&[], "farm", &[1.0]), &gt(), &spec);
        assert_eq!(with, without);
    }

    #[test]
    fn clip_examples() {
        let x = [1.0, 0.0];
        let g = GroundTruth::strict(&obs(&[], "farm", &x));
        assert!((clip_reward(&obs(&[], "", &x), &g).unwrap() - 1.0).abs() < TOL);
        assert!(clip_reward(&obs(&[], "", &[0.0, 1.0]), &g).unwrap().abs() < TOL);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((clip_reward(&obs(&[], "", &[h, h]), &g).unwrap() - 2f64.sqrt() / 2.0).abs() < TOL);
        assert!(matches!(
            clip_reward(&obs(&[], "", &[0.0, 0.0]), &g),
            Err(Error::DegenerateEmbedding)
        ));
    }

    #[test]
    fn rejects_non_positive_constants() {
        let mut spec = RewardSpec::new(RewardKind::MultiSemantic);
        spec.scene_match_constant = 0.0;
        assert!(spec.validate().is_err());
        spec.scene_match_constant = 0.5;
        spec.object_match_constant = -1.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn relaxation_widens_scene_set() {
        let g = Arc::new(Grammar::default_grammar());
        let mut o = SimulatedOracle::new(g.clone(), OracleConfig::noiseless()).unwrap();
        let terminal = EncodedState::new(vec![0, 0, 0, 2]); // park
        let target = o.target_semantics(&terminal).unwrap();
        let mut spec = RewardSpec::new(RewardKind::PartialSemantic);
        let strict = GroundTruth::for_spec(&target, &g, &terminal, &spec);
        spec.scene_locality_relaxation = true;
        let relaxed = GroundTruth::for_spec(&target, &g, &terminal, &spec);
        assert_eq!(strict.scenes.len(), 1);
        assert!(relaxed.scenes.contains("vegetable garden"));
        assert!(!relaxed.scenes.contains("train station platform"));
    }

    #[test]
    fn equal_distance_states_can_differ_in_reward() {
        let g = Arc::new(Grammar::default_grammar());
        let mut o = SimulatedOracle::new(g.clone(), OracleConfig::noiseless()).unwrap();
        let terminal = EncodedState::new(vec![0, 0, 0, 0]);
        let target = o.target_semantics(&terminal).unwrap();
        let gt = GroundTruth::strict(&target);
        // both two steps from the goal: both objects wrong vs scene wrong
        let (sa, sb) = (
            EncodedState::new(vec![0, 1, 1, 0]),
            EncodedState::new(vec![0, 0, 0, 2]),
        );
        assert_eq!(
            crate::grammar::semantic_distance(&sa, &terminal).unwrap(),
            2
        );
        assert_eq!(
            crate::grammar::semantic_distance(&sb, &terminal).unwrap(),
            2
        );
        let a = o.observe(&sa).unwrap();
        let b = o.observe(&sb).unwrap();
        let spec = RewardSpec::new(RewardKind::MultiSemantic);
        assert_ne!(
            reward(&a, &gt, &spec).unwrap(),
            reward(&b, &gt, &spec).unwrap()
        );
    }

    fn vocab() -> Vec<&'static str> {
        vec![
            "one banana",
            "no people",
            "many dog",
            "one cat",
            "two apple",
        ]
    }

    fn arb_obs() -> impl Strategy<Value = SemanticObservation> {
        (
            proptest::sample::subsequence(vocab(), 0..=5),
            proptest::sample::select(vec!["farm", "park", "beach"]),
            proptest::collection::vec(-1.0f64..1.0, 4),
        )
            .prop_filter("non-zero embedding", |(_, _, e)| {
                e.iter().any(|x| x.abs() > 1e-6)
            })
            .prop_map(|(o, s, e)| obs(&o, s, &e))
    }

    proptest! {
        #[test]
        fn rewards_are_bounded(o in arb_obs(), target in arb_obs(), c in 0.1f64..5.0, cs in 0.1f64..5.0) {
            let gt = GroundTruth::strict(&target);
            for kind in RewardKind::ALL {
                let spec = RewardSpec { kind, object_match_constant: c, scene_match_constant: cs, scene_locality_relaxation: false };
                let r = reward(&o, &gt, &spec).unwrap();
                prop_assert!(r.abs() <= spec.bound(gt.objects.len()) + 1e-12);
            }
        }

        #[test]
        fn adding_a_matched_object_never_lowers_multi(o in arb_obs(), target in arb_obs()) {
            let gt = GroundTruth::strict(&target);
            let spec = RewardSpec::new(RewardKind::MultiSemantic);
            let before = multi_semantic_reward(&o, &gt, &spec);
            for extra in &gt.objects {
                let mut more = o.clone();
                more.objects.insert(extra.clone());
                prop_assert!(multi_semantic_reward(&more, &gt, &spec) >= before);
            }
        }

        #[test]
        fn clip_is_scale_invariant(o in arb_obs(), target in arb_obs(), a in 0.01f64..100.0, b in 0.01f64..100.0) {
            let gt = GroundTruth::strict(&target);
            let base = clip_reward(&o, &gt).unwrap();
            let mut scaled = o.clone();
            scaled.embedding.iter_mut().for_each(|x| *x *= a);
            let mut gt_scaled = gt.clone();
            gt_scaled.embedding.iter_mut().for_each(|x| *x *= b);
            prop_assert!((clip_reward(&scaled, &gt_scaled).unwrap() - base).abs() < 1e-9);
        }
    }
}
