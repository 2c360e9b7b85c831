//! Character information state and the structured deltas applied to it
//! after every interlocutor turn.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::memory::MemoryList;

/// Default cap on the number of simultaneously held emotions.
pub const DEFAULT_EMOTION_CAPACITY: usize = 5;

/// Text stored in a sense channel that carries no perception.
pub const NOTHING_NOTABLE: &str = "nothing notable";

/// Relationship assumed when nothing else is known about the interlocutor.
pub const DEFAULT_RELATIONSHIP: &str = "stranger";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterProfile {
    pub name: String,
    /// Free-form traits and goals, one per line.
    pub attributes: Vec<String>,
    #[serde(default)]
    pub background: String,
}

impl CharacterProfile {
    pub fn new(name: impl Into<String>, attributes: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            name: name.into(),
            attributes: attributes.into_iter().map(Into::into).collect(),
            background: String::new(),
        }
    }

    pub fn with_background(mut self, background: impl Into<String>) -> Self {
        self.background = background.into();
        self
    }
}

/// The five sense channels, always in the order sight, hearing, taste,
/// smell, touch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensoryState {
    pub sight: String,
    pub hearing: String,
    pub taste: String,
    pub smell: String,
    pub touch: String,
}

impl Default for SensoryState {
    fn default() -> Self {
        Self::uniform(NOTHING_NOTABLE)
    }
}

impl SensoryState {
    pub const CHANNELS: [&'static str; 5] = ["sight", "hearing", "taste", "smell", "touch"];

    pub fn uniform(text: &str) -> Self {
        Self {
            sight: text.to_owned(),
            hearing: text.to_owned(),
            taste: text.to_owned(),
            smell: text.to_owned(),
            touch: text.to_owned(),
        }
    }

    pub fn channels(&self) -> [(&'static str, &str); 5] {
        [
            ("sight", &self.sight),
            ("hearing", &self.hearing),
            ("taste", &self.taste),
            ("smell", &self.smell),
            ("touch", &self.touch),
        ]
    }

    pub fn channel_mut(&mut self, name: &str) -> Option<&mut String> {
        match name {
            "sight" => Some(&mut self.sight),
            "hearing" => Some(&mut self.hearing),
            "taste" => Some(&mut self.taste),
            "smell" => Some(&mut self.smell),
            "touch" => Some(&mut self.touch),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Emotion {
    pub label: String,
    pub intensity: f64,
}

impl Emotion {
    pub fn new(label: impl Into<String>, intensity: f64) -> Self {
        Self { label: label.into(), intensity }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionalState {
    pub emotions: Vec<Emotion>,
    #[serde(default = "default_capacity")]
    pub capacity: usize,
}

fn default_capacity() -> usize {
    DEFAULT_EMOTION_CAPACITY
}

impl Default for EmotionalState {
    fn default() -> Self {
        Self { emotions: Vec::new(), capacity: DEFAULT_EMOTION_CAPACITY }
    }
}

impl EmotionalState {
    pub fn new(emotions: Vec<Emotion>) -> Self {
        Self { emotions, capacity: DEFAULT_EMOTION_CAPACITY }
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.capacity = capacity;
        self
    }
}

/// What the character believes about the other party. Never derived from
/// the interlocutor's own profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterlocutorKnowledge {
    pub interlocutor_name: String,
    pub relationship: String,
    /// -1 hostile, 0 neutral, +1 devoted.
    pub favorability: f64,
    #[serde(default)]
    pub experiences: Vec<String>,
}

impl InterlocutorKnowledge {
    pub fn neutral(name: impl Into<String>) -> Self {
        Self {
            interlocutor_name: name.into(),
            relationship: DEFAULT_RELATIONSHIP.to_owned(),
            favorability: 0.0,
            experiences: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterState {
    pub profile: CharacterProfile,
    pub senses: SensoryState,
    pub emotions: EmotionalState,
    pub memory: MemoryList,
    pub interlocutor: InterlocutorKnowledge,
}

/// Partial update to the interlocutor knowledge.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InterlocutorUpdate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relationship: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub favorability: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub new_experiences: Vec<String>,
}

impl InterlocutorUpdate {
    pub fn is_empty(&self) -> bool {
        self.relationship.is_none() && self.favorability.is_none() && self.new_experiences.is_empty()
    }
}

/// Senses and emotions are whole-value replacements; interlocutor knowledge
/// is patched field by field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StateDelta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub senses: Option<SensoryState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotions: Option<Vec<Emotion>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interlocutor: Option<InterlocutorUpdate>,
}

impl StateDelta {
    pub fn is_empty(&self) -> bool {
        self.senses.is_none()
            && self.emotions.is_none()
            && self.interlocutor.as_ref().is_none_or(InterlocutorUpdate::is_empty)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_path(&self, path: &str) -> bool {
        self.violations.iter().any(|v| v.path == path)
    }

    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation { path: path.into(), message: message.into() });
    }

    fn into_result(self) -> Result<(), StateError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(StateError::Invalid(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", v.path, v.message)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StateError {
    #[error("invalid character state: {0}")]
    Invalid(ValidationReport),
    #[error("delta rejected: {0}")]
    DeltaRejected(ValidationReport),
}

impl StateError {
    pub fn report(&self) -> &ValidationReport {
        match self {
            StateError::Invalid(r) | StateError::DeltaRejected(r) => r,
        }
    }
}

fn is_single_line(text: &str) -> bool {
    !text.contains(['\n', '\r'])
}

/// Builds a fresh state, filling unspecified parts with neutral defaults.
pub fn new_character_state(
    profile: CharacterProfile,
    interlocutor_name: impl Into<String>,
    initial_senses: Option<SensoryState>,
    initial_emotions: Option<EmotionalState>,
) -> Result<CharacterState, StateError> {
    let state = CharacterState {
        profile,
        senses: initial_senses.unwrap_or_default(),
        emotions: initial_emotions.unwrap_or_default(),
        memory: MemoryList::default(),
        interlocutor: InterlocutorKnowledge::neutral(interlocutor_name),
    };
    validate_state(&state).into_result()?;
    Ok(state)
}

/// Lists every violated invariant. Never fails.
pub fn validate_state(state: &CharacterState) -> ValidationReport {
    let mut report = ValidationReport::default();

    let profile = &state.profile;
    if profile.name.trim().is_empty() {
        report.push("profile.name", "must not be empty");
    } else if !is_single_line(&profile.name) {
        report.push("profile.name", "must be a single line");
    }
    if profile.attributes.is_empty() {
        report.push("profile.attributes", "at least one attribute is required");
    }
    for (i, attr) in profile.attributes.iter().enumerate() {
        if attr.trim().is_empty() {
            report.push(format!("profile.attributes[{i}]"), "must not be empty");
        } else if !is_single_line(attr) {
            report.push(format!("profile.attributes[{i}]"), "must be a single line");
        }
    }

    check_senses(&state.senses, "senses", &mut report);
    check_emotion_list(&state.emotions.emotions, state.emotions.capacity, "emotions", &mut report);

    for (i, entry) in state.memory.entries().iter().enumerate() {
        if !is_single_line(entry) {
            report.push(format!("memory.entries[{i}]"), "must be a single line");
        }
    }

    let known = &state.interlocutor;
    if known.interlocutor_name.trim().is_empty() {
        report.push("interlocutor.interlocutor_name", "must not be empty");
    } else if !is_single_line(&known.interlocutor_name) {
        report.push("interlocutor.interlocutor_name", "must be a single line");
    }
    if !is_single_line(&known.relationship) {
        report.push("interlocutor.relationship", "must be a single line");
    }
    if !(-1.0..=1.0).contains(&known.favorability) {
        report.push("interlocutor.favorability", format!("{} is outside [-1, 1]", known.favorability));
    }
    for (i, exp) in known.experiences.iter().enumerate() {
        if !is_single_line(exp) {
            report.push(format!("interlocutor.experiences[{i}]"), "must be a single line");
        }
    }

    report
}

fn check_senses(senses: &SensoryState, prefix: &str, report: &mut ValidationReport) {
    for (channel, value) in senses.channels() {
        if !is_single_line(value) {
            report.push(format!("{prefix}.{channel}"), "must be a single line");
        }
    }
}

fn check_emotion_list(emotions: &[Emotion], capacity: usize, path: &str, report: &mut ValidationReport) {
    if emotions.len() > capacity {
        report.push(path, format!("{} emotions exceed the capacity of {capacity}", emotions.len()));
    }
    let mut seen = HashSet::new();
    for (i, emotion) in emotions.iter().enumerate() {
        let label = emotion.label.trim();
        if label.is_empty() {
            report.push(format!("{path}[{i}].label"), "must not be empty");
        } else if !is_single_line(label) {
            report.push(format!("{path}[{i}].label"), "must be a single line");
        }
        if !seen.insert(label.to_lowercase()) {
            report.push(path, format!("duplicate emotion label {:?}", emotion.label));
        }
        if !(0.0..=1.0).contains(&emotion.intensity) {
            report.push(format!("{path}[{i}].intensity"), format!("{} is outside [0, 1]", emotion.intensity));
        }
    }
}

/// Checks a delta in isolation. Capacity is not enforced here because
/// oversized emotion lists are truncated on application.
pub fn validate_delta(delta: &StateDelta) -> ValidationReport {
    let mut report = ValidationReport::default();
    if let Some(senses) = &delta.senses {
        check_senses(senses, "senses", &mut report);
    }
    if let Some(emotions) = &delta.emotions {
        check_emotion_list(emotions, usize::MAX, "emotions", &mut report);
    }
    if let Some(update) = &delta.interlocutor {
        if let Some(rel) = &update.relationship {
            if rel.trim().is_empty() {
                report.push("interlocutor.relationship", "must not be empty");
            } else if !is_single_line(rel) {
                report.push("interlocutor.relationship", "must be a single line");
            }
        }
        if let Some(fav) = update.favorability {
            if !fav.is_finite() {
                report.push("interlocutor.favorability", "must be a finite number");
            }
        }
        for (i, exp) in update.new_experiences.iter().enumerate() {
            if exp.trim().is_empty() || !is_single_line(exp) {
                report.push(format!("interlocutor.new_experiences[{i}]"), "must be a non-empty single line");
            }
        }
    }
    report
}

/// Keeps the `capacity` most intense emotions, preserving list order among
/// the survivors. Ties go to the earlier entry.
pub fn truncate_emotions(emotions: &[Emotion], capacity: usize) -> Vec<Emotion> {
    if emotions.len() <= capacity {
        return emotions.to_vec();
    }
    let mut ranked: Vec<usize> = (0..emotions.len()).collect();
    // stable sort: equal intensities keep their original relative order
    ranked.sort_by(|&a, &b| emotions[b].intensity.total_cmp(&emotions[a].intensity));
    let mut keep = ranked[..capacity].to_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| emotions[i].clone()).collect()
}

/// Returns the updated state; the input is left untouched. A delta that
/// violates its invariants is rejected whole.
pub fn apply_state_delta(state: &CharacterState, delta: &StateDelta) -> Result<CharacterState, StateError> {
    let report = validate_delta(delta);
    if !report.is_empty() {
        return Err(StateError::DeltaRejected(report));
    }

    let mut next = state.clone();
    if let Some(senses) = &delta.senses {
        next.senses = senses.clone();
    }
    if let Some(emotions) = &delta.emotions {
        next.emotions.emotions = truncate_emotions(emotions, next.emotions.capacity);
    }
    if let Some(update) = &delta.interlocutor {
        if let Some(rel) = &update.relationship {
            next.interlocutor.relationship = rel.clone();
        }
        if let Some(fav) = update.favorability {
            next.interlocutor.favorability = fav.clamp(-1.0, 1.0);
        }
        next.interlocutor.experiences.extend(update.new_experiences.iter().cloned());
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eve() -> CharacterState {
        new_character_state(CharacterProfile::new("Eve", ["curious"]), "Adam", None, None).unwrap()
    }

    #[test]
    fn defaults_are_neutral() {
        let s = eve();
        assert_eq!(s.interlocutor.favorability, 0.0);
        assert_eq!(s.interlocutor.relationship, "stranger");
        assert!(s.interlocutor.experiences.is_empty());
        assert!(s.memory.entries().is_empty());
        assert!(s.emotions.emotions.is_empty());
        assert_eq!(s.senses, SensoryState::uniform(NOTHING_NOTABLE));
    }

    #[test]
    fn empty_name_rejected() {
        let err = new_character_state(CharacterProfile::new("", ["curious"]), "Adam", None, None).unwrap_err();
        assert!(err.report().has_path("profile.name"), "{err}");
    }

    #[test]
    fn missing_attributes_rejected() {
        let err =
            new_character_state(CharacterProfile::new("Eve", Vec::<String>::new()), "Adam", None, None).unwrap_err();
        assert!(err.report().has_path("profile.attributes"));
    }

    #[test]
    fn initial_values_pass_through() {
        let senses = SensoryState { sight: "a dark alley".into(), ..SensoryState::default() };
        let emotions = EmotionalState::new(vec![Emotion::new("fear", 0.7)]);
        let s = new_character_state(
            CharacterProfile::new("Eve", ["curious"]),
            "Adam",
            Some(senses.clone()),
            Some(emotions.clone()),
        )
        .unwrap();
        assert_eq!(s.senses, senses);
        assert_eq!(s.emotions, emotions);
    }

    #[test]
    fn empty_delta_is_identity() {
        let s = eve();
        assert_eq!(apply_state_delta(&s, &StateDelta::default()).unwrap(), s);
    }

    #[test]
    fn favorability_clamped() {
        let mut s = eve();
        s.interlocutor.favorability = 0.9;
        let delta = StateDelta {
            interlocutor: Some(InterlocutorUpdate { favorability: Some(1.5), ..Default::default() }),
            ..Default::default()
        };
        assert_eq!(apply_state_delta(&s, &delta).unwrap().interlocutor.favorability, 1.0);
        let delta = StateDelta {
            interlocutor: Some(InterlocutorUpdate { favorability: Some(-7.0), ..Default::default() }),
            ..Default::default()
        };
        assert_eq!(apply_state_delta(&s, &delta).unwrap().interlocutor.favorability, -1.0);
    }

    #[test]
    fn out_of_range_intensity_rejects_whole_delta() {
        let s = eve();
        let delta = StateDelta {
            senses: Some(SensoryState::uniform("rain")),
            emotions: Some(vec![Emotion::new("joy", 1.2)]),
            ..Default::default()
        };
        let err = apply_state_delta(&s, &delta).unwrap_err();
        assert!(matches!(err, StateError::DeltaRejected(_)));
        assert!(err.report().has_path("emotions[0].intensity"));
    }

    #[test]
    fn experiences_append_and_relationship_replaces() {
        let mut s = eve();
        s.interlocutor.experiences.push("met at the well".into());
        let delta = StateDelta {
            interlocutor: Some(InterlocutorUpdate {
                relationship: Some("rival".into()),
                favorability: None,
                new_experiences: vec!["argued about the harvest".into()],
            }),
            ..Default::default()
        };
        let next = apply_state_delta(&s, &delta).unwrap();
        assert_eq!(next.interlocutor.relationship, "rival");
        assert_eq!(next.interlocutor.experiences, vec!["met at the well", "argued about the harvest"]);
        assert_eq!(next.interlocutor.favorability, 0.0);
        assert_eq!(s.interlocutor.experiences.len(), 1);
    }

    /// Oracle: for every ordering of six intensities, the kept set must be
    /// exactly the five largest, in the order they were given.
    #[test]
    fn truncation_keeps_top_k_for_every_ordering() {
        let base = [("a", 0.9), ("b", 0.8), ("c", 0.7), ("d", 0.3), ("e", 0.2), ("f", 0.1)];
        let mut idx: Vec<usize> = (0..6).collect();
        let mut count = 0;
        permute(&mut idx, 0, &mut |perm| {
            count += 1;
            let list: Vec<Emotion> = perm.iter().map(|&i| Emotion::new(base[i].0, base[i].1)).collect();
            let kept = truncate_emotions(&list, 5);
            let expected: Vec<Emotion> = list.iter().filter(|e| e.label != "f").cloned().collect();
            assert_eq!(kept, expected);
        });
        assert_eq!(count, 720);
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn truncation_tie_keeps_earlier() {
        let list = vec![Emotion::new("x", 0.5), Emotion::new("y", 0.5), Emotion::new("z", 0.9)];
        let kept = truncate_emotions(&list, 2);
        assert_eq!(kept, vec![Emotion::new("x", 0.5), Emotion::new("z", 0.9)]);
    }

    #[test]
    fn delta_over_capacity_keeps_top_five() {
        let mut s = eve();
        s.emotions.emotions = ["p", "q", "r", "s", "t"].iter().map(|l| Emotion::new(*l, 0.5)).collect();
        let delta = StateDelta {
            emotions: Some(
                [("joy", 0.9), ("awe", 0.8), ("hope", 0.7), ("fear", 0.3), ("envy", 0.2), ("guilt", 0.1)]
                    .iter()
                    .map(|(l, i)| Emotion::new(*l, *i))
                    .collect(),
            ),
            ..Default::default()
        };
        let next = apply_state_delta(&s, &delta).unwrap();
        let labels: Vec<&str> = next.emotions.emotions.iter().map(|e| e.label.as_str()).collect();
        assert_eq!(labels, vec!["joy", "awe", "hope", "fear", "envy"]);
        assert!(validate_state(&next).is_empty());
    }

    #[test]
    fn validation_reports() {
        assert!(validate_state(&eve()).is_empty());

        let mut s = eve();
        s.interlocutor.favorability = 2.0;
        assert!(validate_state(&s).has_path("interlocutor.favorability"));

        let mut s = eve();
        s.emotions.emotions = vec![Emotion::new("Fear", 0.2), Emotion::new("fear", 0.4)];
        assert!(validate_state(&s).has_path("emotions"));

        let mut s = eve();
        s.senses.smell = "smoke\nand ash".into();
        assert!(validate_state(&s).has_path("senses.smell"));
    }

    #[test]
    fn duplicate_labels_in_delta_rejected() {
        let delta = StateDelta {
            emotions: Some(vec![Emotion::new("Joy", 0.2), Emotion::new("joy", 0.3)]),
            ..Default::default()
        };
        assert!(apply_state_delta(&eve(), &delta).is_err());
    }

    #[test]
    fn json_field_names_are_stable() {
        let v = serde_json::to_value(eve()).unwrap();
        for key in ["profile", "senses", "emotions", "memory", "interlocutor"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v["interlocutor"].get("favorability").is_some());
        assert!(v["senses"].get("touch").is_some());
    }
}
