//! Lenient extraction of structured replies from chat model output.

use serde_json::{Map, Value};

use crate::state::{Emotion, InterlocutorUpdate, SensoryState, StateDelta, NOTHING_NOTABLE};
use crate::tokenize::to_single_line;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("no balanced JSON {0} found in the reply")]
    NotFound(&'static str),
    #[error("type mismatch at `{path}`: expected {expected}")]
    TypeMismatch { path: String, expected: &'static str },
}

fn mismatch(path: impl Into<String>, expected: &'static str) -> ParseError {
    ParseError::TypeMismatch { path: path.into(), expected }
}

/// Every balanced `open ... close` span in `text`, in order of their start.
/// Brackets inside JSON string literals are ignored.
fn balanced_spans(text: &str, open: u8, close: u8) -> impl Iterator<Item = &str> {
    let bytes = text.as_bytes();
    bytes.iter().enumerate().filter(move |(_, b)| **b == open).filter_map(move |(start, _)| {
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(start) {
            if in_string {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_string = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                _ if b == open => depth += 1,
                _ if b == close => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&text[start..=i]);
                    }
                }
                _ => {}
            }
        }
        None
    })
}

/// First balanced `{...}` block that parses as a JSON object.
pub fn extract_json_object(text: &str) -> Option<Map<String, Value>> {
    balanced_spans(text, b'{', b'}').find_map(|span| match serde_json::from_str(span) {
        Ok(Value::Object(map)) => Some(map),
        _ => None,
    })
}

/// First balanced `[...]` block that parses as a JSON array.
pub fn extract_json_array(text: &str) -> Option<Vec<Value>> {
    balanced_spans(text, b'[', b']').find_map(|span| match serde_json::from_str(span) {
        Ok(Value::Array(items)) => Some(items),
        _ => None,
    })
}

fn text_field(value: &Value, path: &str) -> Result<String, ParseError> {
    match value {
        Value::String(s) => Ok(to_single_line(s)),
        _ => Err(mismatch(path, "string")),
    }
}

/// Numbers pass through; numeric strings such as `"0.8"` are accepted too.
fn number_field(value: &Value, path: &str) -> Result<f64, ParseError> {
    match value {
        Value::Number(n) => n.as_f64().ok_or_else(|| mismatch(path, "number")),
        Value::String(s) => s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| mismatch(path, "number")),
        _ => Err(mismatch(path, "number")),
    }
}

fn parse_senses(value: &Value) -> Result<SensoryState, ParseError> {
    let Value::Object(map) = value else {
        return Err(mismatch("senses", "object"));
    };
    let mut senses = SensoryState::default();
    for channel in SensoryState::CHANNELS {
        if let Some(v) = map.get(channel).filter(|v| !v.is_null()) {
            let text = text_field(v, &format!("senses.{channel}"))?;
            let slot = senses.channel_mut(channel).expect("known channel");
            *slot = if text.trim().is_empty() { NOTHING_NOTABLE.to_owned() } else { text };
        }
    }
    Ok(senses)
}

fn parse_emotions(value: &Value) -> Result<Vec<Emotion>, ParseError> {
    let Value::Array(items) = value else {
        return Err(mismatch("emotions", "array"));
    };
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let Value::Object(obj) = item else {
                return Err(mismatch(format!("emotions[{i}]"), "object"));
            };
            let label = obj.get("label").ok_or_else(|| mismatch(format!("emotions[{i}].label"), "string"))?;
            let intensity =
                obj.get("intensity").ok_or_else(|| mismatch(format!("emotions[{i}].intensity"), "number"))?;
            Ok(Emotion {
                label: text_field(label, &format!("emotions[{i}].label"))?.trim().to_owned(),
                intensity: number_field(intensity, &format!("emotions[{i}].intensity"))?,
            })
        })
        .collect()
}

fn parse_interlocutor(value: &Value) -> Result<InterlocutorUpdate, ParseError> {
    let Value::Object(map) = value else {
        return Err(mismatch("interlocutor", "object"));
    };
    let mut update = InterlocutorUpdate::default();
    if let Some(v) = map.get("relationship").filter(|v| !v.is_null()) {
        let rel = text_field(v, "interlocutor.relationship")?;
        if !rel.trim().is_empty() {
            update.relationship = Some(rel.trim().to_owned());
        }
    }
    if let Some(v) = map.get("favorability").filter(|v| !v.is_null()) {
        update.favorability = Some(number_field(v, "interlocutor.favorability")?);
    }
    if let Some(v) = map.get("new_experiences").filter(|v| !v.is_null()) {
        let Value::Array(items) = v else {
            return Err(mismatch("interlocutor.new_experiences", "array"));
        };
        for (i, item) in items.iter().enumerate() {
            let exp = text_field(item, &format!("interlocutor.new_experiences[{i}]"))?;
            if !exp.trim().is_empty() {
                update.new_experiences.push(exp.trim().to_owned());
            }
        }
    }
    Ok(update)
}

/// Reads a [`StateDelta`] out of free-form model output. Unknown keys are
/// ignored and absent keys leave the matching delta field empty.
pub fn parse_state_delta(text: &str) -> Result<StateDelta, ParseError> {
    let map = extract_json_object(text).ok_or(ParseError::NotFound("object"))?;
    let present = |key: &str| map.get(key).filter(|v| !v.is_null());
    Ok(StateDelta {
        senses: present("senses").map(parse_senses).transpose()?,
        emotions: present("emotions").map(parse_emotions).transpose()?,
        interlocutor: present("interlocutor").map(parse_interlocutor).transpose()?,
    })
}

/// Reads a list of emotion labels such as `["anger", "fear"]`.
pub fn parse_emotion_labels(text: &str) -> Result<Vec<String>, ParseError> {
    let items = extract_json_array(text).ok_or(ParseError::NotFound("array"))?;
    let mut labels: Vec<String> = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let label = text_field(item, &format!("[{i}]"))?.trim().to_owned();
        if !label.is_empty() && !labels.iter().any(|l| l.eq_ignore_ascii_case(&label)) {
            labels.push(label);
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_empty_delta() {
        assert_eq!(parse_state_delta("{}").unwrap(), StateDelta::default());
    }

    #[test]
    fn object_inside_prose() {
        let d = parse_state_delta("Sure! Here it is: {\"emotions\":[]}").unwrap();
        assert_eq!(d.emotions, Some(vec![]));
        assert!(d.senses.is_none());
    }

    #[test]
    fn no_json() {
        assert_eq!(parse_state_delta("no json here"), Err(ParseError::NotFound("object")));
    }

    #[test]
    fn full_reply() {
        let text = r#"{"senses":{"sight":"a crowd","hearing":"shouting","taste":"iron","smell":"sweat","touch":"a shove"},
            "emotions":[{"label":"joy","intensity":0.8}],"interlocutor":{"favorability":0.5}}"#;
        let d = parse_state_delta(text).unwrap();
        assert_eq!(d.senses.unwrap().touch, "a shove");
        assert_eq!(d.emotions.unwrap(), vec![Emotion::new("joy", 0.8)]);
        let i = d.interlocutor.unwrap();
        assert_eq!(i.favorability, Some(0.5));
        assert!(i.relationship.is_none());
    }

    #[test]
    fn string_intensity_coerced() {
        let d = parse_state_delta(r#"{"emotions":[{"label":"fear","intensity":" 0.25 "}]}"#).unwrap();
        assert_eq!(d.emotions.unwrap()[0].intensity, 0.25);
        let err = parse_state_delta(r#"{"emotions":[{"label":"fear","intensity":"very"}]}"#).unwrap_err();
        assert!(matches!(err, ParseError::TypeMismatch { ref path, .. } if path == "emotions[0].intensity"));
    }

    #[test]
    fn type_mismatch_on_present_field() {
        assert!(matches!(parse_state_delta(r#"{"senses": 3}"#), Err(ParseError::TypeMismatch { .. })));
        assert!(matches!(parse_state_delta(r#"{"emotions": {"a": 1}}"#), Err(ParseError::TypeMismatch { .. })));
    }

    #[test]
    fn unknown_keys_ignored_and_braces_in_strings() {
        let d = parse_state_delta(r#"note {"mood": "}", "interlocutor": {"relationship": "old {friend}"}} trailing"#)
            .unwrap();
        assert_eq!(d.interlocutor.unwrap().relationship.as_deref(), Some("old {friend}"));
    }

    #[test]
    fn skips_unparseable_brace_spans() {
        let d = parse_state_delta(r#"use {placeholders} like this: {"emotions": []}"#).unwrap();
        assert_eq!(d.emotions, Some(vec![]));
    }

    #[test]
    fn labels() {
        assert_eq!(parse_emotion_labels("Labels: [\"anger\", \"Anger\", \"fear\"]").unwrap(), vec!["anger", "fear"]);
        assert!(parse_emotion_labels("none").is_err());
    }
}
