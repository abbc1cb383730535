use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ActionParams, AtomicActionSpec, CourseConfig, PressParams, RotateParams, TakeParams, Verb};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("input is not valid UTF-8 (valid up to byte {valid_up_to})")]
    NotUtf8 { valid_up_to: usize },
    #[error("malformed JSON at line {line} column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown verb `{verb}` at line {line} column {column}")]
    UnknownVerb { verb: String, line: usize, column: usize },
    #[error("unknown field `{field}` at line {line} column {column}")]
    UnknownField { field: String, line: usize, column: usize },
    #[error("schema violation at line {line} column {column}: {message}")]
    Schema {
        line: usize,
        column: usize,
        message: String,
    },
}

impl ParseError {
    pub fn position(&self) -> Option<(usize, usize)> {
        match self {
            ParseError::NotUtf8 { .. } => None,
            ParseError::Syntax { line, column, .. }
            | ParseError::UnknownVerb { line, column, .. }
            | ParseError::UnknownField { line, column, .. }
            | ParseError::Schema { line, column, .. } => Some((*line, *column)),
        }
    }

    /// Stable diagnostic code for this error class.
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::NotUtf8 { .. } | ParseError::Syntax { .. } => "PARSE_ERROR",
            ParseError::UnknownVerb { .. } => "UNKNOWN_VERB",
            ParseError::UnknownField { .. } => "UNKNOWN_FIELD",
            ParseError::Schema { .. } => "SCHEMA_MISMATCH",
        }
    }
}

const UNKNOWN_VERB_PREFIX: &str = "unknown verb `";
const UNKNOWN_FIELD_PREFIX: &str = "unknown field `";

/// Parses a course document. Only structure and enum membership are checked
/// here; semantic rules live in [`super::validate`].
pub fn parse_config(bytes: &[u8]) -> Result<CourseConfig, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ParseError::NotUtf8 {
        valid_up_to: e.valid_up_to(),
    })?;
    serde_json::from_str(text).map_err(classify)
}

/// Canonical form: schema key order, maps sorted by key, two-space indent,
/// trailing newline.
pub fn serialize(config: &CourseConfig) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(config).expect("course config is always serializable");
    out.push(b'\n');
    out
}

fn classify(err: serde_json::Error) -> ParseError {
    let (line, column) = (err.line(), err.column());
    let full = err.to_string();
    let suffix = format!(" at line {line} column {column}");
    let message = full.strip_suffix(&suffix).unwrap_or(&full).to_string();

    match err.classify() {
        serde_json::error::Category::Syntax | serde_json::error::Category::Eof | serde_json::error::Category::Io => {
            ParseError::Syntax { line, column, message }
        }
        serde_json::error::Category::Data => {
            if let Some(verb) = backticked_after(&message, UNKNOWN_VERB_PREFIX) {
                ParseError::UnknownVerb { verb, line, column }
            } else if let Some(field) = backticked_after(&message, UNKNOWN_FIELD_PREFIX) {
                ParseError::UnknownField { field, line, column }
            } else {
                ParseError::Schema { line, column, message }
            }
        }
    }
}

fn backticked_after(message: &str, prefix: &str) -> Option<String> {
    let start = message.find(prefix)? + prefix.len();
    let rest = &message[start..];
    let end = rest.find('`')?;
    Some(rest[..end].to_string())
}

/// Wire shape of an atomic action before the verb-specific params are typed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawAction {
    verb: String,
    target_part: String,
    #[serde(default)]
    params: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tool: Option<String>,
}

fn typed_params<T: for<'de> Deserialize<'de>>(verb: Verb, params: Option<Value>) -> Result<T, String> {
    let value = params.ok_or_else(|| format!("missing field `params` for verb `{verb}`"))?;
    serde_json::from_value(value).map_err(|e| format!("{verb} params: {e}"))
}

impl TryFrom<RawAction> for AtomicActionSpec {
    type Error = String;

    fn try_from(raw: RawAction) -> Result<Self, Self::Error> {
        let verb = Verb::from_name(&raw.verb).ok_or_else(|| {
            format!(
                "{UNKNOWN_VERB_PREFIX}{}`, expected rotate, press, take or hide",
                raw.verb
            )
        })?;
        let params = match verb {
            Verb::Rotate => ActionParams::Rotate(typed_params::<RotateParams>(verb, raw.params)?),
            Verb::Press => ActionParams::Press(typed_params::<PressParams>(verb, raw.params)?),
            Verb::Take => ActionParams::Take(typed_params::<TakeParams>(verb, raw.params)?),
            Verb::Hide => match raw.params {
                None => ActionParams::Hide,
                Some(Value::Object(map)) if map.is_empty() => ActionParams::Hide,
                Some(Value::Object(map)) => {
                    let field = map.keys().next().cloned().unwrap_or_default();
                    return Err(format!("{UNKNOWN_FIELD_PREFIX}{field}`, hide takes no params"));
                }
                Some(_) => return Err("hide params must be an empty object".to_string()),
            },
        };
        Ok(AtomicActionSpec {
            target_part: raw.target_part,
            params,
            tool: raw.tool,
        })
    }
}

impl From<AtomicActionSpec> for RawAction {
    fn from(spec: AtomicActionSpec) -> Self {
        let verb = spec.verb().as_str().to_string();
        let params = match &spec.params {
            ActionParams::Rotate(p) => serde_json::to_value(p),
            ActionParams::Press(p) => serde_json::to_value(p),
            ActionParams::Take(p) => serde_json::to_value(p),
            ActionParams::Hide => Ok(Value::Object(Default::default())),
        }
        .expect("action params are always serializable");
        RawAction {
            verb,
            target_part: spec.target_part,
            params: Some(params),
            tool: spec.tool,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"{
  "course_id": "mini",
  "title": "Minimal",
  "schema_version": 1,
  "chapters": [
    {
      "chapter_id": "c1",
      "title": "Only chapter",
      "tasks": [
        {
          "task_id": "t1",
          "title": "Loosen bolt",
          "kind": "disassembly",
          "steps": [
            {
              "step_id": "s1",
              "ordinal": 1,
              "description": "Loosen the bolt",
              "weight": 1,
              "teach_prompt": { "text": "Turn the bolt counter-clockwise" },
              "practice_prompt": { "text": "Loosen bolt" },
              "actions": [
                {
                  "verb": "rotate",
                  "target_part": "bolt_1",
                  "params": { "angle_deg": 360, "direction": "ccw", "tolerance_deg": 15 }
                }
              ]
            }
          ],
          "initial_state": { "bolt_1": "attached" }
        }
      ]
    }
  ],
  "assets": [],
  "parts": [ { "part_id": "bolt_1", "name": "Bolt" } ],
  "constraints": []
}"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = parse_config(MINIMAL.as_bytes()).unwrap();
        assert_eq!(cfg.step_count(), 1);
        let action = &cfg.chapters[0].tasks[0].steps[0].actions[0];
        assert_eq!(action.verb(), Verb::Rotate);
        assert_eq!(
            action.params,
            ActionParams::Rotate(RotateParams {
                angle_deg: 360.0,
                direction: super::super::RotateDirection::Ccw,
                tolerance_deg: 15.0
            })
        );
    }

    #[test]
    fn malformed_reports_position() {
        let err = parse_config(br#"{"course_id": }"#).unwrap_err();
        match err {
            ParseError::Syntax { line, column, .. } => {
                assert_eq!(line, 1);
                assert_eq!(column, 15);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_verb_is_classified() {
        let text = MINIMAL.replace("\"verb\": \"rotate\"", "\"verb\": \"twist\"");
        let err = parse_config(text.as_bytes()).unwrap_err();
        assert!(
            matches!(err, ParseError::UnknownVerb { ref verb, .. } if verb == "twist"),
            "{err:?}"
        );
        assert_eq!(err.code(), "UNKNOWN_VERB");
    }

    #[test]
    fn unknown_fields_rejected_at_every_level() {
        let top = MINIMAL.replacen("\"title\": \"Minimal\",", "\"title\": \"Minimal\", \"colour\": 3,", 1);
        assert!(matches!(
            parse_config(top.as_bytes()).unwrap_err(),
            ParseError::UnknownField { ref field, .. } if field == "colour"
        ));

        let nested = MINIMAL.replace("\"tolerance_deg\": 15", "\"tolerance_deg\": 15, \"torque\": 9");
        assert!(matches!(
            parse_config(nested.as_bytes()).unwrap_err(),
            ParseError::UnknownField { ref field, .. } if field == "torque"
        ));

        let part = MINIMAL.replace("\"name\": \"Bolt\"", "\"name\": \"Bolt\", \"mass\": 1");
        assert!(matches!(
            parse_config(part.as_bytes()).unwrap_err(),
            ParseError::UnknownField { ref field, .. } if field == "mass"
        ));
    }

    #[test]
    fn bad_enum_is_schema_error() {
        let text = MINIMAL.replace("\"direction\": \"ccw\"", "\"direction\": \"sideways\"");
        let err = parse_config(text.as_bytes()).unwrap_err();
        assert_eq!(err.code(), "SCHEMA_MISMATCH", "{err:?}");
    }

    #[test]
    fn invalid_utf8_rejected() {
        let err = parse_config(&[b'{', 0xff, b'}']).unwrap_err();
        assert_eq!(err, ParseError::NotUtf8 { valid_up_to: 1 });
    }

    #[test]
    fn hide_accepts_missing_or_empty_params() {
        let hide = MINIMAL.replace(
            "\"verb\": \"rotate\",\n                  \"target_part\": \"bolt_1\",\n                  \"params\": { \"angle_deg\": 360, \"direction\": \"ccw\", \"tolerance_deg\": 15 }",
            "\"verb\": \"hide\", \"target_part\": \"bolt_1\"",
        );
        let cfg = parse_config(hide.as_bytes()).unwrap();
        assert_eq!(cfg.chapters[0].tasks[0].steps[0].actions[0].params, ActionParams::Hide);
        let out = String::from_utf8(serialize(&cfg)).unwrap();
        assert!(out.contains("\"params\": {}"));
    }

    #[test]
    fn serialize_is_deterministic_and_round_trips() {
        let cfg = parse_config(MINIMAL.as_bytes()).unwrap();
        let a = serialize(&cfg);
        let b = serialize(&cfg);
        assert_eq!(a, b);
        assert_eq!(parse_config(&a).unwrap(), cfg);
    }

    #[test]
    fn key_order_does_not_change_canonical_bytes() {
        // Same document with the top-level keys and the action keys written in reverse.
        let reordered = r#"{
  "constraints": [],
  "parts": [ { "name": "Bolt", "part_id": "bolt_1" } ],
  "assets": [],
  "chapters": [ { "tasks": [ {
      "initial_state": { "bolt_1": "attached" },
      "steps": [ {
          "actions": [ {
              "params": { "tolerance_deg": 15, "direction": "ccw", "angle_deg": 360 },
              "target_part": "bolt_1",
              "verb": "rotate"
          } ],
          "practice_prompt": { "text": "Loosen bolt" },
          "teach_prompt": { "text": "Turn the bolt counter-clockwise" },
          "weight": 1,
          "description": "Loosen the bolt",
          "ordinal": 1,
          "step_id": "s1"
      } ],
      "kind": "disassembly",
      "title": "Loosen bolt",
      "task_id": "t1"
    } ],
    "title": "Only chapter",
    "chapter_id": "c1" } ],
  "schema_version": 1,
  "title": "Minimal",
  "course_id": "mini"
}"#;
        let a = serialize(&parse_config(MINIMAL.as_bytes()).unwrap());
        let b = serialize(&parse_config(reordered.as_bytes()).unwrap());
        assert_eq!(a, b);
    }
}
