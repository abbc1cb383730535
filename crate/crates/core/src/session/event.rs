use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{Destination, RotateDirection, Verb};

/// What was actually measured for a user action.
#[derive(Debug, Clone, PartialEq)]
pub enum Measured {
    Rotate { angle_deg: f64, direction: RotateDirection },
    Press { hold_ms: u64 },
    Take { destination: Destination },
    Hide,
}

impl Measured {
    pub fn verb(&self) -> Verb {
        match self {
            Measured::Rotate { .. } => Verb::Rotate,
            Measured::Press { .. } => Verb::Press,
            Measured::Take { .. } => Verb::Take,
            Measured::Hide => Verb::Hide,
        }
    }
}

/// A user action as reported by the input surface.
///
/// Wire form: `{"verb": "rotate", "target_part": "bolt_1",
/// "measured": {"angle_deg": 352, "direction": "ccw"}, "tool": "...", "at": 1000}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEvent", into = "RawEvent")]
pub struct UserActionEvent {
    pub target_part: String,
    pub measured: Measured,
    pub tool: Option<String>,
    /// Caller-supplied timestamp, milliseconds since the Unix epoch.
    pub at: u64,
}

impl UserActionEvent {
    pub fn verb(&self) -> Verb {
        self.measured.verb()
    }

    pub fn new(target_part: impl Into<String>, measured: Measured, at: u64) -> Self {
        UserActionEvent {
            target_part: target_part.into(),
            measured,
            tool: None,
            at,
        }
    }

    pub fn with_tool(mut self, tool: impl Into<String>) -> Self {
        self.tool = Some(tool.into());
        self
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RotateMeasured {
    angle_deg: f64,
    direction: RotateDirection,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PressMeasured {
    hold_ms: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TakeMeasured {
    destination: Destination,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    verb: Verb,
    target_part: String,
    #[serde(default)]
    measured: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tool: Option<String>,
    at: u64,
}

fn measured<T: for<'de> Deserialize<'de>>(verb: Verb, v: Option<Value>) -> Result<T, String> {
    let v = v.ok_or_else(|| format!("missing field `measured` for verb `{verb}`"))?;
    serde_json::from_value(v).map_err(|e| format!("{verb} measurement: {e}"))
}

impl TryFrom<RawEvent> for UserActionEvent {
    type Error = String;

    fn try_from(raw: RawEvent) -> Result<Self, Self::Error> {
        let measured = match raw.verb {
            Verb::Rotate => {
                let m: RotateMeasured = measured(raw.verb, raw.measured)?;
                Measured::Rotate {
                    angle_deg: m.angle_deg,
                    direction: m.direction,
                }
            }
            Verb::Press => Measured::Press {
                hold_ms: measured::<PressMeasured>(raw.verb, raw.measured)?.hold_ms,
            },
            Verb::Take => Measured::Take {
                destination: measured::<TakeMeasured>(raw.verb, raw.measured)?.destination,
            },
            Verb::Hide => match raw.measured {
                None => Measured::Hide,
                Some(Value::Object(m)) if m.is_empty() => Measured::Hide,
                Some(_) => return Err("hide carries no measurement".into()),
            },
        };
        Ok(UserActionEvent {
            target_part: raw.target_part,
            measured,
            tool: raw.tool,
            at: raw.at,
        })
    }
}

impl From<UserActionEvent> for RawEvent {
    fn from(e: UserActionEvent) -> Self {
        let verb = e.verb();
        let measured = match e.measured {
            Measured::Rotate { angle_deg, direction } => serde_json::to_value(RotateMeasured { angle_deg, direction }),
            Measured::Press { hold_ms } => serde_json::to_value(PressMeasured { hold_ms }),
            Measured::Take { destination } => serde_json::to_value(TakeMeasured { destination }),
            Measured::Hide => Ok(Value::Object(Default::default())),
        }
        .expect("measurements serialize");
        RawEvent {
            verb,
            target_part: e.target_part,
            measured: Some(measured),
            tool: e.tool,
            at: e.at,
        }
    }
}
