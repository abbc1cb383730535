//! JSON envelopes exchanged over the session WebSocket.
//!
//! Every frame is one [`WireEnvelope`]. Clients send `command` envelopes;
//! the server answers each with exactly one `reply` or `error` whose `re`
//! names the command's `seq`, and pushes `event` envelopes for the sessions
//! the connection watches. Sequence numbers are per connection and per
//! direction, starting at 1.

use forge_core::bus::{Payload, Signal};
use forge_core::config::{AssetKind, MediaAsset, TaskKind};
use forge_core::results::{ExamRecord, RecordFilter};
use forge_core::session::{MatchOutcome, Mode, ScoreReport, SessionError, SessionStatus, StepView, UserActionEvent};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Topic prefixes forwarded to session streams.
pub const FORWARDED_TOPICS: [&str; 4] = ["step.", "task.", "prompt.", "screen."];

pub fn is_forwarded(action_type: &str) -> bool {
    FORWARDED_TOPICS.iter().any(|p| action_type.starts_with(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Event,
    Command,
    Reply,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireEnvelope {
    pub kind: Kind,
    pub seq: u64,
    /// For `reply` and `error`: the `seq` of the command being answered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub re: Option<u64>,
    pub body: Value,
}

impl WireEnvelope {
    pub fn command(seq: u64, cmd: &Command) -> Self {
        WireEnvelope {
            kind: Kind::Command,
            seq,
            re: None,
            body: serde_json::to_value(cmd).expect("commands serialize"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    Catalog {},
    Assets {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kind: Option<AssetKind>,
    },
    CreateSession {
        task_id: String,
        mode: Mode,
        user_id: String,
    },
    WatchSession {
        session_id: String,
    },
    UnwatchSession {
        session_id: String,
    },
    SubmitAction {
        session_id: String,
        event: UserActionEvent,
    },
    CurrentView {
        session_id: String,
    },
    Score {
        session_id: String,
    },
    AbortSession {
        session_id: String,
    },
    ShowMedia {
        session_id: String,
        asset_id: String,
    },
    Records {
        #[serde(default)]
        filter: RecordFilter,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: String,
    pub title: String,
    pub kind: TaskKind,
    pub step_count: usize,
    pub total_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChapterSummary {
    pub chapter_id: String,
    pub title: String,
    pub tasks: Vec<TaskSummary>,
}

/// Reply bodies, one shape per command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reply {
    Catalog {
        course_id: String,
        title: String,
        chapters: Vec<ChapterSummary>,
    },
    Assets {
        assets: Vec<MediaAsset>,
    },
    Session {
        session_id: String,
        view: StepView,
    },
    Outcome {
        outcome: MatchOutcome,
    },
    View {
        view: StepView,
    },
    Score {
        report: ScoreReport,
    },
    Status {
        session_id: String,
        status: SessionStatus,
    },
    Published {
        signal_seq: u64,
    },
    Records {
        records: Vec<ExamRecord>,
    },
    Unwatched {
        session_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl ErrorBody {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        ErrorBody {
            code: code.to_string(),
            message: message.into(),
        }
    }
}

impl From<&SessionError> for ErrorBody {
    fn from(e: &SessionError) -> Self {
        let code = match e {
            SessionError::UnknownTask(_) => "UNKNOWN_TASK",
            SessionError::ZeroWeightExam(_) => "ZERO_WEIGHT_EXAM",
            SessionError::SessionNotActive => "SESSION_NOT_ACTIVE",
            SessionError::WrongMode => "WRONG_MODE",
            SessionError::SessionStillActive => "SESSION_STILL_ACTIVE",
            SessionError::PartGraph(_) => "PART_GRAPH",
            SessionError::Bus(_) => "BUS",
            SessionError::Storage(_) => "STORAGE",
        };
        ErrorBody::new(code, e.to_string())
    }
}

/// Body of an `event` envelope: a bus signal tagged with its session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventBody {
    pub session_id: String,
    /// The signal's bus sequence number (distinct from the envelope seq).
    pub signal_seq: u64,
    pub action_type: String,
    pub target: String,
    pub payload: Payload,
}

impl EventBody {
    pub fn from_signal(session_id: &str, s: Signal) -> Self {
        EventBody {
            session_id: session_id.to_string(),
            signal_seq: s.seq,
            action_type: s.action_type,
            target: s.target,
            payload: s.payload,
        }
    }
}
