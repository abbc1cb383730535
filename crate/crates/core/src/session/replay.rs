//! Deterministic batch replay of recorded user actions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    FixedClock, MatchOutcome, Measured, Mode, ScoreReport, Session, SessionContext, SessionError, SessionId,
    SessionRequest, SessionStatus, UserActionEvent,
};
use crate::bus::{Payload, SignalBus};
use crate::config::{ActionParams, CourseConfig, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayScript {
    pub task_id: String,
    pub mode: Mode,
    pub user_id: String,
    pub events: Vec<UserActionEvent>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("event {index} targets unknown part `{part}`")]
    UnknownPart { index: usize, part: String },
    #[error("event {index} has timestamp {at} earlier than the previous event")]
    TimestampOrder { index: usize, at: u64 },
    #[error("event {index}: {source}")]
    Event {
        index: usize,
        #[source]
        source: SessionError,
    },
    #[error(transparent)]
    Session(#[from] SessionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub index: usize,
    pub at: u64,
    #[serde(flatten)]
    pub outcome: MatchOutcome,
}

/// A prompt the learner would have seen or heard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptLine {
    pub topic: String,
    pub target: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub course_id: String,
    pub task_id: String,
    pub mode: Mode,
    pub user_id: String,
    pub status: SessionStatus,
    pub events: Vec<EventReport>,
    pub prompts: Vec<PromptLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreReport>,
}

impl ReplayScript {
    fn check(&self, config: &CourseConfig) -> Result<(), ReplayError> {
        if config.task(&self.task_id).is_none() {
            return Err(ReplayError::UnknownTask(self.task_id.clone()));
        }
        let mut last = 0;
        for (index, e) in self.events.iter().enumerate() {
            if config.part(&e.target_part).is_none() {
                return Err(ReplayError::UnknownPart {
                    index,
                    part: e.target_part.clone(),
                });
            }
            if e.at < last {
                return Err(ReplayError::TimestampOrder { index, at: e.at });
            }
            last = e.at;
        }
        Ok(())
    }
}

/// Runs `script` through a fresh session. The session clock is pinned to the
/// first event's timestamp so identical scripts give identical reports.
/// `ctx.clock` is replaced; `ctx.recorder` is kept so exams persist exactly
/// as they do live.
pub fn run_replay(
    config: Arc<CourseConfig>,
    script: &ReplayScript,
    session_id: SessionId,
    ctx: SessionContext,
) -> Result<ReplayReport, ReplayError> {
    script.check(&config)?;
    let start = script.events.first().map_or(0, |e| e.at);
    let ctx = ctx.with_clock(Arc::new(FixedClock(start)));
    let bus: Arc<SignalBus> = ctx.bus.clone();
    let prompts_sub = bus.subscribe("prompt.*").map_err(SessionError::from)?;

    let mut session = Session::start(
        config.clone(),
        SessionRequest {
            session_id,
            task_id: script.task_id.clone(),
            mode: script.mode,
            user_id: script.user_id.clone(),
        },
        ctx,
    )?;

    let mut events = Vec::with_capacity(script.events.len());
    for (index, e) in script.events.iter().enumerate() {
        let outcome = session
            .submit_action(e)
            .map_err(|source| ReplayError::Event { index, source })?;
        events.push(EventReport {
            index,
            at: e.at,
            outcome,
        });
    }
    bus.dispatch_pending();
    let prompts = prompts_sub
        .drain()
        .into_iter()
        .map(|s| PromptLine {
            content: match &s.payload {
                Payload::Value { .. } => s.payload.text().unwrap_or_default().to_string(),
                Payload::Reference { id } => id.clone(),
                Payload::Command { name, .. } => name.clone(),
            },
            topic: s.action_type,
            target: s.target,
        })
        .collect();
    let _ = bus.unsubscribe(prompts_sub.id());

    let score = match (script.mode, session.is_active()) {
        (Mode::Examination, false) => Some(session.compute_score()?),
        _ => None,
    };
    Ok(ReplayReport {
        course_id: config.course_id.clone(),
        task_id: script.task_id.clone(),
        mode: script.mode,
        user_id: script.user_id.clone(),
        status: session.state().status,
        events,
        prompts,
        score,
    })
}

/// The flawless action sequence for `task`: every measurement is exactly
/// the expected value, events `interval_ms` apart starting at `start_at`.
pub fn scripted_events(task: &Task, start_at: u64, interval_ms: u64) -> Vec<UserActionEvent> {
    task.actions()
        .enumerate()
        .map(|(i, spec)| {
            let measured = match &spec.params {
                ActionParams::Rotate(r) => Measured::Rotate {
                    angle_deg: r.angle_deg,
                    direction: r.direction,
                },
                ActionParams::Press(p) => Measured::Press { hold_ms: p.hold_ms },
                ActionParams::Take(t) => Measured::Take {
                    destination: t.destination,
                },
                ActionParams::Hide => Measured::Hide,
            };
            UserActionEvent {
                target_part: spec.target_part.clone(),
                measured,
                tool: spec.tool.clone(),
                at: start_at + i as u64 * interval_ms,
            }
        })
        .collect()
}
