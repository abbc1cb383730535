//! The control layer: one learning session over one task.
//!
//! A [`Session`] walks the task's steps strictly in order, matching each user
//! action against the expected atomic action, gating it through the part
//! graph and publishing mode-appropriate prompts and progress on its
//! [`SignalBus`]. Examination sessions are scored and recorded.

mod event;
mod replay;
mod score;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::bus::{BusError, Payload, SignalBus};
use crate::config::{ActionParams, AtomicActionSpec, CourseConfig, Step, Task};
use crate::part_graph::{Gate, PartGraph, PartGraphError, PartStates};
use crate::results::{ExamRecord, ExamRecorder, StoreError};

pub use event::{Measured, UserActionEvent};
pub use replay::{run_replay, scripted_events, EventReport, PromptLine, ReplayError, ReplayReport, ReplayScript};
pub use score::{score_report, ScoreReport, StepScore};

/// Topics the engine publishes on.
pub mod topics {
    pub const TASK_STARTED: &str = "task.started";
    pub const TASK_COMPLETED: &str = "task.completed";
    pub const TASK_ABORTED: &str = "task.aborted";
    pub const STEP_PROGRESS: &str = "step.progress";
    pub const STEP_COMPLETED: &str = "step.completed";
    pub const STEP_REJECTED: &str = "step.rejected";
    pub const PROMPT_TEXT: &str = "prompt.text";
    pub const PROMPT_AUDIO: &str = "prompt.audio";
    pub const PROMPT_BRIEF: &str = "prompt.brief";
    pub const PARTS_STATE: &str = "parts.state";
    pub const SCREEN_MEDIA: &str = "screen.media";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Teaching,
    Practice,
    Examination,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Teaching => "teaching",
            Mode::Practice => "practice",
            Mode::Examination => "examination",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Active,
    Completed,
    Aborted,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("task `{0}` has zero total weight and cannot be examined")]
    ZeroWeightExam(String),
    #[error("session is not active")]
    SessionNotActive,
    #[error("scores exist only for examination sessions")]
    WrongMode,
    #[error("session is still active")]
    SessionStillActive,
    #[error(transparent)]
    PartGraph(#[from] PartGraphError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("failed to persist exam record: {0}")]
    Storage(#[from] StoreError),
}

/// Millisecond wall clock, injectable so replays are deterministic.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now_ms(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SessionId {
    fn from(s: &str) -> Self {
        SessionId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub step_id: String,
    pub correct: bool,
    pub error_count: u32,
    pub completed_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: SessionId,
    pub user_id: String,
    pub course_id: String,
    pub mode: Mode,
    pub task_id: String,
    /// 1-based ordinal of the current step; N+1 once every step is done.
    pub step_cursor: u32,
    /// 1-based index of the next expected action within the current step.
    pub action_cursor: u32,
    pub part_state: PartStates,
    pub step_outcomes: Vec<StepOutcome>,
    /// Errors attributed to the current, not yet completed step.
    pub current_step_errors: u32,
    pub started_at: u64,
    pub ended_at: Option<u64>,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    WrongVerb,
    WrongTarget,
    OutOfTolerance,
    PrecedenceBlocked,
    WrongTool,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::WrongVerb => "wrong_verb",
            RejectReason::WrongTarget => "wrong_target",
            RejectReason::OutOfTolerance => "out_of_tolerance",
            RejectReason::PrecedenceBlocked => "precedence_blocked",
            RejectReason::WrongTool => "wrong_tool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum MatchOutcome {
    Progress {
        step_id: String,
        actions_done: u32,
        actions_total: u32,
    },
    StepCompleted {
        step_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        next_prompt: Option<String>,
    },
    Rejected {
        reason: RejectReason,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        blockers: Vec<String>,
    },
    TaskCompleted {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        score: Option<ScoreReport>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepStatus {
    Done,
    Current,
    Pending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLine {
    pub ordinal: u32,
    pub step_id: String,
    pub description: String,
    pub status: StepStatus,
}

/// What the pad's task-details view and the large screen show.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub session_id: SessionId,
    pub task_id: String,
    pub task_title: String,
    pub mode: Mode,
    pub status: SessionStatus,
    pub steps: Vec<StepLine>,
    pub current_step: Option<u32>,
    pub current_description: String,
    pub prompt_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_asset: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SessionRequest {
    pub session_id: SessionId,
    pub task_id: String,
    pub mode: Mode,
    pub user_id: String,
}

/// Collaborators a session publishes to and records with.
#[derive(Clone)]
pub struct SessionContext {
    pub bus: Arc<SignalBus>,
    pub recorder: Option<Arc<dyn ExamRecorder>>,
    pub clock: Arc<dyn Clock>,
}

impl SessionContext {
    pub fn new(bus: Arc<SignalBus>) -> Self {
        SessionContext {
            bus,
            recorder: None,
            clock: Arc::new(SystemClock),
        }
    }

    pub fn with_recorder(mut self, recorder: Arc<dyn ExamRecorder>) -> Self {
        self.recorder = Some(recorder);
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }
}

pub struct Session {
    config: Arc<CourseConfig>,
    task: Task,
    graph: PartGraph,
    state: SessionState,
    ctx: SessionContext,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("state", &self.state)
            .finish_non_exhaustive()
    }
}

impl Session {
    /// Resets the parts to the task's starting position and announces the
    /// first step according to the mode.
    pub fn start(config: Arc<CourseConfig>, req: SessionRequest, ctx: SessionContext) -> Result<Self, SessionError> {
        let task = config
            .task(&req.task_id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownTask(req.task_id.clone()))?;
        if req.mode == Mode::Examination && task.total_weight().partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(SessionError::ZeroWeightExam(req.task_id));
        }
        let graph = PartGraph::for_task(&config, &task)?;
        let part_state = graph.initial_state(&task);
        let state = SessionState {
            session_id: req.session_id,
            user_id: req.user_id,
            course_id: config.course_id.clone(),
            mode: req.mode,
            task_id: req.task_id,
            step_cursor: 1,
            action_cursor: 1,
            part_state,
            step_outcomes: Vec::new(),
            current_step_errors: 0,
            started_at: ctx.clock.now_ms(),
            ended_at: None,
            status: SessionStatus::Active,
        };
        let session = Session {
            config,
            task,
            graph,
            state,
            ctx,
        };
        session.publish(
            topics::TASK_STARTED,
            session.task.task_id.clone(),
            Payload::value(req.mode.as_str()),
        )?;
        if let Some(step) = session.task.steps.first() {
            session.announce(step)?;
        }
        Ok(session)
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn config(&self) -> &CourseConfig {
        &self.config
    }

    pub fn bus(&self) -> &Arc<SignalBus> {
        &self.ctx.bus
    }

    pub fn is_active(&self) -> bool {
        self.state.status == SessionStatus::Active
    }

    fn current_step(&self) -> Option<&Step> {
        self.task.steps.get(self.state.step_cursor as usize - 1)
    }

    fn step_target(&self, step: &Step) -> String {
        format!("{}/{}", self.task.task_id, step.step_id)
    }

    fn publish(&self, topic: &str, target: String, payload: Payload) -> Result<u64, SessionError> {
        Ok(self.ctx.bus.publish(topic, target, payload)?)
    }

    /// Text prompt the current mode shows for `step`.
    fn prompt_for(&self, step: &Step) -> Option<String> {
        match self.state.mode {
            Mode::Teaching => Some(step.teach_prompt.text.clone()),
            Mode::Practice => Some(step.description.clone()),
            Mode::Examination => None,
        }
    }

    fn announce(&self, step: &Step) -> Result<(), SessionError> {
        let target = self.step_target(step);
        match self.state.mode {
            Mode::Teaching => {
                self.publish(
                    topics::PROMPT_TEXT,
                    target.clone(),
                    Payload::value(step.teach_prompt.text.as_str()),
                )?;
                if let Some(audio) = &step.teach_prompt.audio_asset {
                    self.publish(topics::PROMPT_AUDIO, target, Payload::reference(audio.as_str()))?;
                }
            }
            Mode::Practice => {
                self.publish(topics::PROMPT_BRIEF, target, Payload::value(step.description.as_str()))?;
            }
            Mode::Examination => {}
        }
        Ok(())
    }

    /// Feeds one user action to the state machine.
    pub fn submit_action(&mut self, event: &UserActionEvent) -> Result<MatchOutcome, SessionError> {
        if !self.is_active() {
            return Err(SessionError::SessionNotActive);
        }
        let step = self.current_step().expect("active session has a current step").clone();
        let expected = &step.actions[self.state.action_cursor as usize - 1];

        if let Err((reason, blockers)) = self.match_event(expected, event)? {
            return self.reject(&step, expected, reason, blockers);
        }

        let before = self.state.part_state.get(&expected.target_part);
        self.state.part_state = self.graph.apply(&self.state.part_state, expected)?;
        let after = self.state.part_state.get(&expected.target_part);
        if before != after {
            if let Some(s) = after {
                let name = serde_json::to_value(s)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default();
                self.publish(topics::PARTS_STATE, expected.target_part.clone(), Payload::value(name))?;
            }
        }

        let done = self.state.action_cursor;
        let total = step.actions.len() as u32;
        self.publish(
            topics::STEP_PROGRESS,
            self.step_target(&step),
            Payload::value(done as f64),
        )?;
        self.state.action_cursor += 1;
        if done < total {
            return Ok(MatchOutcome::Progress {
                step_id: step.step_id.clone(),
                actions_done: done,
                actions_total: total,
            });
        }

        let errors = self.state.current_step_errors;
        // Caller clocks may lag the session clock; records never end before they start.
        let at = event.at.max(self.state.started_at);
        self.state.step_outcomes.push(StepOutcome {
            step_id: step.step_id.clone(),
            correct: self.state.mode != Mode::Examination || errors == 0,
            error_count: errors,
            completed_at: at,
        });
        self.state.current_step_errors = 0;
        self.state.step_cursor += 1;
        self.state.action_cursor = 1;
        self.publish(
            topics::STEP_COMPLETED,
            self.step_target(&step),
            Payload::value(step.ordinal as f64),
        )?;

        if let Some(next) = self.current_step().cloned() {
            self.announce(&next)?;
            return Ok(MatchOutcome::StepCompleted {
                step_id: step.step_id,
                next_prompt: self.prompt_for(&next),
            });
        }

        self.state.status = SessionStatus::Completed;
        self.state.ended_at = Some(at);
        let score = match self.state.mode {
            Mode::Examination => Some(self.report()),
            _ => None,
        };
        let payload = match &score {
            Some(report) => Payload::Command {
                name: "score_report".into(),
                args: report_args(report),
            },
            None => Payload::reference(self.task.task_id.as_str()),
        };
        self.publish(topics::TASK_COMPLETED, self.task.task_id.clone(), payload)?;
        if let Some(report) = &score {
            self.persist(report)?;
        }
        Ok(MatchOutcome::TaskCompleted { score })
    }

    /// `Ok(Err(..))` is a rejection; the outer error is reserved for engine faults.
    #[allow(clippy::type_complexity)]
    fn match_event(
        &self,
        expected: &AtomicActionSpec,
        event: &UserActionEvent,
    ) -> Result<Result<(), (RejectReason, Vec<String>)>, SessionError> {
        if event.target_part != expected.target_part {
            return Ok(Err((RejectReason::WrongTarget, Vec::new())));
        }
        if event.verb() != expected.verb() {
            return Ok(Err((RejectReason::WrongVerb, Vec::new())));
        }
        if let Some(tool) = &expected.tool {
            if event.tool.as_ref() != Some(tool) {
                return Ok(Err((RejectReason::WrongTool, Vec::new())));
            }
        }
        let in_spec = match (&expected.params, &event.measured) {
            (ActionParams::Rotate(spec), Measured::Rotate { angle_deg, direction }) => {
                *direction == spec.direction && (angle_deg - spec.angle_deg).abs() <= spec.tolerance_deg
            }
            (ActionParams::Press(spec), Measured::Press { hold_ms }) => *hold_ms >= spec.hold_ms,
            (ActionParams::Take(spec), Measured::Take { destination }) => *destination == spec.destination,
            (ActionParams::Hide, Measured::Hide) => true,
            _ => unreachable!("verbs already compared equal"),
        };
        if !in_spec {
            return Ok(Err((RejectReason::OutOfTolerance, Vec::new())));
        }
        match self.graph.check_allowed(&self.state.part_state, expected)? {
            Gate::Allowed => Ok(Ok(())),
            Gate::Blocked(blockers) => Ok(Err((RejectReason::PrecedenceBlocked, blockers))),
        }
    }

    fn reject(
        &mut self,
        step: &Step,
        expected: &AtomicActionSpec,
        reason: RejectReason,
        blockers: Vec<String>,
    ) -> Result<MatchOutcome, SessionError> {
        let target = self.step_target(step);
        self.publish(topics::STEP_REJECTED, target.clone(), Payload::value(reason.as_str()))?;
        match self.state.mode {
            Mode::Examination => self.state.current_step_errors += 1,
            Mode::Teaching => {
                let text = format!("Not quite. Next: {}.", expected.describe());
                self.publish(topics::PROMPT_TEXT, target, Payload::value(text))?;
            }
            Mode::Practice => {}
        }
        Ok(MatchOutcome::Rejected { reason, blockers })
    }

    fn error_total(&self) -> u32 {
        self.state.step_outcomes.iter().map(|o| o.error_count).sum::<u32>() + self.state.current_step_errors
    }

    fn report(&self) -> ScoreReport {
        score_report(&self.task, &self.state.step_outcomes, self.error_total())
    }

    /// Weighted score of a finished examination.
    pub fn compute_score(&self) -> Result<ScoreReport, SessionError> {
        if self.state.mode != Mode::Examination {
            return Err(SessionError::WrongMode);
        }
        if self.is_active() {
            return Err(SessionError::SessionStillActive);
        }
        Ok(self.report())
    }

    /// Ends the session early. Examinations are scored on what was completed
    /// and recorded.
    pub fn abort(&mut self) -> Result<&SessionState, SessionError> {
        if !self.is_active() {
            return Err(SessionError::SessionNotActive);
        }
        self.state.status = SessionStatus::Aborted;
        self.state.ended_at = Some(self.ctx.clock.now_ms());
        self.publish(
            topics::TASK_ABORTED,
            self.task.task_id.clone(),
            Payload::reference(self.task.task_id.as_str()),
        )?;
        if self.state.mode == Mode::Examination {
            let report = self.report();
            self.persist(&report)?;
        }
        Ok(&self.state)
    }

    fn persist(&self, report: &ScoreReport) -> Result<(), SessionError> {
        let Some(recorder) = &self.ctx.recorder else {
            return Ok(());
        };
        let s = &self.state;
        recorder.record(ExamRecord {
            record_id: format!("{}-exam", s.session_id),
            session_id: s.session_id.0.clone(),
            user_id: s.user_id.clone(),
            course_id: s.course_id.clone(),
            task_id: s.task_id.clone(),
            mode: s.mode,
            score_percent: report.score_percent,
            error_total: report.error_total,
            per_step: s.step_outcomes.clone(),
            started_at: s.started_at,
            ended_at: s.ended_at.unwrap_or(s.started_at),
            status: s.status,
        })?;
        Ok(())
    }

    /// Publishes a media asset for the large screen.
    pub fn show_media(&self, asset_id: &str) -> Result<u64, SessionError> {
        self.publish(topics::SCREEN_MEDIA, asset_id.to_string(), Payload::reference(asset_id))
    }

    pub fn current_view(&self) -> StepView {
        let active = self.is_active();
        let cursor = self.state.step_cursor;
        let steps = self
            .task
            .steps
            .iter()
            .map(|s| StepLine {
                ordinal: s.ordinal,
                step_id: s.step_id.clone(),
                description: s.description.clone(),
                status: if s.ordinal < cursor {
                    StepStatus::Done
                } else if s.ordinal == cursor && active {
                    StepStatus::Current
                } else {
                    StepStatus::Pending
                },
            })
            .collect();
        let current = if active { self.current_step() } else { None };
        StepView {
            session_id: self.state.session_id.clone(),
            task_id: self.task.task_id.clone(),
            task_title: self.task.title.clone(),
            mode: self.state.mode,
            status: self.state.status,
            steps,
            current_step: current.map(|s| s.ordinal),
            current_description: current.map(|s| s.description.clone()).unwrap_or_default(),
            prompt_text: current.and_then(|s| self.prompt_for(s)).unwrap_or_default(),
            audio_asset: match self.state.mode {
                Mode::Teaching => current.and_then(|s| s.teach_prompt.audio_asset.clone()),
                _ => None,
            },
        }
    }
}

fn report_args(report: &ScoreReport) -> BTreeMap<String, serde_json::Value> {
    match serde_json::to_value(report) {
        Ok(serde_json::Value::Object(map)) => map.into_iter().collect(),
        _ => BTreeMap::new(),
    }
}
