//! Course configuration: the tutorial entity.
//!
//! A course is a JSON document (`*.course.json`) with a strict schema. It
//! declares chapters of tasks, each task an ordered list of weighted steps made
//! of atomic actions, plus the parts, media assets and precedence constraints
//! those steps refer to. New courses are pure data; nothing here is specific
//! to one engine model.

mod parse;
mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use parse::{parse_config, serialize, ParseError};
pub use validate::{check_bytes, validate, Diagnostic, Severity};

/// The only schema version this build understands.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CourseConfig {
    pub course_id: String,
    pub title: String,
    pub schema_version: u32,
    pub chapters: Vec<Chapter>,
    pub assets: Vec<MediaAsset>,
    pub parts: Vec<PartDecl>,
    pub constraints: Vec<PrecedenceDecl>,
}

impl CourseConfig {
    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.chapters.iter().flat_map(|c| c.tasks.iter())
    }

    pub fn task(&self, task_id: &str) -> Option<&Task> {
        self.tasks().find(|t| t.task_id == task_id)
    }

    pub fn asset(&self, asset_id: &str) -> Option<&MediaAsset> {
        self.assets.iter().find(|a| a.asset_id == asset_id)
    }

    pub fn part(&self, part_id: &str) -> Option<&PartDecl> {
        self.parts.iter().find(|p| p.part_id == part_id)
    }

    pub fn step_count(&self) -> usize {
        self.tasks().map(|t| t.steps.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Chapter {
    pub chapter_id: String,
    pub title: String,
    pub tasks: Vec<Task>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Disassembly,
    Assembly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attachment {
    Attached,
    Detached,
    Hidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub task_id: String,
    pub title: String,
    pub kind: TaskKind,
    pub steps: Vec<Step>,
    /// Attachment state the engine is reset to when the task starts.
    pub initial_state: BTreeMap<String, Attachment>,
}

impl Task {
    pub fn total_weight(&self) -> f64 {
        self.steps.iter().map(|s| s.weight).sum()
    }

    pub fn actions(&self) -> impl Iterator<Item = &AtomicActionSpec> {
        self.steps.iter().flat_map(|s| s.actions.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub step_id: String,
    pub ordinal: u32,
    pub description: String,
    pub weight: f64,
    pub teach_prompt: PromptSpec,
    pub practice_prompt: PromptSpec,
    pub actions: Vec<AtomicActionSpec>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSpec {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_asset: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Rotate,
    Press,
    Take,
    Hide,
}

impl Verb {
    pub const ALL: [Verb; 4] = [Verb::Rotate, Verb::Press, Verb::Take, Verb::Hide];

    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Rotate => "rotate",
            Verb::Press => "press",
            Verb::Take => "take",
            Verb::Hide => "hide",
        }
    }

    pub fn from_name(name: &str) -> Option<Verb> {
        Verb::ALL.into_iter().find(|v| v.as_str() == name)
    }
}

impl std::fmt::Display for Verb {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotateDirection {
    Cw,
    Ccw,
}

impl RotateDirection {
    pub fn reversed(self) -> Self {
        match self {
            RotateDirection::Cw => RotateDirection::Ccw,
            RotateDirection::Ccw => RotateDirection::Cw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Destination {
    Bench,
    Toolbox,
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotateParams {
    pub angle_deg: f64,
    pub direction: RotateDirection,
    pub tolerance_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PressParams {
    pub hold_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TakeParams {
    pub destination: Destination,
}

/// Verb together with its verb-specific parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionParams {
    Rotate(RotateParams),
    Press(PressParams),
    Take(TakeParams),
    Hide,
}

impl ActionParams {
    pub fn verb(&self) -> Verb {
        match self {
            ActionParams::Rotate(_) => Verb::Rotate,
            ActionParams::Press(_) => Verb::Press,
            ActionParams::Take(_) => Verb::Take,
            ActionParams::Hide => Verb::Hide,
        }
    }
}

/// One expected atomic action.
///
/// On disk: `{"verb": "rotate", "target_part": "...", "params": {...}, "tool": "..."}`
/// where `params` has the shape of the verb (`{}` or absent for `hide`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "parse::RawAction", into = "parse::RawAction")]
pub struct AtomicActionSpec {
    pub target_part: String,
    pub params: ActionParams,
    pub tool: Option<String>,
}

impl AtomicActionSpec {
    pub fn verb(&self) -> Verb {
        self.params.verb()
    }

    /// Human-readable rendering used for corrective prompts.
    pub fn describe(&self) -> String {
        let mut out = match &self.params {
            ActionParams::Rotate(r) => format!(
                "rotate {} {}° {}",
                self.target_part,
                fmt_number(r.angle_deg),
                match r.direction {
                    RotateDirection::Cw => "clockwise",
                    RotateDirection::Ccw => "counter-clockwise",
                }
            ),
            ActionParams::Press(p) => format!("press {} for {} ms", self.target_part, p.hold_ms),
            ActionParams::Take(t) => format!(
                "take {} to {}",
                self.target_part,
                match t.destination {
                    Destination::Bench => "the bench",
                    Destination::Toolbox => "the toolbox",
                    Destination::Free => "its position",
                }
            ),
            ActionParams::Hide => format!("hide {}", self.target_part),
        };
        if let Some(tool) = &self.tool {
            out.push_str(" using ");
            out.push_str(tool);
        }
        out
    }
}

fn fmt_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssetKind {
    Video,
    Image,
    Audio,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediaAsset {
    pub asset_id: String,
    pub kind: AssetKind,
    /// Opaque locator; never fetched by the engine.
    pub uri: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartDecl {
    pub part_id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh_ref: Option<String>,
}

/// `blocker` must be off the assembly before `blocked` may be acted on when
/// disassembling; the relation is reversed when assembling.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecedenceDecl {
    pub blocker: String,
    pub blocked: String,
}
