use std::collections::{HashMap, HashSet};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graphmap::DiGraphMap;
use serde::{Deserialize, Serialize};

use super::{parse_config, ActionParams, AssetKind, CourseConfig, PromptSpec, Task, SCHEMA_VERSION};
use crate::part_graph::{Gate, PartGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: String,
    /// Slash-separated location inside the document, e.g. `/chapters/0/tasks/1`.
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    fn error(code: &str, path: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            code: code.to_string(),
            path: path.into(),
            message: message.into(),
        }
    }

    fn warning(code: &str, path: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            ..Diagnostic::error(code, path, message)
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}[{}] {}: {}", self.code, self.path, self.message)
    }
}

/// Parses and validates in one go, folding parse failures into a diagnostic.
pub fn check_bytes(bytes: &[u8]) -> Vec<Diagnostic> {
    match parse_config(bytes) {
        Ok(cfg) => validate(&cfg),
        Err(e) => vec![Diagnostic::error(e.code(), "/", e.to_string())],
    }
}

/// Runs every semantic rule. An empty or warnings-only result means every
/// task in the course can be started by the session engine.
pub fn validate(config: &CourseConfig) -> Vec<Diagnostic> {
    let mut v = Validator {
        config,
        out: Vec::new(),
    };
    v.header();
    let parts = v.parts();
    let assets = v.assets();
    let cyclic = v.constraints(&parts);
    v.chapters(&parts, &assets, cyclic);
    v.out
}

struct Validator<'a> {
    config: &'a CourseConfig,
    out: Vec<Diagnostic>,
}

impl<'a> Validator<'a> {
    fn push(&mut self, d: Diagnostic) {
        self.out.push(d);
    }

    fn header(&mut self) {
        if self.config.course_id.trim().is_empty() {
            self.push(Diagnostic::error(
                "EMPTY_ID",
                "/course_id",
                "course_id must not be empty",
            ));
        }
        if self.config.schema_version != SCHEMA_VERSION {
            self.push(Diagnostic::error(
                "BAD_SCHEMA_VERSION",
                "/schema_version",
                format!(
                    "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                    self.config.schema_version
                ),
            ));
        }
    }

    fn unique_ids<'i>(&mut self, ids: impl Iterator<Item = (&'i str, String)>, what: &str) -> HashSet<&'i str> {
        let mut seen = HashSet::new();
        for (id, path) in ids {
            if id.trim().is_empty() {
                self.push(Diagnostic::error(
                    "EMPTY_ID",
                    path,
                    format!("{what} id must not be empty"),
                ));
            } else if !seen.insert(id) {
                self.push(Diagnostic::error(
                    "DUPLICATE_ID",
                    path,
                    format!("{what} id `{id}` is declared more than once"),
                ));
            }
        }
        seen
    }

    fn parts(&mut self) -> HashSet<&'a str> {
        let cfg = self.config;
        self.unique_ids(
            cfg.parts
                .iter()
                .enumerate()
                .map(|(i, p)| (p.part_id.as_str(), format!("/parts/{i}/part_id"))),
            "part",
        )
    }

    fn assets(&mut self) -> HashMap<&'a str, AssetKind> {
        let cfg = self.config;
        let ids = self.unique_ids(
            cfg.assets
                .iter()
                .enumerate()
                .map(|(i, a)| (a.asset_id.as_str(), format!("/assets/{i}/asset_id"))),
            "asset",
        );
        for (i, asset) in cfg.assets.iter().enumerate() {
            if asset.uri.trim().is_empty() {
                self.push(Diagnostic::error(
                    "EMPTY_URI",
                    format!("/assets/{i}/uri"),
                    format!("asset `{}` has an empty uri", asset.asset_id),
                ));
            }
        }
        cfg.assets
            .iter()
            .filter(|a| ids.contains(a.asset_id.as_str()))
            .map(|a| (a.asset_id.as_str(), a.kind))
            .collect()
    }

    /// Returns true when the precedence relation is unusable (cyclic).
    fn constraints(&mut self, parts: &HashSet<&str>) -> bool {
        let cfg = self.config;
        let mut graph: DiGraphMap<&str, ()> = DiGraphMap::new();
        let mut seen = HashSet::new();
        let mut unusable = false;
        for (i, c) in cfg.constraints.iter().enumerate() {
            let base = format!("/constraints/{i}");
            let mut ok = true;
            for (field, id) in [("blocker", &c.blocker), ("blocked", &c.blocked)] {
                if !parts.contains(id.as_str()) {
                    ok = false;
                    self.push(Diagnostic::error(
                        "DANGLING_PART",
                        format!("{base}/{field}"),
                        format!("constraint refers to undeclared part `{id}`"),
                    ));
                }
            }
            if c.blocker == c.blocked {
                unusable = true;
                self.push(Diagnostic::error(
                    "SELF_PRECEDENCE",
                    base,
                    format!("part `{}` cannot block itself", c.blocker),
                ));
                continue;
            }
            if !seen.insert((c.blocker.as_str(), c.blocked.as_str())) {
                self.push(Diagnostic::warning(
                    "DUPLICATE_CONSTRAINT",
                    base,
                    format!("constraint {} -> {} repeats an earlier one", c.blocker, c.blocked),
                ));
            }
            if ok {
                graph.add_edge(c.blocker.as_str(), c.blocked.as_str(), ());
            }
        }
        for scc in tarjan_scc(&graph) {
            if scc.len() > 1 {
                unusable = true;
                let mut members: Vec<&str> = scc.clone();
                members.sort_unstable();
                self.push(Diagnostic::error(
                    "PRECEDENCE_CYCLE",
                    "/constraints",
                    format!("precedence cycle among parts: {}", members.join(", ")),
                ));
            }
        }
        unusable
    }

    fn chapters(&mut self, parts: &HashSet<&str>, assets: &HashMap<&str, AssetKind>, cyclic: bool) {
        let cfg = self.config;
        self.unique_ids(
            cfg.chapters
                .iter()
                .enumerate()
                .map(|(i, c)| (c.chapter_id.as_str(), format!("/chapters/{i}/chapter_id"))),
            "chapter",
        );
        self.unique_ids(
            cfg.chapters.iter().enumerate().flat_map(|(ci, c)| {
                c.tasks
                    .iter()
                    .enumerate()
                    .map(move |(ti, t)| (t.task_id.as_str(), format!("/chapters/{ci}/tasks/{ti}/task_id")))
            }),
            "task",
        );
        for (ci, chapter) in cfg.chapters.iter().enumerate() {
            if chapter.tasks.is_empty() {
                self.push(Diagnostic::error(
                    "EMPTY_CHAPTER",
                    format!("/chapters/{ci}/tasks"),
                    format!("chapter `{}` has no tasks", chapter.chapter_id),
                ));
            }
            for (ti, task) in chapter.tasks.iter().enumerate() {
                self.task(&format!("/chapters/{ci}/tasks/{ti}"), task, parts, assets, cyclic);
            }
        }
    }

    fn prompt(&mut self, path: String, prompt: &PromptSpec, assets: &HashMap<&str, AssetKind>) {
        let Some(id) = &prompt.audio_asset else { return };
        match assets.get(id.as_str()) {
            None => self.push(Diagnostic::error(
                "DANGLING_ASSET",
                path,
                format!("prompt refers to undeclared asset `{id}`"),
            )),
            Some(AssetKind::Audio) => {}
            Some(kind) => self.push(Diagnostic::error(
                "ASSET_KIND_MISMATCH",
                path,
                format!("prompt audio asset `{id}` has kind {kind:?}, expected Audio"),
            )),
        }
    }

    fn task(
        &mut self,
        base: &str,
        task: &Task,
        parts: &HashSet<&str>,
        assets: &HashMap<&str, AssetKind>,
        cyclic: bool,
    ) {
        let errors_before = self.error_count();

        if task.steps.is_empty() {
            self.push(Diagnostic::error(
                "EMPTY_TASK",
                format!("{base}/steps"),
                format!("task `{}` has no steps", task.task_id),
            ));
        }
        for part_id in task.initial_state.keys() {
            if !parts.contains(part_id.as_str()) {
                self.push(Diagnostic::error(
                    "DANGLING_PART",
                    format!("{base}/initial_state/{part_id}"),
                    format!("initial state refers to undeclared part `{part_id}`"),
                ));
            }
        }
        self.unique_ids(
            task.steps
                .iter()
                .enumerate()
                .map(|(si, s)| (s.step_id.as_str(), format!("{base}/steps/{si}/step_id"))),
            "step",
        );

        for (si, step) in task.steps.iter().enumerate() {
            let sbase = format!("{base}/steps/{si}");
            let expected = si as u32 + 1;
            if step.ordinal != expected {
                self.push(Diagnostic::error(
                    "ORDINAL_GAP",
                    format!("{sbase}/ordinal"),
                    format!("step ordinal {} found where {expected} was expected", step.ordinal),
                ));
            }
            if !(step.weight.is_finite() && step.weight >= 0.0) {
                self.push(Diagnostic::error(
                    "NEGATIVE_WEIGHT",
                    format!("{sbase}/weight"),
                    format!("step weight {} must be a finite number >= 0", step.weight),
                ));
            }
            self.prompt(format!("{sbase}/teach_prompt/audio_asset"), &step.teach_prompt, assets);
            self.prompt(
                format!("{sbase}/practice_prompt/audio_asset"),
                &step.practice_prompt,
                assets,
            );
            if step.actions.is_empty() {
                self.push(Diagnostic::error(
                    "EMPTY_STEP",
                    format!("{sbase}/actions"),
                    format!("step `{}` has no actions", step.step_id),
                ));
            }
            for (ai, action) in step.actions.iter().enumerate() {
                let abase = format!("{sbase}/actions/{ai}");
                let target = action.target_part.as_str();
                if !parts.contains(target) {
                    self.push(Diagnostic::error(
                        "DANGLING_PART",
                        format!("{abase}/target_part"),
                        format!("action targets undeclared part `{target}`"),
                    ));
                } else if !task.initial_state.contains_key(target) {
                    self.push(Diagnostic::error(
                        "MISSING_INITIAL_STATE",
                        format!("{abase}/target_part"),
                        format!("part `{target}` is acted on but absent from the task's initial_state"),
                    ));
                }
                if let ActionParams::Rotate(r) = &action.params {
                    if !(r.tolerance_deg.is_finite() && r.tolerance_deg > 0.0) {
                        self.push(Diagnostic::error(
                            "BAD_TOLERANCE",
                            format!("{abase}/params/tolerance_deg"),
                            format!("rotation tolerance {} must be > 0", r.tolerance_deg),
                        ));
                    }
                    if !(r.angle_deg > 0.0 && r.angle_deg <= 3600.0) {
                        self.push(Diagnostic::error(
                            "BAD_ANGLE",
                            format!("{abase}/params/angle_deg"),
                            format!("rotation angle {} must lie in (0, 3600]", r.angle_deg),
                        ));
                    }
                }
                if let Some(tool) = &action.tool {
                    if !parts.contains(tool.as_str()) {
                        self.push(Diagnostic::warning(
                            "UNKNOWN_TOOL",
                            format!("{abase}/tool"),
                            format!("tool `{tool}` is not a declared part"),
                        ));
                    }
                }
            }
        }

        if !task.steps.is_empty() && task.steps.iter().all(|s| s.weight == 0.0) {
            self.push(Diagnostic::error(
                "ZERO_WEIGHT_TASK",
                format!("{base}/steps"),
                format!("task `{}` cannot be examined: every step weight is zero", task.task_id),
            ));
        }

        // Replaying the steps in order must never hit a precedence block; only
        // meaningful once the task's references all resolve.
        if !cyclic && self.error_count() == errors_before {
            self.replay_order(base, task);
        }
    }

    fn replay_order(&mut self, base: &str, task: &Task) {
        let graph = match PartGraph::for_task(self.config, task) {
            Ok(g) => g,
            Err(_) => return,
        };
        let mut state = graph.initial_state(task);
        for (si, step) in task.steps.iter().enumerate() {
            for (ai, action) in step.actions.iter().enumerate() {
                match graph.check_allowed(&state, action) {
                    Ok(Gate::Allowed) => {
                        state = graph.apply(&state, action).expect("allowed action applies");
                    }
                    Ok(Gate::Blocked(blockers)) => {
                        self.push(Diagnostic::error(
                            "STEP_ORDER_BLOCKED",
                            format!("{base}/steps/{si}/actions/{ai}"),
                            format!(
                                "`{}` cannot be acted on in step order: blocked by {}",
                                action.target_part,
                                blockers.join(", ")
                            ),
                        ));
                        return;
                    }
                    Err(_) => return,
                }
            }
        }
    }

    fn error_count(&self) -> usize {
        self.out.iter().filter(|d| d.is_error()).count()
    }
}
