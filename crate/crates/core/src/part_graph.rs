//! Physical-entity state: which parts are on the assembly, and which parts
//! must come off (or go on) before others.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::{AtomicActionSpec, Attachment, CourseConfig, Task, TaskKind, Verb};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PartGraphError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("unknown part `{0}`")]
    UnknownPart(String),
    #[error("precedence relation contains a cycle")]
    Cycle,
    #[error("action on `{target}` is blocked by {blockers:?}")]
    NotAllowed { target: String, blockers: Vec<String> },
}

/// Outcome of a precedence check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Gate {
    Allowed,
    /// Parts that still have to change state first, sorted by id.
    Blocked(Vec<String>),
}

/// Attachment state of every part in a graph.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartStates(BTreeMap<String, Attachment>);

impl PartStates {
    pub fn get(&self, part_id: &str) -> Option<Attachment> {
        self.0.get(part_id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Attachment)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_map(&self) -> &BTreeMap<String, Attachment> {
        &self.0
    }
}

impl From<BTreeMap<String, Attachment>> for PartStates {
    fn from(map: BTreeMap<String, Attachment>) -> Self {
        PartStates(map)
    }
}

impl FromIterator<(String, Attachment)> for PartStates {
    fn from_iter<I: IntoIterator<Item = (String, Attachment)>>(iter: I) -> Self {
        PartStates(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartGraph {
    parts: BTreeSet<String>,
    /// (blocker, blocked) pairs in disassembly orientation.
    precedence: BTreeSet<(String, String)>,
    direction: TaskKind,
}

/// Builds the graph and the starting state for one task of a course.
pub fn build(config: &CourseConfig, task_id: &str) -> Result<(PartGraph, PartStates), PartGraphError> {
    let task = config
        .task(task_id)
        .ok_or_else(|| PartGraphError::UnknownTask(task_id.to_string()))?;
    let graph = PartGraph::for_task(config, task)?;
    let state = graph.initial_state(task);
    Ok((graph, state))
}

impl PartGraph {
    pub fn new(
        parts: impl IntoIterator<Item = String>,
        precedence: impl IntoIterator<Item = (String, String)>,
        direction: TaskKind,
    ) -> Result<Self, PartGraphError> {
        let parts: BTreeSet<String> = parts.into_iter().collect();
        let precedence: BTreeSet<(String, String)> = precedence.into_iter().collect();
        for (a, b) in &precedence {
            for id in [a, b] {
                if !parts.contains(id) {
                    return Err(PartGraphError::UnknownPart(id.clone()));
                }
            }
        }
        let graph = PartGraph {
            parts,
            precedence,
            direction,
        };
        if graph.has_cycle() {
            return Err(PartGraphError::Cycle);
        }
        Ok(graph)
    }

    /// The graph's parts are the task's initial_state domain; course-level
    /// constraints apply wherever both members are present.
    pub fn for_task(config: &CourseConfig, task: &Task) -> Result<Self, PartGraphError> {
        let parts: BTreeSet<String> = task.initial_state.keys().cloned().collect();
        if let Some(unknown) = parts.iter().find(|p| config.part(p).is_none()) {
            return Err(PartGraphError::UnknownPart(unknown.clone()));
        }
        let precedence: Vec<(String, String)> = config
            .constraints
            .iter()
            .filter(|c| parts.contains(&c.blocker) && parts.contains(&c.blocked))
            .map(|c| (c.blocker.clone(), c.blocked.clone()))
            .collect();
        PartGraph::new(parts, precedence, task.kind)
    }

    pub fn initial_state(&self, task: &Task) -> PartStates {
        self.parts
            .iter()
            .map(|p| {
                (
                    p.clone(),
                    task.initial_state.get(p).copied().unwrap_or(Attachment::Attached),
                )
            })
            .collect()
    }

    pub fn direction(&self) -> TaskKind {
        self.direction
    }

    pub fn parts(&self) -> impl Iterator<Item = &str> {
        self.parts.iter().map(String::as_str)
    }

    pub fn edge_count(&self) -> usize {
        self.precedence.len()
    }

    pub fn contains(&self, part_id: &str) -> bool {
        self.parts.contains(part_id)
    }

    /// Decides whether `action` may be performed in `state`.
    ///
    /// Disassembly: every blocker of the target must be Detached or Hidden.
    /// Assembly: every part the target blocks must be Attached or Hidden.
    /// Hiding is always allowed.
    pub fn check_allowed(&self, state: &PartStates, action: &AtomicActionSpec) -> Result<Gate, PartGraphError> {
        self.gate(state, action.verb(), &action.target_part)
    }

    pub fn gate(&self, state: &PartStates, verb: Verb, target: &str) -> Result<Gate, PartGraphError> {
        if !self.parts.contains(target) {
            return Err(PartGraphError::UnknownPart(target.to_string()));
        }
        if verb == Verb::Hide {
            return Ok(Gate::Allowed);
        }
        let pending: Vec<String> = match self.direction {
            TaskKind::Disassembly => self
                .precedence
                .iter()
                .filter(|(_, blocked)| blocked == target)
                .filter(|(blocker, _)| state.get(blocker) == Some(Attachment::Attached))
                .map(|(blocker, _)| blocker.clone())
                .collect(),
            TaskKind::Assembly => self
                .precedence
                .iter()
                .filter(|(blocker, _)| blocker == target)
                .filter(|(_, blocked)| state.get(blocked) == Some(Attachment::Detached))
                .map(|(_, blocked)| blocked.clone())
                .collect(),
        };
        if pending.is_empty() {
            Ok(Gate::Allowed)
        } else {
            Ok(Gate::Blocked(pending))
        }
    }

    /// Returns the state after `action`; the input is left untouched.
    pub fn apply(&self, state: &PartStates, action: &AtomicActionSpec) -> Result<PartStates, PartGraphError> {
        self.apply_verb(state, action.verb(), &action.target_part)
    }

    pub fn apply_verb(&self, state: &PartStates, verb: Verb, target: &str) -> Result<PartStates, PartGraphError> {
        if let Gate::Blocked(blockers) = self.gate(state, verb, target)? {
            return Err(PartGraphError::NotAllowed {
                target: target.to_string(),
                blockers,
            });
        }
        let mut next = state.clone();
        let new_state = match (verb, self.direction) {
            (Verb::Take, TaskKind::Disassembly) => Some(Attachment::Detached),
            (Verb::Take, TaskKind::Assembly) => Some(Attachment::Attached),
            (Verb::Hide, _) => Some(Attachment::Hidden),
            (Verb::Rotate | Verb::Press, _) => None,
        };
        if let Some(s) = new_state {
            next.0.insert(target.to_string(), s);
        }
        Ok(next)
    }

    fn has_cycle(&self) -> bool {
        // Kahn's algorithm: a cycle exists iff some node never reaches in-degree 0.
        let mut indegree: BTreeMap<&str, usize> = self.parts.iter().map(|p| (p.as_str(), 0)).collect();
        for (_, blocked) in &self.precedence {
            *indegree.get_mut(blocked.as_str()).expect("validated member") += 1;
        }
        let mut ready: Vec<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(p, _)| *p).collect();
        let mut seen = 0;
        while let Some(node) = ready.pop() {
            seen += 1;
            for (blocker, blocked) in &self.precedence {
                if blocker == node {
                    let d = indegree.get_mut(blocked.as_str()).expect("validated member");
                    *d -= 1;
                    if *d == 0 {
                        ready.push(blocked);
                    }
                }
            }
        }
        seen != self.parts.len()
    }
}
