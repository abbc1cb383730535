use serde::{Deserialize, Serialize};

use super::StepOutcome;
use crate::config::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepScore {
    pub step_id: String,
    pub weight: f64,
    pub earned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_step: Vec<StepScore>,
    pub total_weight: f64,
    pub score_percent: f64,
    pub error_total: u32,
}

/// Weighted score over every step of `task`: a step earns its weight when it
/// has a correct outcome; uncompleted steps earn nothing.
pub fn score_report(task: &Task, outcomes: &[StepOutcome], error_total: u32) -> ScoreReport {
    let per_step: Vec<StepScore> = task
        .steps
        .iter()
        .map(|step| StepScore {
            step_id: step.step_id.clone(),
            weight: step.weight,
            earned: outcomes.iter().any(|o| o.step_id == step.step_id && o.correct),
        })
        .collect();
    let total_weight: f64 = per_step.iter().map(|s| s.weight).sum();
    let earned: f64 = per_step.iter().filter(|s| s.earned).map(|s| s.weight).sum();
    let score_percent = if total_weight > 0.0 {
        (100.0 * earned / total_weight).clamp(0.0, 100.0)
    } else {
        0.0
    };
    ScoreReport {
        per_step,
        total_weight,
        score_percent,
        error_total,
    }
}
