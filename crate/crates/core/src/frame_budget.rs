//! Analytic render-cost model: draw calls under dynamic vs. static batching,
//! and frame pacing with vertical sync on or off.
//!
//! Dynamic batching groups objects by material and packs each group first-fit,
//! in declared order, into batches whose summed vertex count stays within a
//! budget. Static batching collapses all static objects of one material into a
//! single call. With vsync, a frame is held until the next refresh boundary.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

pub const DEFAULT_VERTEX_BUDGET: u32 = 900;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FrameBudgetError {
    #[error("duplicate object id `{0}`")]
    DuplicateObject(String),
    #[error("object `{0}` must have at least one vertex")]
    ZeroVertices(String),
    #[error("dynamic batch vertex budget must be positive")]
    ZeroBudget,
    #[error("refresh rate must be positive, got {0}")]
    InvalidRefreshRate(f64),
    #[error("workload must contain at least one frame")]
    EmptyWorkload,
    #[error("frame {index} has non-positive work time {value}")]
    InvalidWorkTime { index: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderObject {
    pub object_id: String,
    pub material_id: String,
    pub vertex_count: u32,
    pub is_static: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneDescriptor {
    pub objects: Vec<RenderObject>,
    pub dynamic_batch_vertex_budget: u32,
}

impl SceneDescriptor {
    pub fn new(objects: Vec<RenderObject>) -> Self {
        SceneDescriptor {
            objects,
            dynamic_batch_vertex_budget: DEFAULT_VERTEX_BUDGET,
        }
    }

    /// Scene files are a bare JSON list of objects.
    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        Ok(SceneDescriptor::new(serde_json::from_slice(bytes)?))
    }

    pub fn validate(&self) -> Result<(), FrameBudgetError> {
        if self.dynamic_batch_vertex_budget == 0 {
            return Err(FrameBudgetError::ZeroBudget);
        }
        let mut seen = HashSet::new();
        for o in &self.objects {
            if !seen.insert(o.object_id.as_str()) {
                return Err(FrameBudgetError::DuplicateObject(o.object_id.clone()));
            }
            if o.vertex_count == 0 {
                return Err(FrameBudgetError::ZeroVertices(o.object_id.clone()));
            }
        }
        Ok(())
    }

    pub fn material_count(&self) -> usize {
        self.objects
            .iter()
            .map(|o| o.material_id.as_str())
            .collect::<HashSet<_>>()
            .len()
    }

    pub fn static_fraction(&self) -> f64 {
        if self.objects.is_empty() {
            return 0.0;
        }
        self.objects.iter().filter(|o| o.is_static).count() as f64 / self.objects.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchingMode {
    AllDynamic,
    StaticBatching,
}

impl BatchingMode {
    pub fn label(self) -> &'static str {
        match self {
            BatchingMode::AllDynamic => "all dynamic load",
            BatchingMode::StaticBatching => "with static load",
        }
    }
}

/// First-fit packing in declared order; returns the number of batches.
/// An object larger than the budget gets a batch of its own.
pub fn first_fit_batches(vertex_counts: &[u32], budget: u32) -> usize {
    let mut bins: Vec<u64> = Vec::new();
    for &v in vertex_counts {
        let v = v as u64;
        match bins.iter_mut().find(|used| **used + v <= budget as u64) {
            Some(used) => *used += v,
            None => bins.push(v),
        }
    }
    bins.len()
}

pub fn estimate_draw_calls(scene: &SceneDescriptor, mode: BatchingMode) -> Result<usize, FrameBudgetError> {
    scene.validate()?;
    let mut dynamic: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    let mut static_materials: HashSet<&str> = HashSet::new();
    for o in &scene.objects {
        if mode == BatchingMode::StaticBatching && o.is_static {
            static_materials.insert(o.material_id.as_str());
        } else {
            dynamic.entry(o.material_id.as_str()).or_default().push(o.vertex_count);
        }
    }
    let dynamic_calls: usize = dynamic
        .values()
        .map(|counts| first_fit_batches(counts, scene.dynamic_batch_vertex_budget))
        .sum();
    Ok(static_materials.len() + dynamic_calls)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub max_frame_time_ms: f64,
    pub avg_frame_time_ms: f64,
    /// Rate of the fastest presented frame, `1000 / min frame time`.
    pub max_frame_rate_fps: f64,
    /// `1000 / avg_frame_time_ms`.
    pub avg_frame_rate_fps: f64,
    pub frame_count: usize,
}

impl FrameStats {
    pub fn from_frame_times(times: &[f64]) -> Result<Self, FrameBudgetError> {
        if times.is_empty() {
            return Err(FrameBudgetError::EmptyWorkload);
        }
        let max = times.iter().copied().fold(f64::MIN, f64::max);
        let min = times.iter().copied().fold(f64::MAX, f64::min);
        let avg = times.iter().sum::<f64>() / times.len() as f64;
        Ok(FrameStats {
            max_frame_time_ms: max,
            avg_frame_time_ms: avg,
            max_frame_rate_fps: 1000.0 / min,
            avg_frame_rate_fps: 1000.0 / avg,
            frame_count: times.len(),
        })
    }
}

/// Relative slack for deciding that a work time already sits on a refresh
/// boundary; absorbs floating-point noise only.
const BOUNDARY_EPS: f64 = 1e-9;

/// Presented frame times for a workload.
pub fn presented_frame_times(work_ms: &[f64], refresh_hz: f64, vsync: bool) -> Result<Vec<f64>, FrameBudgetError> {
    if !(refresh_hz.is_finite() && refresh_hz > 0.0) {
        return Err(FrameBudgetError::InvalidRefreshRate(refresh_hz));
    }
    if work_ms.is_empty() {
        return Err(FrameBudgetError::EmptyWorkload);
    }
    if let Some((index, &value)) = work_ms.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
        return Err(FrameBudgetError::InvalidWorkTime { index, value });
    }
    if !vsync {
        return Ok(work_ms.to_vec());
    }
    let period = 1000.0 / refresh_hz;
    Ok(work_ms
        .iter()
        .map(|w| {
            let intervals = (w / period * (1.0 - BOUNDARY_EPS)).ceil().max(1.0);
            intervals * period
        })
        .collect())
}

pub fn simulate_frames(work_ms: &[f64], refresh_hz: f64, vsync: bool) -> Result<FrameStats, FrameBudgetError> {
    FrameStats::from_frame_times(&presented_frame_times(work_ms, refresh_hz, vsync)?)
}
