//! Cost-to-go estimates for the fine planner: baselines and the learned
//! abstract-map heuristic.

mod abstract_map;
mod steps;
mod train;

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::costmap::{CostKind, CostMap};
use crate::error::{Error, Result};
use crate::planner::{Goal, PlanningWorld, StepPolicy};
use crate::robot::{RobotSpec, RobotState};

pub use abstract_map::{build_abstract_map, pooled_features, AbstractMap, InformedHeuristic, ABSTRACT_THETA_BINS, FEATURE_IDS};
pub use steps::StepBound;
pub use train::{generate_tasks, train_heuristic, HeuristicModel, BUNDLED_MODEL, TrainingConfig, TrainingReport, TrainingTask, ValidationMetrics};

/// Smallest per-meter cost of any drive: base and foot costs are both ≥ 1.
pub const MIN_COST_PER_METER: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicKind {
    #[default]
    Euclidean,
    GridDijkstra,
    AbstractInformed,
}

impl HeuristicKind {
    pub fn name(self) -> &'static str {
        match self {
            HeuristicKind::Euclidean => "euclidean",
            HeuristicKind::GridDijkstra => "grid_dijkstra",
            HeuristicKind::AbstractInformed => "abstract_informed",
        }
    }
}

impl std::str::FromStr for HeuristicKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(HeuristicKind::Euclidean),
            "grid_dijkstra" => Ok(HeuristicKind::GridDijkstra),
            "abstract_informed" => Ok(HeuristicKind::AbstractInformed),
            other => Err(Error::InvalidRequest(format!("unknown heuristic {other:?}"))),
        }
    }
}

pub trait Heuristic {
    /// Estimated cost from `state` to the goal region; may be infinite.
    fn estimate(&self, state: &RobotState) -> f64;

    /// True only when the goal is provably unreachable from `state`; the
    /// search drops such states. An infinite estimate alone is not a proof.
    fn dead_end(&self, _state: &RobotState) -> bool {
        false
    }
}

/// Straight-line distance to the goal region times the minimum per-meter cost.
#[derive(Debug, Clone, Copy)]
pub struct Euclidean {
    pub goal: Goal,
}

impl Heuristic for Euclidean {
    fn estimate(&self, s: &RobotState) -> f64 {
        let d = (s.base.x - self.goal.x).hypot(s.base.y - self.goal.y);
        (d - self.goal.pos_tol).max(0.0) * MIN_COST_PER_METER
    }
}

/// 8-connected Dijkstra over the fine base-cost layer, from every cell whose
/// center lies inside the goal tolerance.
#[derive(Debug, Clone)]
pub struct GridDijkstra {
    geometry: crate::grid::GridGeometry,
    dist: Vec<f64>,
}

impl GridDijkstra {
    pub fn new(costmap: &CostMap, goal: &Goal) -> Self {
        let g = *costmap.geometry();
        let mut dist = vec![f64::INFINITY; g.len()];
        let mut heap = BinaryHeap::new();
        let r = (goal.pos_tol / g.resolution).ceil() as i64 + 1;
        let gc = ((goal.x - g.origin.0) / g.resolution).floor() as i64;
        let gr = ((goal.y - g.origin.1) / g.resolution).floor() as i64;
        for cy in gr - r..=gr + r {
            for cx in gc - r..=gc + r {
                if cx < 0 || cy < 0 || cx >= g.width as i64 || cy >= g.height as i64 {
                    continue;
                }
                let cell = (cx as usize, cy as usize);
                let (x, y) = g.cell_center(cell);
                let i = g.index(cell);
                if (x - goal.x).hypot(y - goal.y) <= goal.pos_tol + 1e-9 && costmap.base(i).is_finite() {
                    dist[i] = 0.0;
                    heap.push(Reverse((OrdF64(0.0), i)));
                }
            }
        }
        let diag = g.resolution * std::f64::consts::SQRT_2;
        while let Some(Reverse((OrdF64(d), i))) = heap.pop() {
            if d > dist[i] {
                continue;
            }
            for n in g.neighbors8(g.cell_of_index(i)) {
                let j = g.index(n);
                let c = costmap.cell_cost(n, CostKind::Base);
                if !c.is_finite() {
                    continue;
                }
                let (ax, ay) = g.cell_of_index(i);
                let step = if ax != n.0 && ay != n.1 { diag } else { g.resolution };
                let nd = d + step * c.min(costmap.base(i)) * MIN_COST_PER_METER;
                if nd < dist[j] {
                    dist[j] = nd;
                    heap.push(Reverse((OrdF64(nd), j)));
                }
            }
        }
        GridDijkstra { geometry: g, dist }
    }

    pub fn distance(&self, x: f64, y: f64) -> f64 {
        self.geometry.world_to_cell(x, y).map_or(f64::INFINITY, |c| self.dist[self.geometry.index(c)])
    }
}

impl Heuristic for GridDijkstra {
    fn estimate(&self, s: &RobotState) -> f64 {
        self.distance(s.base.x, s.base.y)
    }
}

/// Total order wrapper for non-NaN floats in heaps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct OrdF64(pub f64);

impl Eq for OrdF64 {}

impl Ord for OrdF64 {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0)
    }
}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}

/// Base-pose estimate plus the per-foot step bound. The learned estimate
/// already prices steps, so it is combined by maximum instead of sum.
struct WithSteps {
    base: Box<dyn Heuristic>,
    euclidean: Euclidean,
    steps: StepBound,
    spec: RobotSpec,
    learned: bool,
    stepping: bool,
}

impl Heuristic for WithSteps {
    fn estimate(&self, s: &RobotState) -> f64 {
        let feet = self.steps.estimate(s, &self.spec);
        if self.learned {
            self.base.estimate(s).max(self.euclidean.estimate(s) + feet)
        } else {
            self.base.estimate(s) + feet
        }
    }

    fn dead_end(&self, s: &RobotState) -> bool {
        if !self.steps.base_reachable(s.base.x, s.base.y) {
            return true;
        }
        match self.steps.steps_needed(s, &self.spec) {
            None => true,
            Some(n) => n > 0 && !self.stepping,
        }
    }
}

/// Builds the heuristic of `kind` for one query. Every kind is combined with
/// the [`StepBound`] of the query goal, which also detects dead ends (with
/// `StepPolicy::Never`, any state that needs a step is one).
pub fn build_heuristic(
    kind: HeuristicKind,
    costmap: &CostMap,
    world: &PlanningWorld,
    goal: &Goal,
    spec: &RobotSpec,
    model: Option<&HeuristicModel>,
    policy: StepPolicy,
) -> Result<Box<dyn Heuristic>> {
    let base: Box<dyn Heuristic> = match kind {
        HeuristicKind::Euclidean => Box::new(Euclidean { goal: *goal }),
        HeuristicKind::GridDijkstra => Box::new(GridDijkstra::new(costmap, goal)),
        HeuristicKind::AbstractInformed => {
            let model = model.ok_or_else(|| {
                Error::InvalidRequest("abstract_informed requires a trained heuristic model".into())
            })?;
            let abs = build_abstract_map(&world.features, &world.classes, costmap, model)?;
            Box::new(InformedHeuristic::new(abs, goal))
        }
    };
    Ok(Box::new(WithSteps {
        base,
        euclidean: Euclidean { goal: *goal },
        steps: StepBound::new(costmap, goal, spec),
        spec: spec.clone(),
        learned: kind == HeuristicKind::AbstractInformed,
        stepping: policy != StepPolicy::Never,
    }))
}
