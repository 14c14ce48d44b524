//! Anytime weighted-A* over the hybrid driving-stepping lattice.

mod lattice;
mod search;
mod validate;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::costmap::{build_cost_map_with, CostConfig, CostMap};
use crate::error::{Error, Result};
use crate::heuristics::{HeuristicKind, HeuristicModel};
use crate::robot::{wrap_angle, RobotSpec, RobotState};
use crate::terrain::{HeightMap, TerrainClassMap, TerrainFeatures};

pub use lattice::{successors, successors_with, Lattice, Successor};
pub use search::{anytime_search, dijkstra_oracle, SearchOutcome};
pub use validate::{validate_plan, PlanViolation};

pub const PLAN_SCHEMA: &str = "hybrid-plan/1";

/// Number of heading bins of the lattice.
pub const THETA_BINS: u32 = 16;

/// Drive primitives in grid cells: 8 directions × {1, 2} cells. Directions are
/// world-grid aligned; the robot drives omnidirectionally at any heading.
pub const DRIVE_PRIMITIVES: [(i32, i32); 16] = [
    (1, 0), (2, 0), (1, 1), (2, 2), (0, 1), (0, 2), (-1, 1), (-2, 2),
    (-1, 0), (-2, 0), (-1, -1), (-2, -2), (0, -1), (0, -2), (1, -1), (2, -2),
];

/// One lattice action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    /// Rolling translation by `(dx, dy)` grid cells.
    Drive { dx: i32, dy: i32 },
    /// Rotation in place by `dtheta` heading bins.
    Turn { dtheta: i32 },
    /// Moves one foot to a new longitudinal offset (meters).
    Step { foot: usize, offset: f64 },
}

impl Action {
    pub fn is_step(&self) -> bool {
        matches!(self, Action::Step { .. })
    }
}

/// When step successors are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepPolicy {
    /// Drive-only search.
    Never,
    /// Only from states where some drive primitive is blocked by a wheel.
    #[default]
    WhenBlocked,
    Always,
}

/// Goal pose with tolerances. A `theta_tol` of π or more accepts any heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub theta: f64,
    #[serde(default = "default_pos_tol")]
    pub pos_tol: f64,
    #[serde(default = "default_theta_tol")]
    pub theta_tol: f64,
}

fn default_pos_tol() -> f64 {
    0.10
}

fn default_theta_tol() -> f64 {
    std::f64::consts::PI
}

impl Goal {
    pub fn new(x: f64, y: f64) -> Self {
        Goal { x, y, theta: 0.0, pos_tol: default_pos_tol(), theta_tol: default_theta_tol() }
    }

    pub fn reached(&self, s: &RobotState) -> bool {
        let d = (s.base.x - self.x).hypot(s.base.y - self.y);
        d <= self.pos_tol + 1e-9
            && (self.theta_tol >= std::f64::consts::PI || wrap_angle(s.base.theta - self.theta).abs() <= self.theta_tol + 1e-9)
    }
}

/// Foot offset bin width (m).
pub const DEFAULT_OFFSET_STEP: f64 = 0.05;

/// Search tuning that is not part of the lattice definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerOptions {
    pub step_policy: StepPolicy,
    /// Deterministic cap on node expansions over all anytime iterations.
    pub max_expansions: u64,
    /// ε values tried after the initial one (only those below it are used).
    pub epsilon_schedule: Vec<f64>,
    pub offset_step: f64,
    pub cost: CostConfig,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        PlannerOptions {
            step_policy: StepPolicy::WhenBlocked,
            max_expansions: 3_000_000,
            epsilon_schedule: vec![3.0, 2.0, 1.5, 1.2, 1.0],
            offset_step: DEFAULT_OFFSET_STEP,
            cost: CostConfig::default(),
        }
    }
}

impl PlannerOptions {
    /// The ε values actually run for a given initial ε.
    pub fn schedule(&self, initial: f64) -> Vec<f64> {
        let mut s = vec![initial];
        s.extend(self.epsilon_schedule.iter().copied().filter(|e| *e < initial - 1e-12 && *e >= 1.0));
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub start: RobotState,
    pub goal: Goal,
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub heuristic: HeuristicKind,
    #[serde(default = "default_time_budget")]
    pub time_budget: f64,
    #[serde(default = "default_epsilon")]
    pub initial_epsilon: f64,
    #[serde(default)]
    pub options: PlannerOptions,
}

fn default_time_budget() -> f64 {
    30.0
}

fn default_epsilon() -> f64 {
    3.0
}

impl PlanRequest {
    pub fn new(start: RobotState, goal: Goal, lambdas: Vec<f64>) -> Self {
        PlanRequest {
            start,
            goal,
            lambdas,
            heuristic: HeuristicKind::default(),
            time_budget: default_time_budget(),
            initial_epsilon: default_epsilon(),
            options: PlannerOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.goal.pos_tol > 0.0) || !(self.goal.theta_tol > 0.0) {
            return Err(Error::InvalidRequest("goal tolerances must be > 0".into()));
        }
        if !(self.time_budget > 0.0) {
            return Err(Error::InvalidRequest("time_budget must be > 0".into()));
        }
        if !(self.initial_epsilon >= 1.0) {
            return Err(Error::InvalidRequest("initial_epsilon must be >= 1".into()));
        }
        if self.lambdas.is_empty() {
            return Err(Error::InvalidRequest("at least one lambda is required".into()));
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::InvalidRequest("lambdas must be finite and >= 0".into()));
        }
        if !(self.options.offset_step > 0.0) {
            return Err(Error::InvalidRequest("offset_step must be > 0".into()));
        }
        Ok(())
    }
}

/// Record of one anytime iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub epsilon: f64,
    /// Cost of the solution found by this iteration, if it finished.
    pub cost: Option<f64>,
    pub expansions: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanStats {
    /// Expansions over all anytime iterations.
    pub expansions: u64,
    /// Expansions of the first iteration that found a solution.
    pub first_solution_expansions: u64,
    pub iterations: Vec<IterationRecord>,
    /// Wall time in seconds; not serialized so that plans stay reproducible.
    #[serde(skip)]
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub schema: String,
    pub states: Vec<RobotState>,
    pub actions: Vec<Action>,
    pub action_costs: Vec<f64>,
    pub total_cost: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub heuristic: HeuristicKind,
    /// Sum of terrain-class penalties met along the plan (see [`class_penalty`]).
    pub class_penalty: f64,
    pub stats: PlanStats,
}

impl Plan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Plan = serde_json::from_str(text)?;
        if p.schema != PLAN_SCHEMA {
            return Err(Error::Format(format!("unsupported plan schema {:?}", p.schema)));
        }
        if p.actions.len() + 1 != p.states.len() || p.action_costs.len() != p.actions.len() {
            return Err(Error::Format("plan states, actions and costs are inconsistent".into()));
        }
        Ok(p)
    }

    pub fn step_count(&self) -> usize {
        self.actions.iter().filter(|a| a.is_step()).count()
    }

    /// Base positions, one per state.
    pub fn polyline(&self) -> Vec<[f64; 2]> {
        self.states.iter().map(|s| [s.base.x, s.base.y]).collect()
    }
}

/// Terrain-class penalty met by a plan: for drives and turns, the largest
/// class penalty under the wheels at the resulting state times the action
/// length; for steps, the class penalty of the new foothold.
pub fn class_penalty(plan_states: &[RobotState], actions: &[Action], costmap: &CostMap, spec: &RobotSpec) -> f64 {
    let g = costmap.geometry();
    let pen = |s: &RobotState, f: usize| {
        let p = s.foot_position(f, spec);
        g.world_to_cell(p.x, p.y).map_or(0.0, |c| costmap.class_penalty_at(g.index(c)))
    };
    let mut total = 0.0;
    for (i, a) in actions.iter().enumerate() {
        let (prev, next) = (&plan_states[i], &plan_states[i + 1]);
        match *a {
            Action::Step { foot, .. } => total += pen(next, foot),
            _ => {
                let len = (next.base.x - prev.base.x).hypot(next.base.y - prev.base.y).max(
                    (0..4).map(|f| (next.foot_position(f, spec) - prev.foot_position(f, spec)).norm()).fold(0.0, f64::max),
                );
                total += len * (0..4).map(|f| pen(next, f)).fold(0.0, f64::max);
            }
        }
    }
    total
}

/// Planning inputs shared by all λ values of one request.
#[derive(Debug, Clone)]
pub struct PlanningWorld {
    pub map: Arc<HeightMap>,
    pub features: Arc<TerrainFeatures>,
    pub classes: Arc<TerrainClassMap>,
}

impl PlanningWorld {
    pub fn new(map: Arc<HeightMap>, features: Arc<TerrainFeatures>, classes: Arc<TerrainClassMap>) -> Result<Self> {
        map.geometry().ensure_aligned(&features.geometry, "features")?;
        map.geometry().ensure_aligned(classes.geometry(), "class map")?;
        Ok(PlanningWorld { map, features, classes })
    }

    pub fn cost_map(&self, lambda: f64, config: CostConfig) -> Result<CostMap> {
        build_cost_map_with(self.map.clone(), &self.classes, &self.features, lambda, config)
    }
}

/// Plans one path per λ of the request.
pub fn plan(
    request: &PlanRequest,
    world: &PlanningWorld,
    spec: &RobotSpec,
    model: Option<&HeuristicModel>,
) -> Result<Vec<Plan>> {
    request.validate()?;
    spec.validate()?;
    let mut out = Vec::with_capacity(request.lambdas.len());
    for &lambda in &request.lambdas {
        let costmap = world.cost_map(lambda, request.options.cost)?;
        out.push(plan_on_costmap(request, &costmap, world, spec, model, lambda)?);
    }
    Ok(out)
}

/// Plans on a prebuilt cost map; `world` supplies the class layer for the
/// abstract heuristic.
pub fn plan_on_costmap(
    request: &PlanRequest,
    costmap: &CostMap,
    world: &PlanningWorld,
    spec: &RobotSpec,
    model: Option<&HeuristicModel>,
    lambda: f64,
) -> Result<Plan> {
    request.validate()?;
    let lattice = Lattice::new(costmap, spec, request.options.offset_step);
    if lattice.offset_bins > 7 {
        return Err(Error::InvalidRequest("foot travel spans more than 7 offset bins per side".into()));
    }
    let start = lattice
        .snap(&request.start, costmap, spec)
        .ok_or_else(|| Error::InvalidStart("start is outside the map".into()))?;
    check_start(&start, costmap, spec)?;
    let heuristic = crate::heuristics::build_heuristic(
        request.heuristic,
        costmap,
        world,
        &request.goal,
        spec,
        model,
        request.options.step_policy,
    )?;
    let outcome = anytime_search(
        &start,
        &request.goal,
        costmap,
        spec,
        &lattice,
        heuristic.as_ref(),
        &request.options.schedule(request.initial_epsilon),
        request.options.step_policy,
        request.options.max_expansions,
        request.time_budget,
    )?;
    let penalty = class_penalty(&outcome.states, &outcome.actions, costmap, spec);
    Ok(Plan {
        schema: PLAN_SCHEMA.into(),
        total_cost: outcome.action_costs.iter().sum(),
        states: outcome.states,
        actions: outcome.actions,
        action_costs: outcome.action_costs,
        epsilon: outcome.epsilon,
        lambda,
        heuristic: request.heuristic,
        class_penalty: penalty,
        stats: outcome.stats,
    })
}

fn check_start(start: &RobotState, costmap: &CostMap, spec: &RobotSpec) -> Result<()> {
    let g = costmap.geometry();
    let cell = g.world_to_cell(start.base.x, start.base.y).ok_or_else(|| Error::InvalidStart("outside the map".into()))?;
    if !costmap.cell_cost(cell, crate::costmap::CostKind::Base).is_finite() {
        return Err(Error::InvalidStart("base collides with terrain".into()));
    }
    for f in 0..4 {
        let p = start.foot_position(f, spec);
        if !costmap.query_cost(p.x, p.y, crate::costmap::CostKind::Foot).is_finite() {
            return Err(Error::InvalidStart(format!("{} foot on infeasible terrain", crate::robot::FOOT_NAMES[f])));
        }
    }
    if !crate::robot::is_stable(start, spec)?.stable {
        return Err(Error::InvalidStart("start is not statically stable".into()));
    }
    Ok(())
}
