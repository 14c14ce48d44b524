//! Feasibility gate and cost of single lattice actions.

use crate::costmap::CostMap;
use crate::error::{Error, Result};
use crate::planner::{Action, THETA_BINS};

use super::geometry::Vec2;
use super::{generate_step_sequence, is_stable, wrap_angle, Pose2, RobotSpec, RobotState, StepPhase};

/// Result of applying one action to a state.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionOutcome {
    pub state: RobotState,
    pub cost: f64,
    /// Phase sequence for step actions; empty for drive and turn.
    pub phases: Vec<StepPhase>,
}

/// True when `action` can be executed from `state` on `costmap`.
pub fn action_feasible(state: &RobotState, action: &Action, costmap: &CostMap, spec: &RobotSpec) -> bool {
    evaluate_action(state, action, costmap, spec).is_ok()
}

/// Why a drive or turn was rejected.
#[derive(Debug)]
pub(crate) enum Reject {
    /// A wheel would cross an infeasible cell or an unrollable height change.
    Wheel(usize, String),
    Other(Error),
}

impl From<Error> for Reject {
    fn from(e: Error) -> Self {
        Reject::Other(e)
    }
}

impl From<Reject> for Error {
    fn from(r: Reject) -> Self {
        match r {
            Reject::Wheel(_, m) => Error::ActionRejected(m),
            Reject::Other(e) => e,
        }
    }
}

/// Applies `action`, checking feasibility; infeasibility is reported as
/// `ActionRejected` (or the stepping controller's own error for steps).
pub fn evaluate_action(state: &RobotState, action: &Action, costmap: &CostMap, spec: &RobotSpec) -> Result<ActionOutcome> {
    evaluate_detailed(state, action, costmap, spec, None).map_err(Error::from)
}

pub(crate) fn evaluate_detailed(
    state: &RobotState,
    action: &Action,
    costmap: &CostMap,
    spec: &RobotSpec,
    start_stable: Option<bool>,
) -> std::result::Result<ActionOutcome, Reject> {
    match *action {
        Action::Drive { dx, dy } => {
            if dx == 0 && dy == 0 {
                return Err(Error::ActionRejected("zero drive".into()).into());
            }
            let res = costmap.geometry().resolution;
            let (tx, ty) = (dx as f64 * res, dy as f64 * res);
            let to = Pose2::new(state.base.x + tx, state.base.y + ty, state.base.theta);
            roll(state, to, tx.hypot(ty), costmap, spec, start_stable)
        }
        Action::Turn { dtheta } => {
            if dtheta == 0 {
                return Err(Error::ActionRejected("zero turn".into()).into());
            }
            let delta = dtheta as f64 * std::f64::consts::TAU / THETA_BINS as f64;
            let to = Pose2::new(state.base.x, state.base.y, wrap_angle(state.base.theta + delta));
            let radius = (0..4).map(|f| state.foot_local(f, spec).norm()).fold(0.0, f64::max);
            roll(state, to, radius * delta.abs(), costmap, spec, start_stable)
        }
        Action::Step { foot, offset } => {
            if foot >= 4 {
                return Err(Error::ActionRejected(format!("foot index {foot}")).into());
            }
            if (offset - state.foot_offset[foot]).abs() < 1e-12 {
                return Err(Error::ActionRejected("step to the current offset".into()).into());
            }
            let mut landed = state.clone();
            landed.foot_offset[foot] = offset;
            let p = landed.foot_position(foot, spec);
            let foot_cost = costmap.query_cost(p.x, p.y, crate::costmap::CostKind::Foot);
            if !foot_cost.is_finite() {
                return Err(Error::InfeasibleFoothold("target foothold has infinite cost".into()).into());
            }
            let phases = generate_step_sequence(state, foot, offset, costmap.height_map(), spec)?;
            let end = super::phase_states(state, &phases).pop().expect("non-empty step");
            Ok(ActionOutcome { state: end, cost: spec.step_effort + foot_cost, phases })
        }
    }
}

/// Rolls every wheel from `state.base` to `to` (linear in x, y, θ), sampling
/// at half-cell spacing. Driving moves the support polygon and the CoM
/// rigidly, so the end state is stable exactly when the start state is;
/// `start_stable` lets callers pass that verdict in.
fn roll(
    state: &RobotState,
    to: Pose2,
    length: f64,
    costmap: &CostMap,
    spec: &RobotSpec,
    start_stable: Option<bool>,
) -> std::result::Result<ActionOutcome, Reject> {
    if !state.is_settled() {
        return Err(Error::ActionRejected("driving requires all feet in contact".into()).into());
    }
    let g = costmap.geometry();
    let map = costmap.height_map();
    let from = state.base;
    let dtheta = wrap_angle(to.theta - from.theta);
    let local: [Vec2; 4] = std::array::from_fn(|f| state.foot_local(f, spec));
    let mut sweep = (Vec2::new(to.x - from.x, to.y - from.y)).norm();
    for l in &local {
        sweep = sweep.max(l.norm() * dtheta.abs());
    }
    let n = ((sweep / (g.resolution * 0.5)).ceil() as usize).max(1);

    let mut max_base = 0.0f64;
    let mut max_foot = 0.0f64;
    let mut last_z = [0.0f64; 4];
    let (mut sin, mut cos) = from.theta.sin_cos();
    for k in 0..=n {
        let t = k as f64 / n as f64;
        let pose = if k == n {
            to
        } else {
            Pose2::new(from.x + (to.x - from.x) * t, from.y + (to.y - from.y) * t, from.theta + dtheta * t)
        };
        if dtheta != 0.0 && k > 0 {
            (sin, cos) = pose.theta.sin_cos();
        }
        let Some(bc) = g.world_to_cell(pose.x, pose.y).map(|c| costmap.cell_cost(c, crate::costmap::CostKind::Base)) else {
            return Err(Error::ActionRejected("base leaves the map".into()).into());
        };
        if !bc.is_finite() {
            return Err(Error::ActionRejected("base collides with terrain".into()).into());
        }
        max_base = max_base.max(bc);
        for (f, l) in local.iter().enumerate() {
            let (px, py) = (pose.x + cos * l.x - sin * l.y, pose.y + sin * l.x + cos * l.y);
            let Some(cell) = g.world_to_cell(px, py) else {
                return Err(Error::ActionRejected("wheel leaves the map".into()).into());
            };
            let fc = costmap.cell_cost(cell, crate::costmap::CostKind::Foot);
            let z = map.get(cell).map(f64::from);
            let (true, Some(z)) = (fc.is_finite(), z) else {
                return Err(Reject::Wheel(f, format!("wheel {f} crosses an infeasible cell")));
            };
            if k > 0 && (z - last_z[f]).abs() > spec.max_drive_height + 1e-9 {
                return Err(Reject::Wheel(f, format!("wheel {f} meets a height change it cannot roll over")));
            }
            last_z[f] = z;
            max_foot = max_foot.max(fc);
        }
    }

    let stable = match start_stable {
        Some(s) => s,
        None => is_stable(state, spec)?.stable,
    };
    if !stable {
        return Err(Error::ActionRejected("unstable after driving".into()).into());
    }
    let mut end = state.clone();
    end.base = to;
    end.foot_z = last_z;
    Ok(ActionOutcome { state: end, cost: length * 0.5 * (max_base + max_foot), phases: Vec::new() })
}
