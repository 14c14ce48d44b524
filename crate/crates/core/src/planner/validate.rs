//! Replay check of a plan against a cost map.

use serde::{Deserialize, Serialize};

use crate::costmap::CostMap;
use crate::robot::{evaluate_action, is_stable, wrap_angle, RobotSpec, RobotState};

use super::{Plan, PLAN_SCHEMA};

/// First problem found in a plan. `index` is the action index (or the state
/// index for problems with the start state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanViolation {
    pub index: usize,
    pub reason: String,
}

fn violation(index: usize, reason: impl Into<String>) -> PlanViolation {
    PlanViolation { index, reason: reason.into() }
}

fn same_state(a: &RobotState, b: &RobotState, tol: f64) -> bool {
    (a.base.x - b.base.x).abs() <= 1e-6
        && (a.base.y - b.base.y).abs() <= 1e-6
        && wrap_angle(a.base.theta - b.base.theta).abs() <= 1e-6
        && a.in_contact == b.in_contact
        && (0..4).all(|f| (a.foot_offset[f] - b.foot_offset[f]).abs() <= 1e-6 && (a.foot_z[f] - b.foot_z[f]).abs() <= tol)
        && a.body_shift == b.body_shift
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Replays every transition: connectivity, feasibility, stability and cost.
pub fn validate_plan(plan: &Plan, costmap: &CostMap, spec: &RobotSpec) -> Result<(), PlanViolation> {
    if plan.schema != PLAN_SCHEMA {
        return Err(violation(0, format!("unknown schema {:?}", plan.schema)));
    }
    if plan.states.is_empty() || plan.actions.len() + 1 != plan.states.len() || plan.action_costs.len() != plan.actions.len() {
        return Err(violation(0, "states, actions and costs have inconsistent lengths"));
    }
    if !(plan.epsilon >= 1.0) {
        return Err(violation(0, "epsilon below 1"));
    }
    match is_stable(&plan.states[0], spec) {
        Ok(s) if s.stable => {}
        _ => return Err(violation(0, "start state is not stable")),
    }
    for (i, action) in plan.actions.iter().enumerate() {
        let out = evaluate_action(&plan.states[i], action, costmap, spec)
            .map_err(|e| violation(i, format!("action infeasible: {e}")))?;
        if !same_state(&out.state, &plan.states[i + 1], spec.contact_tolerance) {
            return Err(violation(i, "next state does not follow from the action"));
        }
        match is_stable(&plan.states[i + 1], spec) {
            Ok(s) if s.stable => {}
            _ => return Err(violation(i, "resulting state is not stable")),
        }
        if !close(out.cost, plan.action_costs[i]) {
            return Err(violation(i, format!("cost {} differs from recomputed {}", plan.action_costs[i], out.cost)));
        }
    }
    let total: f64 = plan.action_costs.iter().sum();
    if !close(total, plan.total_cost) {
        return Err(violation(plan.actions.len(), "total cost is not the sum of action costs"));
    }
    Ok(())
}
