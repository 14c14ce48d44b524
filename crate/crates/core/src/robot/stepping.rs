//! Semi-autonomous stepping: weight shift, lift, swing, lower, contact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::terrain::HeightMap;

use super::geometry::{convex_hull, erode, project_onto, Vec2};
use super::{is_stable, RobotSpec, RobotState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    ShiftBase,
    Lift,
    Swing,
    Lower,
    Contact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseTarget {
    /// Base-frame body displacement over the planted feet.
    BodyShift([f64; 2]),
    /// Foot height while unloaded.
    FootHeight(f64),
    /// New longitudinal offset, carried at the swing apex.
    FootOffset(f64),
    /// Estimated contact elevation; the body returns to its neutral position.
    Contact(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPhase {
    pub kind: PhaseKind,
    pub foot: usize,
    pub target: PhaseTarget,
    pub duration_hint: f64,
}

impl StepPhase {
    /// State at the end of this phase.
    pub fn apply(&self, state: &RobotState) -> RobotState {
        let mut s = state.clone();
        let f = self.foot;
        match self.target {
            PhaseTarget::BodyShift(shift) => s.body_shift = shift,
            PhaseTarget::FootHeight(z) => {
                s.in_contact[f] = false;
                s.foot_z[f] = z;
            }
            PhaseTarget::FootOffset(o) => s.foot_offset[f] = o,
            PhaseTarget::Contact(z) => {
                s.in_contact[f] = true;
                s.foot_z[f] = z;
                s.body_shift = [0.0, 0.0];
            }
        }
        s
    }
}

/// States at every phase boundary (excluding the start state).
pub fn phase_states(start: &RobotState, phases: &[StepPhase]) -> Vec<RobotState> {
    let mut out = Vec::with_capacity(phases.len());
    let mut s = start.clone();
    for p in phases {
        s = p.apply(&s);
        out.push(s.clone());
    }
    out
}

/// Builds the phase sequence that moves `foot` to `target_offset`.
///
/// The body is first shifted by the smallest displacement that puts the CoM
/// inside the remaining tripod eroded by the stability margin. The swing
/// apex clears the highest known terrain along the swath by
/// `swing_clearance`, and the contact elevation is the terrain elevation at
/// the target foothold. Every phase boundary is checked for static stability.
pub fn generate_step_sequence(
    state: &RobotState,
    foot: usize,
    target_offset: f64,
    map: &HeightMap,
    spec: &RobotSpec,
) -> Result<Vec<StepPhase>> {
    if foot >= 4 {
        return Err(Error::InfeasibleFoothold(format!("foot index {foot} out of range")));
    }
    if !state.is_settled() {
        return Err(Error::UnsupportedState("stepping requires all feet down and no body shift".into()));
    }
    if target_offset.abs() > spec.foot_travel + 1e-9 {
        return Err(Error::InfeasibleFoothold(format!(
            "offset {target_offset:.3} outside travel ±{:.3}",
            spec.foot_travel
        )));
    }
    if (target_offset - state.foot_offset[foot]).abs() < 1e-12 {
        return Ok(Vec::new());
    }

    let mut landed = state.clone();
    landed.foot_offset[foot] = target_offset;
    let from = state.foot_position(foot, spec);
    let to = landed.foot_position(foot, spec);
    let contact_z = map
        .elevation_at(to.x, to.y)
        .map(f64::from)
        .ok_or_else(|| Error::InfeasibleFoothold("target foothold is off the map or unknown".into()))?;
    if (contact_z - state.foot_z[foot]).abs() > spec.max_step_height + 1e-9 {
        return Err(Error::InfeasibleFoothold(format!(
            "step height {:.3} exceeds {:.3}",
            (contact_z - state.foot_z[foot]).abs(),
            spec.max_step_height
        )));
    }
    let apex = swath_max(map, from, to).max(state.foot_z[foot]).max(contact_z) + spec.swing_clearance;

    // body shift over the tripod of the remaining feet
    let tripod: Vec<Vec2> = (0..4).filter(|&f| f != foot).map(|f| state.foot_position(f, spec)).collect();
    let safe = erode(&convex_hull(&tripod), spec.stability_margin + 1e-7);
    let com = state.com_world(spec.com());
    let target_com = project_onto(&safe, com).ok_or(Error::NoStableShift)?;
    let shift_world = target_com - com;
    if shift_world.norm() > spec.max_body_shift + 1e-12 {
        return Err(Error::NoStableShift);
    }
    let shift_local = shift_world.rotate(-state.base.theta);
    let shift = [shift_local.x, shift_local.y];

    let phases = vec![
        StepPhase { kind: PhaseKind::ShiftBase, foot, target: PhaseTarget::BodyShift(shift), duration_hint: 1.0 },
        StepPhase { kind: PhaseKind::Lift, foot, target: PhaseTarget::FootHeight(apex), duration_hint: 0.5 },
        StepPhase {
            kind: PhaseKind::Swing,
            foot,
            target: PhaseTarget::FootOffset(target_offset),
            duration_hint: 0.5 + (to - from).norm() * 2.0,
        },
        StepPhase { kind: PhaseKind::Lower, foot, target: PhaseTarget::FootHeight(contact_z), duration_hint: 0.5 },
        StepPhase { kind: PhaseKind::Contact, foot, target: PhaseTarget::Contact(contact_z), duration_hint: 0.3 },
    ];

    for s in phase_states(state, &phases) {
        if !is_stable(&s, spec)?.stable {
            return Err(Error::NoStableShift);
        }
    }
    Ok(phases)
}

/// Highest known elevation along the straight swath between two foot positions.
fn swath_max(map: &HeightMap, from: Vec2, to: Vec2) -> f64 {
    let res = map.resolution();
    let n = (((to - from).norm() / (res * 0.5)).ceil() as usize).max(1);
    (0..=n)
        .filter_map(|k| {
            let p = from + (to - from) * (k as f64 / n as f64);
            map.elevation_at(p.x, p.y).map(f64::from)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridGeometry;
    use crate::robot::Pose2;

    fn flat(z: f32) -> HeightMap {
        HeightMap::flat(GridGeometry::new(0.025, (-1.0, -1.0), 80, 80).unwrap(), z)
    }

    #[test]
    fn identity_step_is_empty() {
        let spec = RobotSpec::default();
        let map = flat(0.0);
        let s = RobotState::standing(Pose2::default(), &spec, Some(&map));
        assert!(generate_step_sequence(&s, 0, 0.0, &map, &spec).unwrap().is_empty());
    }

    #[test]
    fn flat_step_has_five_stable_phases() {
        let spec = RobotSpec::default();
        let map = flat(0.0);
        let s = RobotState::standing(Pose2::default(), &spec, Some(&map));
        let phases = generate_step_sequence(&s, 0, 0.20, &map, &spec).unwrap();
        let kinds: Vec<PhaseKind> = phases.iter().map(|p| p.kind).collect();
        assert_eq!(
            kinds,
            [PhaseKind::ShiftBase, PhaseKind::Lift, PhaseKind::Swing, PhaseKind::Lower, PhaseKind::Contact]
        );
        assert_eq!(phases[1].target, PhaseTarget::FootHeight(0.05));
        let states = phase_states(&s, &phases);
        for st in &states {
            assert!(st.contact_count() >= 3);
            assert!(is_stable(st, &spec).unwrap().stable);
        }
        let last = states.last().unwrap();
        assert_eq!(last.foot_z[0], 0.0);
        assert_eq!(last.foot_offset, [0.20, 0.0, 0.0, 0.0]);
        assert!(last.is_settled());
    }

    #[test]
    fn step_onto_block() {
        let spec = RobotSpec::default();
        let mut map = flat(0.0);
        // block under x in [0.45, 0.6] (world), covering the FL target at x = 0.5
        for cy in 0..80 {
            for cx in 58..64 {
                map.set((cx, cy), Some(0.15));
            }
        }
        let s = RobotState::standing(Pose2::default(), &spec, Some(&map));
        let phases = generate_step_sequence(&s, 0, 0.20, &map, &spec).unwrap();
        let last = phase_states(&s, &phases).pop().unwrap();
        assert!((last.foot_z[0] - 0.15).abs() < 1e-6);
        match phases[1].target {
            PhaseTarget::FootHeight(apex) => assert!(apex >= 0.20 - 1e-6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn off_map_and_out_of_travel_rejected() {
        let spec = RobotSpec::default();
        let map = flat(0.0);
        let s = RobotState::standing(Pose2::new(0.6, 0.0, 0.0), &spec, Some(&map));
        assert!(matches!(generate_step_sequence(&s, 0, 0.3, &map, &spec), Err(Error::InfeasibleFoothold(_))));
        assert!(matches!(generate_step_sequence(&s, 0, 0.31, &map, &spec), Err(Error::InfeasibleFoothold(_))));
    }

    #[test]
    fn impossible_com_gives_no_stable_shift() {
        let spec = RobotSpec { max_body_shift: 0.02, ..RobotSpec::default() };
        let map = flat(0.0);
        let s = RobotState::standing(Pose2::default(), &spec, Some(&map));
        assert!(matches!(generate_step_sequence(&s, 0, 0.2, &map, &spec), Err(Error::NoStableShift)));
    }
}
