//! Hybrid robot model: configuration, support polygon, static stability,
//! stepping controller and action feasibility.

mod feasibility;
pub mod geometry;
mod stepping;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::terrain::HeightMap;
use geometry::{convex_hull, signed_distance, Vec2};

pub use feasibility::{action_feasible, evaluate_action, ActionOutcome};
pub(crate) use feasibility::{evaluate_detailed, Reject};
pub use stepping::{generate_step_sequence, phase_states, PhaseKind, PhaseTarget, StepPhase};

/// Foot order used throughout: front-left, front-right, rear-left, rear-right.
pub const FOOT_NAMES: [&str; 4] = ["front_left", "front_right", "rear_left", "rear_right"];

/// Static robot description. Loadable from a `key = value` (TOML) file; every
/// key is optional and falls back to the defaults below.
///
/// | key | default | meaning |
/// |-----|---------|---------|
/// | `mount_points` | `[[0.3,0.3],[0.3,-0.3],[-0.3,0.3],[-0.3,-0.3]]` | neutral foot positions, base frame (m) |
/// | `foot_travel` | `0.30` | max longitudinal foot offset from the mount point (m) |
/// | `body_half_extents` | `[0.35, 0.30]` | body box half sizes (m) |
/// | `com_offset` | `[0.0, 0.0]` | center of mass in the base frame (m) |
/// | `stability_margin` | `0.05` | required CoM distance to the support boundary (m) |
/// | `max_step_height` | `0.30` | largest elevation change of one foot step (m) |
/// | `swing_clearance` | `0.05` | swing apex above the highest terrain under the swath (m) |
/// | `max_body_shift` | `0.25` | largest body shift the legs can absorb before a step (m) |
/// | `max_drive_height` | `0.05` | largest elevation change a rolling wheel can take between cells (m) |
/// | `contact_tolerance` | `0.01` | contact estimation band around the terrain elevation (m) |
/// | `step_effort` | `2.0` | fixed planning cost of one step |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSpec {
    pub mount_points: [[f64; 2]; 4],
    pub foot_travel: f64,
    pub body_half_extents: [f64; 2],
    pub com_offset: [f64; 2],
    pub stability_margin: f64,
    pub max_step_height: f64,
    pub swing_clearance: f64,
    pub max_body_shift: f64,
    pub max_drive_height: f64,
    pub contact_tolerance: f64,
    pub step_effort: f64,
}

impl Default for RobotSpec {
    fn default() -> Self {
        RobotSpec {
            mount_points: [[0.3, 0.3], [0.3, -0.3], [-0.3, 0.3], [-0.3, -0.3]],
            foot_travel: 0.30,
            body_half_extents: [0.35, 0.30],
            com_offset: [0.0, 0.0],
            stability_margin: 0.05,
            max_step_height: 0.30,
            swing_clearance: 0.05,
            max_body_shift: 0.25,
            max_drive_height: 0.05,
            contact_tolerance: 0.01,
            step_effort: 2.0,
        }
    }
}

impl RobotSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.foot_travel > 0.0) {
            return Err(Error::Config("foot_travel must be > 0".into()));
        }
        if !(self.stability_margin >= 0.0) {
            return Err(Error::Config("stability_margin must be >= 0".into()));
        }
        let pts: Vec<Vec2> = self.mount_points.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        if convex_hull(&pts).len() != 4 {
            return Err(Error::Config("mount points must form a convex quadrilateral".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: RobotSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("robot spec serializes")
    }

    #[inline]
    pub fn mount(&self, foot: usize) -> Vec2 {
        Vec2::new(self.mount_points[foot][0], self.mount_points[foot][1])
    }

    pub fn com(&self) -> Vec2 {
        Vec2::new(self.com_offset[0], self.com_offset[1])
    }

    pub fn with_com_offset(&self, com: [f64; 2]) -> Self {
        RobotSpec { com_offset: com, ..self.clone() }
    }
}

/// Planar base pose in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2 { x, y, theta }
    }

    #[inline]
    pub fn transform(&self, p: Vec2) -> Vec2 {
        p.rotate(self.theta) + Vec2::new(self.x, self.y)
    }
}

/// Angle wrapped to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut w = a.rem_euclid(tau);
    if w > std::f64::consts::PI {
        w -= tau;
    }
    w
}

/// Hybrid configuration: base pose plus one longitudinal offset per foot
/// (seven continuous DoF), contact flags and contact elevations.
///
/// `body_shift` is the transient base-frame displacement of the body over the
/// planted feet during a step; it is zero for every settled state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub base: Pose2,
    pub foot_offset: [f64; 4],
    pub in_contact: [bool; 4],
    pub foot_z: [f64; 4],
    #[serde(default)]
    pub body_shift: [f64; 2],
}

impl RobotState {
    /// All feet in contact at neutral offsets, elevations taken from `map`
    /// (zero where unknown).
    pub fn standing(base: Pose2, spec: &RobotSpec, map: Option<&HeightMap>) -> Self {
        let mut s = RobotState { base, foot_offset: [0.0; 4], in_contact: [true; 4], foot_z: [0.0; 4], body_shift: [0.0; 2] };
        if let Some(map) = map {
            for f in 0..4 {
                let p = s.foot_position(f, spec);
                s.foot_z[f] = map.elevation_at(p.x, p.y).map_or(0.0, f64::from);
            }
        }
        s
    }

    #[inline]
    pub fn foot_local(&self, foot: usize, spec: &RobotSpec) -> Vec2 {
        spec.mount(foot) + Vec2::new(self.foot_offset[foot], 0.0)
    }

    /// World xy of a foot.
    #[inline]
    pub fn foot_position(&self, foot: usize, spec: &RobotSpec) -> Vec2 {
        self.base.transform(self.foot_local(foot, spec))
    }

    pub fn contact_count(&self) -> usize {
        self.in_contact.iter().filter(|c| **c).count()
    }

    /// All feet down and no body shift.
    pub fn is_settled(&self) -> bool {
        self.contact_count() == 4 && self.body_shift == [0.0, 0.0]
    }

    pub fn com_world(&self, com_offset: Vec2) -> Vec2 {
        self.base.transform(com_offset + Vec2::new(self.body_shift[0], self.body_shift[1]))
    }

    /// Same configuration moved rigidly by a world rotation about the origin then a translation.
    pub fn transformed(&self, rotation: f64, dx: f64, dy: f64) -> Self {
        let p = Vec2::new(self.base.x, self.base.y).rotate(rotation);
        RobotState {
            base: Pose2::new(p.x + dx, p.y + dy, wrap_angle(self.base.theta + rotation)),
            ..self.clone()
        }
    }
}

/// Convex hull (CCW, world frame) of the in-contact feet.
pub fn support_polygon(state: &RobotState, spec: &RobotSpec) -> Result<Vec<Vec2>> {
    if state.contact_count() < 3 {
        return Err(Error::UnsupportedState(format!("{} feet in contact, at least 3 required", state.contact_count())));
    }
    let pts: Vec<Vec2> = (0..4).filter(|&f| state.in_contact[f]).map(|f| state.foot_position(f, spec)).collect();
    Ok(convex_hull(&pts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    pub stable: bool,
    /// Signed distance of the CoM projection to the support polygon eroded by
    /// the required margin (negative when unstable).
    pub margin: f64,
    /// Signed distance of the CoM projection to the support polygon itself.
    pub support_distance: f64,
}

/// Static stability check against the spec's own CoM and margin.
pub fn is_stable(state: &RobotState, spec: &RobotSpec) -> Result<Stability> {
    stability_with(state, spec, spec.com(), spec.stability_margin)
}

/// Static stability with an explicit CoM offset and margin (used by execution monitors).
pub fn stability_with(state: &RobotState, spec: &RobotSpec, com_offset: Vec2, margin: f64) -> Result<Stability> {
    let poly = support_polygon(state, spec)?;
    let d = signed_distance(&poly, state.com_world(com_offset));
    let m = d - margin;
    Ok(Stability { stable: m >= -1e-9, margin: m, support_distance: d })
}
