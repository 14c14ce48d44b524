//! Discrete hybrid state lattice and successor generation.

use crate::costmap::CostMap;
use crate::robot::{evaluate_detailed, Pose2, Reject, RobotSpec, RobotState};

use super::{Action, StepPolicy, DRIVE_PRIMITIVES, THETA_BINS};

/// Lattice discretization: base at cell centers of the cost map grid, θ in
/// [`THETA_BINS`] bins, foot offsets in multiples of `offset_step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub origin: (f64, f64),
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub offset_step: f64,
    pub offset_bins: i32,
}

const IX_BITS: u32 = 22;
const OFF_BITS: u32 = 4;

impl Lattice {
    pub fn new(costmap: &CostMap, spec: &RobotSpec, offset_step: f64) -> Self {
        let g = costmap.geometry();
        Lattice {
            origin: g.origin,
            resolution: g.resolution,
            width: g.width,
            height: g.height,
            offset_step,
            offset_bins: (spec.foot_travel / offset_step + 1e-9).floor() as i32,
        }
    }

    pub fn theta_of(bin: u32) -> f64 {
        crate::robot::wrap_angle(bin as f64 * std::f64::consts::TAU / THETA_BINS as f64)
    }

    pub fn theta_bin(theta: f64) -> u32 {
        let b = (theta.rem_euclid(std::f64::consts::TAU) / (std::f64::consts::TAU / THETA_BINS as f64)).round() as u32;
        b % THETA_BINS
    }

    /// Packed key of a settled, lattice-aligned state.
    pub fn key(&self, s: &RobotState) -> Option<u64> {
        if !s.is_settled() {
            return None;
        }
        let fx = (s.base.x - self.origin.0) / self.resolution - 0.5;
        let fy = (s.base.y - self.origin.1) / self.resolution - 0.5;
        let (ix, iy) = (fx.round(), fy.round());
        if (fx - ix).abs() > 1e-6 || (fy - iy).abs() > 1e-6 {
            return None;
        }
        if ix < 0.0 || iy < 0.0 || ix >= self.width as f64 || iy >= self.height as f64 {
            return None;
        }
        let tb = Self::theta_bin(s.base.theta);
        if crate::robot::wrap_angle(s.base.theta - Self::theta_of(tb)).abs() > 1e-6 {
            return None;
        }
        let mut off = [0i32; 4];
        for f in 0..4 {
            let b = s.foot_offset[f] / self.offset_step;
            off[f] = b.round() as i32;
            if (b - off[f] as f64).abs() > 1e-6 || off[f].abs() > self.offset_bins {
                return None;
            }
        }
        Some(self.pack(ix as u32, iy as u32, tb, off))
    }

    fn pack(&self, ix: u32, iy: u32, tb: u32, off: [i32; 4]) -> u64 {
        let mut k = ix as u64 | (iy as u64) << IX_BITS | (tb as u64) << (2 * IX_BITS);
        for (f, o) in off.iter().enumerate() {
            k |= ((o + self.offset_bins) as u64) << (2 * IX_BITS + 4 + OFF_BITS * f as u32);
        }
        k
    }

    /// `(ix, iy, θ bin, offset bins)` of a key.
    pub fn unpack(&self, key: u64) -> (u32, u32, u32, [i32; 4]) {
        let mask = (1u64 << IX_BITS) - 1;
        let ix = (key & mask) as u32;
        let iy = ((key >> IX_BITS) & mask) as u32;
        let tb = ((key >> (2 * IX_BITS)) & 0xf) as u32;
        let mut off = [0i32; 4];
        for (f, o) in off.iter_mut().enumerate() {
            *o = ((key >> (2 * IX_BITS + 4 + OFF_BITS * f as u32)) & 0xf) as i32 - self.offset_bins;
        }
        (ix, iy, tb, off)
    }

    /// Canonical state of a key; foot elevations from the map (zero where unknown).
    pub fn state(&self, key: u64, costmap: &CostMap, spec: &RobotSpec) -> RobotState {
        let (ix, iy, tb, off) = self.unpack(key);
        let base = Pose2::new(
            self.origin.0 + (ix as f64 + 0.5) * self.resolution,
            self.origin.1 + (iy as f64 + 0.5) * self.resolution,
            Self::theta_of(tb),
        );
        let mut s = RobotState::standing(base, spec, None);
        for f in 0..4 {
            s.foot_offset[f] = off[f] as f64 * self.offset_step;
        }
        let g = costmap.geometry();
        for f in 0..4 {
            let p = s.foot_position(f, spec);
            s.foot_z[f] = g
                .world_to_cell(p.x, p.y)
                .and_then(|c| costmap.height_map().get(c))
                .map_or(0.0, f64::from);
        }
        s
    }

    /// Nearest lattice state (base cell center, θ bin, offset bins).
    pub fn snap(&self, s: &RobotState, costmap: &CostMap, spec: &RobotSpec) -> Option<RobotState> {
        let g = costmap.geometry();
        let (cx, cy) = g.world_to_cell(s.base.x, s.base.y)?;
        let tb = Self::theta_bin(s.base.theta);
        let mut off = [0i32; 4];
        for f in 0..4 {
            off[f] = ((s.foot_offset[f] / self.offset_step).round() as i32).clamp(-self.offset_bins, self.offset_bins);
        }
        Some(self.state(self.pack(cx as u32, cy as u32, tb, off), costmap, spec))
    }
}

/// All feasible successors of a lattice state with the default offset bins,
/// stepping every foot regardless of blocking.
pub fn successors(state: &RobotState, costmap: &CostMap, spec: &RobotSpec) -> Vec<Successor> {
    let lattice = Lattice::new(costmap, spec, 0.05);
    successors_with(state, costmap, spec, &lattice, StepPolicy::Always)
}

/// One lattice transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Successor {
    pub action: Action,
    pub state: RobotState,
    pub cost: f64,
}

/// Feasible successors of a lattice state. Steps are generated according to
/// `policy` (with `StepPolicy::WhenBlocked`, only for feet whose wheel blocks
/// some drive primitive).
pub fn successors_with(
    state: &RobotState,
    costmap: &CostMap,
    spec: &RobotSpec,
    lattice: &Lattice,
    policy: StepPolicy,
) -> Vec<Successor> {
    let mut out = Vec::with_capacity(24);
    let stable = crate::robot::is_stable(state, spec).map(|s| s.stable).unwrap_or(false);
    let mut blocked = [false; 4];
    for &(dx, dy) in DRIVE_PRIMITIVES.iter() {
        let action = Action::Drive { dx, dy };
        match evaluate_detailed(state, &action, costmap, spec, Some(stable)) {
            Ok(o) => out.push(Successor { action, state: o.state, cost: o.cost }),
            Err(Reject::Wheel(f, _)) => blocked[f] = true,
            Err(_) => {}
        }
    }
    for dtheta in [1, -1] {
        let action = Action::Turn { dtheta };
        if let Ok(o) = evaluate_detailed(state, &action, costmap, spec, Some(stable)) {
            out.push(Successor { action, state: o.state, cost: o.cost });
        }
    }
    let feet = match policy {
        StepPolicy::Never => [false; 4],
        StepPolicy::WhenBlocked => blocked,
        StepPolicy::Always => [true; 4],
    };
    for foot in (0..4).filter(|&f| feet[f]) {
        {
            for b in -lattice.offset_bins..=lattice.offset_bins {
                let offset = b as f64 * lattice.offset_step;
                if (offset - state.foot_offset[foot]).abs() < 1e-9 {
                    continue;
                }
                let action = Action::Step { foot, offset };
                if let Ok(o) = evaluate_detailed(state, &action, costmap, spec, Some(stable)) {
                    out.push(Successor { action, state: o.state, cost: o.cost });
                }
            }
        }
    }
    out
}
