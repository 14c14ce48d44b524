//! Lower bound on the number of steps each foot still has to take.
//!
//! Wheels roll freely inside a connected region of rollable cells (known,
//! finite foot cost, elevation change within the drive limit). Leaving a
//! region requires a step, and one step reaches at most twice the foot
//! travel and the maximum step height. Regions are ranked by the fewest such
//! hops to any region near the goal; a state needs at least that many steps
//! per foot.

use std::collections::VecDeque;

use crate::costmap::CostMap;
use crate::grid::GridGeometry;
use crate::planner::Goal;
use crate::robot::{RobotSpec, RobotState};

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct StepBound {
    geometry: GridGeometry,
    region: Vec<u32>,
    hops: Vec<u32>,
    /// Cells from which the base can roll into the goal tolerance.
    base_reach: Vec<bool>,
    step_cost: f64,
}

fn rollable(costmap: &CostMap, i: usize) -> bool {
    costmap.foot(i).is_finite() && costmap.height_map().get_index(i).is_some()
}

impl StepBound {
    pub fn new(costmap: &CostMap, goal: &Goal, spec: &RobotSpec) -> Self {
        let g = *costmap.geometry();
        let map = costmap.height_map();
        let z = |i: usize| map.get_index(i).map_or(0.0, f64::from);

        // connected rollable regions and their elevation ranges
        let mut region = vec![NONE; g.len()];
        let mut zrange: Vec<(f64, f64)> = Vec::new();
        let mut queue = VecDeque::new();
        for seed in 0..g.len() {
            if region[seed] != NONE || !rollable(costmap, seed) {
                continue;
            }
            let id = zrange.len() as u32;
            region[seed] = id;
            let mut range = (z(seed), z(seed));
            queue.push_back(seed);
            while let Some(i) = queue.pop_front() {
                for n in g.neighbors8(g.cell_of_index(i)) {
                    let j = g.index(n);
                    if region[j] == NONE && rollable(costmap, j) && (z(j) - z(i)).abs() <= spec.max_drive_height + 1e-9 {
                        region[j] = id;
                        range = (range.0.min(z(j)), range.1.max(z(j)));
                        queue.push_back(j);
                    }
                }
            }
            zrange.push(range);
        }

        // regions a wheel can occupy while the base is inside the goal tolerance
        let reach_goal = goal.pos_tol
            + (0..4)
                .map(|f| {
                    let m = spec.mount(f);
                    (m.x.abs() + spec.foot_travel).hypot(m.y)
                })
                .fold(0.0, f64::max)
            + g.resolution;
        let mut hops = vec![NONE; zrange.len()];
        let mut frontier = Vec::new();
        let r = (reach_goal / g.resolution).ceil() as i64;
        let gc = ((goal.x - g.origin.0) / g.resolution).floor() as i64;
        let gr = ((goal.y - g.origin.1) / g.resolution).floor() as i64;
        for cy in gr - r..=gr + r {
            for cx in gc - r..=gc + r {
                if !g.contains_signed(cx, cy) {
                    continue;
                }
                let cell = (cx as usize, cy as usize);
                let (x, y) = g.cell_center(cell);
                let id = region[g.index(cell)];
                if id != NONE && hops[id as usize] == NONE && (x - goal.x).hypot(y - goal.y) <= reach_goal {
                    hops[id as usize] = 0;
                    frontier.push(id);
                }
            }
        }

        // one step covers at most 2·travel, plus a cell of slack for in-cell placement
        let reach = 2.0 * spec.foot_travel + g.resolution * std::f64::consts::SQRT_2;
        let rc = (reach / g.resolution).ceil() as i64;
        let disk: Vec<(i64, i64)> = (-rc..=rc)
            .flat_map(|dy| (-rc..=rc).map(move |dx| (dx, dy)))
            .filter(|&(dx, dy)| ((dx * dx + dy * dy) as f64).sqrt() * g.resolution <= reach)
            .collect();
        let mut members: Vec<Vec<u32>> = vec![Vec::new(); zrange.len()];
        for (i, &id) in region.iter().enumerate() {
            if id != NONE && is_border(&g, &region, i) {
                members[id as usize].push(i as u32);
            }
        }
        let mut level = 0;
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &src in &frontier {
                let (lo, hi) = zrange[src as usize];
                for &i in &members[src as usize] {
                    let (cx, cy) = g.cell_of_index(i as usize);
                    for &(dx, dy) in &disk {
                        let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                        if !g.contains_signed(nx, ny) {
                            continue;
                        }
                        let id = region[g.index((nx as usize, ny as usize))];
                        if id == NONE || hops[id as usize] != NONE {
                            continue;
                        }
                        let (l2, h2) = zrange[id as usize];
                        if l2 - hi <= spec.max_step_height + 1e-9 && lo - h2 <= spec.max_step_height + 1e-9 {
                            hops[id as usize] = level + 1;
                            next.push(id);
                        }
                    }
                }
            }
            frontier = next;
            level += 1;
        }

        // the base only moves by rolling, through cells of finite base cost
        let mut base_reach = vec![false; g.len()];
        let seed_r = goal.pos_tol + g.resolution;
        let r = (seed_r / g.resolution).ceil() as i64;
        for cy in gr - r..=gr + r {
            for cx in gc - r..=gc + r {
                if !g.contains_signed(cx, cy) {
                    continue;
                }
                let cell = (cx as usize, cy as usize);
                let (x, y) = g.cell_center(cell);
                let i = g.index(cell);
                if costmap.base(i).is_finite() && (x - goal.x).hypot(y - goal.y) <= seed_r {
                    base_reach[i] = true;
                    queue.push_back(i);
                }
            }
        }
        while let Some(i) = queue.pop_front() {
            for n in g.neighbors8(g.cell_of_index(i)) {
                let j = g.index(n);
                if !base_reach[j] && costmap.base(j).is_finite() {
                    base_reach[j] = true;
                    queue.push_back(j);
                }
            }
        }

        StepBound { geometry: g, region, hops, base_reach, step_cost: spec.step_effort + crate::heuristics::MIN_COST_PER_METER }
    }

    /// Fewest steps a wheel at `(x, y)` needs; `None` if it cannot reach the goal.
    pub fn steps_at(&self, x: f64, y: f64) -> Option<u32> {
        let c = self.geometry.world_to_cell(x, y)?;
        let id = self.region[self.geometry.index(c)];
        if id == NONE {
            return None;
        }
        let h = self.hops[id as usize];
        (h != NONE).then_some(h)
    }

    /// False when the base cannot roll from `(x, y)` to the goal.
    pub fn base_reachable(&self, x: f64, y: f64) -> bool {
        self.geometry.world_to_cell(x, y).is_some_and(|c| self.base_reach[self.geometry.index(c)])
    }

    /// Fewest steps over all feet; `None` when some wheel is cut off.
    pub fn steps_needed(&self, state: &RobotState, spec: &RobotSpec) -> Option<u32> {
        (0..4).map(|f| {
            let p = state.foot_position(f, spec);
            self.steps_at(p.x, p.y)
        })
        .sum()
    }

    /// Minimum total step cost for `state` (infinite when some wheel is cut off).
    pub fn estimate(&self, state: &RobotState, spec: &RobotSpec) -> f64 {
        self.steps_needed(state, spec).map_or(f64::INFINITY, |n| n as f64 * self.step_cost)
    }
}

fn is_border(g: &GridGeometry, region: &[u32], i: usize) -> bool {
    let c = g.cell_of_index(i);
    let (x, y) = (c.0 as i64, c.1 as i64);
    if x == 0 || y == 0 || x + 1 == g.width as i64 || y + 1 == g.height as i64 {
        return true;
    }
    g.neighbors8(c).any(|n| region[g.index(n)] != region[i])
}
