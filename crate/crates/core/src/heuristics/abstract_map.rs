//! Coarse (x, y, θ) planning representation and the informed heuristic.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::costmap::CostMap;
use crate::error::Result;
use crate::grid::GridGeometry;
use crate::planner::Goal;
use crate::robot::RobotState;
use crate::terrain::{TerrainClass, TerrainClassMap, TerrainFeatures};

use super::{Heuristic, HeuristicModel, OrdF64, MIN_COST_PER_METER};

pub const COARSE_FACTOR: usize = 4;
pub const ABSTRACT_THETA_BINS: usize = 4;

/// Lower bound on the cost of the smallest fine turn (shortest wheel lever
/// 0.30 m over one 22.5° heading bin at unit cost).
const TURN_LOWER_BOUND: f64 = 0.30 * std::f64::consts::PI / 8.0;

pub const FEATURE_IDS: [&str; 12] = [
    "bias",
    "slope_mean",
    "slope_max",
    "roughness_mean",
    "roughness_max",
    "risky_fraction",
    "stair_fraction",
    "obstacle_fraction",
    "lambda_risky_fraction",
    "lambda_risky_any",
    "lambda_stair_fraction",
    "lambda_stair_any",
];
pub const N_FEATURES: usize = FEATURE_IDS.len();

/// Pooling window half-sizes in coarse cells per θ bin: elongated along the
/// heading for the axis bins, square for the diagonals.
const WINDOWS: [(usize, usize); ABSTRACT_THETA_BINS] = [(4, 3), (4, 4), (3, 4), (4, 4)];

/// Abstract heading bin of a fine heading (footprints repeat every π).
pub fn abstract_bin(theta: f64) -> usize {
    let a = theta.rem_euclid(std::f64::consts::PI);
    ((a / (std::f64::consts::PI / ABSTRACT_THETA_BINS as f64)).round() as usize) % ABSTRACT_THETA_BINS
}

#[derive(Debug, Clone, Copy, Default)]
struct Block {
    known: u32,
    total: u32,
    slope_sum: f64,
    slope_max: f64,
    rough_sum: f64,
    rough_max: f64,
    risky: u32,
    stair: u32,
    obstacle: u32,
    base_free: u32,
}

/// Per coarse cell and θ bin pooled feature vectors.
#[derive(Debug, Clone)]
pub struct PooledFeatures {
    pub geometry: GridGeometry,
    /// `(cell index * ABSTRACT_THETA_BINS + bin)`.
    pub data: Vec<[f64; N_FEATURES]>,
    /// Coarse cells whose fine cells all have infinite base cost.
    pub base_blocked: Vec<bool>,
}

impl PooledFeatures {
    pub fn at(&self, cell: usize, bin: usize) -> &[f64; N_FEATURES] {
        &self.data[cell * ABSTRACT_THETA_BINS + bin]
    }
}

/// Pools fine features over the robot footprint window of every coarse cell.
pub fn pooled_features(features: &TerrainFeatures, classes: &TerrainClassMap, costmap: &CostMap) -> Result<PooledFeatures> {
    let fine = features.geometry;
    fine.ensure_aligned(classes.geometry(), "class map")?;
    fine.ensure_aligned(costmap.geometry(), "cost map")?;
    let lambda = costmap.lambda();
    let coarse = GridGeometry::new(
        fine.resolution * COARSE_FACTOR as f64,
        fine.origin,
        fine.width.div_ceil(COARSE_FACTOR),
        fine.height.div_ceil(COARSE_FACTOR),
    )?;

    let mut blocks = vec![Block::default(); coarse.len()];
    for i in 0..fine.len() {
        let (cx, cy) = fine.cell_of_index(i);
        let b = &mut blocks[coarse.index((cx / COARSE_FACTOR, cy / COARSE_FACTOR))];
        b.total += 1;
        if costmap.base(i).is_finite() {
            b.base_free += 1;
        }
        match classes.get_index(i) {
            TerrainClass::Risky => b.risky += 1,
            TerrainClass::Stair => b.stair += 1,
            TerrainClass::Obstacle => b.obstacle += 1,
            TerrainClass::Safe => {}
        }
        if !features.is_unknown(i) {
            let (s, r) = (features.slope[i] as f64, features.roughness[i] as f64);
            b.known += 1;
            b.slope_sum += s;
            b.rough_sum += r;
            b.slope_max = b.slope_max.max(s);
            b.rough_max = b.rough_max.max(r);
        }
    }

    let mut data = vec![[0.0; N_FEATURES]; coarse.len() * ABSTRACT_THETA_BINS];
    for cy in 0..coarse.height {
        for cx in 0..coarse.width {
            let ci = coarse.index((cx, cy));
            for (bin, &(rx, ry)) in WINDOWS.iter().enumerate() {
                let mut acc = Block::default();
                for y in cy.saturating_sub(ry)..=(cy + ry).min(coarse.height - 1) {
                    for x in cx.saturating_sub(rx)..=(cx + rx).min(coarse.width - 1) {
                        let b = &blocks[coarse.index((x, y))];
                        acc.known += b.known;
                        acc.total += b.total;
                        acc.slope_sum += b.slope_sum;
                        acc.rough_sum += b.rough_sum;
                        acc.slope_max = acc.slope_max.max(b.slope_max);
                        acc.rough_max = acc.rough_max.max(b.rough_max);
                        acc.risky += b.risky;
                        acc.stair += b.stair;
                        acc.obstacle += b.obstacle;
                    }
                }
                let known = acc.known.max(1) as f64;
                let total = acc.total.max(1) as f64;
                let risky = acc.risky as f64 / total;
                let stair = acc.stair as f64 / total;
                data[ci * ABSTRACT_THETA_BINS + bin] = [
                    1.0,
                    acc.slope_sum / known,
                    acc.slope_max,
                    acc.rough_sum / known,
                    acc.rough_max,
                    risky,
                    stair,
                    acc.obstacle as f64 / total,
                    lambda * risky,
                    lambda * if acc.risky > 0 { 1.0 } else { 0.0 },
                    lambda * stair,
                    lambda * if acc.stair > 0 { 1.0 } else { 0.0 },
                ];
            }
        }
    }
    let base_blocked = blocks.iter().map(|b| b.base_free == 0).collect();
    Ok(PooledFeatures { geometry: coarse, data, base_blocked })
}

/// Coarse traversal costs per meter, per cell and θ bin.
#[derive(Debug, Clone)]
pub struct AbstractMap {
    pub geometry: GridGeometry,
    /// `(cell index * ABSTRACT_THETA_BINS + bin)`; infinite where impassable.
    pub cost: Vec<f64>,
    /// Most frequent fine class per coarse cell.
    pub semantic: Vec<TerrainClass>,
    pub gamma: f64,
}

impl AbstractMap {
    pub fn cost_at(&self, cell: usize, bin: usize) -> f64 {
        self.cost[cell * ABSTRACT_THETA_BINS + bin]
    }
}

/// Builds the abstract map: `γ · max(1, prediction)` per cell and θ bin;
/// infinite where every covered fine cell is an obstacle or the body cannot
/// stand anywhere in the coarse cell.
pub fn build_abstract_map(
    features: &TerrainFeatures,
    classes: &TerrainClassMap,
    costmap: &CostMap,
    model: &HeuristicModel,
) -> Result<AbstractMap> {
    let pooled = pooled_features(features, classes, costmap)?;
    Ok(abstract_from_pooled(&pooled, classes, model, model.gamma))
}

pub(crate) fn abstract_from_pooled(
    pooled: &PooledFeatures,
    classes: &TerrainClassMap,
    model: &HeuristicModel,
    gamma: f64,
) -> AbstractMap {
    let g = pooled.geometry;
    let mut cost = Vec::with_capacity(pooled.data.len());
    for ci in 0..g.len() {
        for bin in 0..ABSTRACT_THETA_BINS {
            let x = pooled.at(ci, bin);
            let c = if pooled.base_blocked[ci] || x[7] >= 1.0 {
                f64::INFINITY
            } else {
                gamma * model.predict(x).max(MIN_COST_PER_METER)
            };
            cost.push(c);
        }
    }
    let fine = *classes.geometry();
    let mut hist = vec![[0u32; 4]; g.len()];
    for i in 0..fine.len() {
        let (cx, cy) = fine.cell_of_index(i);
        hist[g.index((cx / COARSE_FACTOR, cy / COARSE_FACTOR))][classes.get_index(i) as usize] += 1;
    }
    let semantic = hist
        .iter()
        .map(|h| {
            let best = (0..4).max_by_key(|&k| (h[k], std::cmp::Reverse(k))).unwrap_or(0);
            TerrainClass::from_u8(best as u8).unwrap_or(TerrainClass::Safe)
        })
        .collect();
    AbstractMap { geometry: g, cost, semantic, gamma }
}

/// Backward Dijkstra over the abstract graph from the goal region.
#[derive(Debug, Clone)]
pub struct InformedHeuristic {
    geometry: GridGeometry,
    dist: Vec<f64>,
    slack: Vec<f64>,
}

impl InformedHeuristic {
    pub fn new(map: AbstractMap, goal: &Goal) -> Self {
        let g = map.geometry;
        let nb = ABSTRACT_THETA_BINS;
        let mut dist = vec![f64::INFINITY; g.len() * nb];
        let mut heap = BinaryHeap::new();
        for ci in 0..g.len() {
            let (cx, cy) = g.cell_of_index(ci);
            let x0 = g.origin.0 + cx as f64 * g.resolution;
            let y0 = g.origin.1 + cy as f64 * g.resolution;
            let dx = (x0 - goal.x).max(goal.x - (x0 + g.resolution)).max(0.0);
            let dy = (y0 - goal.y).max(goal.y - (y0 + g.resolution)).max(0.0);
            if dx.hypot(dy) <= goal.pos_tol {
                for b in 0..nb {
                    dist[ci * nb + b] = 0.0;
                    heap.push(Reverse((OrdF64(0.0), ci * nb + b)));
                }
            }
        }
        let diag = g.resolution * std::f64::consts::SQRT_2;
        let turn = TURN_LOWER_BOUND * map.gamma;
        while let Some(Reverse((OrdF64(d), node))) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            let (ci, b) = (node / nb, node % nb);
            let here = map.cost[node];
            let cell = g.cell_of_index(ci);
            let mut relax = |n: usize, nd: f64, heap: &mut BinaryHeap<Reverse<(OrdF64, usize)>>| {
                if nd < dist[n] {
                    dist[n] = nd;
                    heap.push(Reverse((OrdF64(nd), n)));
                }
            };
            for nbin in [(b + 1) % nb, (b + nb - 1) % nb] {
                let n = ci * nb + nbin;
                if map.cost[n].is_finite() {
                    relax(n, d + turn, &mut heap);
                }
            }
            for ncell in g.neighbors8(cell) {
                let n = g.index(ncell) * nb + b;
                let c = map.cost[n];
                if !c.is_finite() {
                    continue;
                }
                let len = if ncell.0 != cell.0 && ncell.1 != cell.1 { diag } else { g.resolution };
                // the goal region itself may be impassable at the abstract level
                let step = if here.is_finite() { 0.5 * (c + here) } else { c };
                relax(n, d + len * step, &mut heap);
            }
        }
        // a pose lies up to half a cell diagonal from its cell center
        let half = g.resolution * std::f64::consts::FRAC_1_SQRT_2;
        let slack = map
            .cost
            .iter()
            .map(|&c| if c.is_finite() { c * half } else { f64::INFINITY })
            .collect();
        InformedHeuristic { geometry: g, dist, slack }
    }

    /// Abstract cost-to-go from a coarse cell and bin (no discretization slack).
    pub fn distance(&self, cell: (usize, usize), bin: usize) -> f64 {
        self.dist[self.geometry.index(cell) * ABSTRACT_THETA_BINS + bin]
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    /// Estimate at a world pose.
    pub fn at(&self, x: f64, y: f64, theta: f64) -> f64 {
        match self.geometry.world_to_cell(x, y) {
            None => f64::INFINITY,
            Some(c) => {
                let node = self.geometry.index(c) * ABSTRACT_THETA_BINS + abstract_bin(theta);
                let d = self.dist[node];
                if d == 0.0 || !self.slack[node].is_finite() {
                    0.0
                } else {
                    (d - self.slack[node]).max(0.0)
                }
            }
        }
    }
}

impl Heuristic for InformedHeuristic {
    fn estimate(&self, s: &RobotState) -> f64 {
        self.at(s.base.x, s.base.y, s.base.theta)
    }
}
