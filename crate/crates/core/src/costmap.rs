//! Per-cell traversal costs for the robot base and for individual feet.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Cell, GridGeometry};
use crate::terrain::{HeightMap, TerrainClass, TerrainClassMap, TerrainFeatures};

/// Cost formula coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    /// Foot cost per radian of slope.
    pub w_slope: f64,
    /// Foot cost per meter of roughness.
    pub w_roughness: f64,
    pub penalty_risky: f64,
    pub penalty_stair: f64,
    /// Free space required between body underside and the highest terrain below it.
    pub clearance: f64,
    /// Body underside height above the lowest supporting terrain under the body.
    pub body_height: f64,
    /// Half-size of the square body footprint checked for clearance.
    pub body_radius: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            w_slope: 2.0,
            w_roughness: 20.0,
            penalty_risky: 1.0,
            penalty_stair: 0.5,
            clearance: 0.25,
            body_height: 0.80,
            body_radius: 0.30,
        }
    }
}

impl CostConfig {
    pub fn class_penalty(&self, class: TerrainClass) -> f64 {
        match class {
            TerrainClass::Safe => 0.0,
            TerrainClass::Risky => self.penalty_risky,
            TerrainClass::Stair => self.penalty_stair,
            TerrainClass::Obstacle => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Base,
    Foot,
}

/// Immutable cost layers plus the map and classes they were derived from.
#[derive(Debug, Clone)]
pub struct CostMap {
    geometry: GridGeometry,
    foot_cost: Vec<f32>,
    base_cost: Vec<f32>,
    /// Terrain-class penalty of each cell (before the λ weight), used for reporting.
    class_penalty: Vec<f32>,
    lambda: f64,
    config: CostConfig,
    source: Arc<HeightMap>,
    classes_id: u64,
}

impl CostMap {
    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn config(&self) -> &CostConfig {
        &self.config
    }

    pub fn height_map(&self) -> &HeightMap {
        &self.source
    }

    pub fn height_map_arc(&self) -> &Arc<HeightMap> {
        &self.source
    }

    /// `(height map fingerprint, class map fingerprint)`.
    pub fn provenance(&self) -> (u64, u64) {
        (self.source.fingerprint(), self.classes_id)
    }

    pub fn foot_costs(&self) -> &[f32] {
        &self.foot_cost
    }

    pub fn base_costs(&self) -> &[f32] {
        &self.base_cost
    }

    #[inline]
    pub fn foot(&self, idx: usize) -> f64 {
        self.foot_cost[idx] as f64
    }

    #[inline]
    pub fn base(&self, idx: usize) -> f64 {
        self.base_cost[idx] as f64
    }

    #[inline]
    pub fn class_penalty_at(&self, idx: usize) -> f64 {
        self.class_penalty[idx] as f64
    }

    #[inline]
    pub fn cell_cost(&self, cell: Cell, kind: CostKind) -> f64 {
        let i = self.geometry.index(cell);
        match kind {
            CostKind::Base => self.base(i),
            CostKind::Foot => self.foot(i),
        }
    }

    /// Nearest-cell lookup (floor mapping); outside the map the cost is infinite.
    pub fn query_cost(&self, x: f64, y: f64, kind: CostKind) -> f64 {
        self.geometry.world_to_cell(x, y).map_or(f64::INFINITY, |c| self.cell_cost(c, kind))
    }

    /// Rebuilds a cost map from stored layers (used by the file formats).
    pub fn from_layers(
        source: Arc<HeightMap>,
        foot_cost: Vec<f32>,
        base_cost: Vec<f32>,
        class_penalty: Vec<f32>,
        lambda: f64,
        config: CostConfig,
        classes_id: u64,
    ) -> Result<Self> {
        let geometry = *source.geometry();
        let n = geometry.len();
        if foot_cost.len() != n || base_cost.len() != n || class_penalty.len() != n {
            return Err(Error::LayerMismatch("cost layer length".into()));
        }
        Ok(CostMap { geometry, foot_cost, base_cost, class_penalty, lambda, config, source, classes_id })
    }
}

/// Builds foot and base costs.
///
/// Foot: `1 + w_s·slope + w_r·roughness + λ·penalty(class)`, infinite on
/// obstacle cells. Base: `1` where the body, resting `body_height` above the
/// lowest known terrain in its footprint, keeps `clearance` over the highest
/// known terrain in that footprint; infinite otherwise.
pub fn build_cost_map(
    map: Arc<HeightMap>,
    classes: &TerrainClassMap,
    features: &TerrainFeatures,
    lambda: f64,
) -> Result<CostMap> {
    build_cost_map_with(map, classes, features, lambda, CostConfig::default())
}

pub fn build_cost_map_with(
    map: Arc<HeightMap>,
    classes: &TerrainClassMap,
    features: &TerrainFeatures,
    lambda: f64,
    config: CostConfig,
) -> Result<CostMap> {
    let g = *map.geometry();
    g.ensure_aligned(classes.geometry(), "class map")?;
    g.ensure_aligned(&features.geometry, "features")?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidRequest(format!("lambda must be finite and >= 0, got {lambda}")));
    }

    let mut foot_cost = Vec::with_capacity(g.len());
    let mut class_penalty = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        let class = classes.get_index(i);
        let penalty = config.class_penalty(class);
        class_penalty.push(penalty as f32);
        let cost = if penalty.is_infinite() || features.is_unknown(i) {
            f64::INFINITY
        } else {
            // λ·0 must stay 0 for safe cells
            let class_term = if penalty == 0.0 { 0.0 } else { lambda * penalty };
            1.0 + config.w_slope * features.slope[i] as f64 + config.w_roughness * features.roughness[i] as f64 + class_term
        };
        foot_cost.push(cost as f32);
    }

    let base_cost = base_clearance_costs(&map, &config);
    let classes_id = classes.fingerprint();
    Ok(CostMap { geometry: g, foot_cost, base_cost, class_penalty, lambda, config, source: map, classes_id })
}

fn base_clearance_costs(map: &HeightMap, config: &CostConfig) -> Vec<f32> {
    let g = *map.geometry();
    let r = (config.body_radius / g.resolution).ceil() as usize;
    let hi_src: Vec<f32> = (0..g.len()).map(|i| map.get_index(i).unwrap_or(f32::NEG_INFINITY)).collect();
    let lo_src: Vec<f32> = (0..g.len()).map(|i| map.get_index(i).unwrap_or(f32::INFINITY)).collect();
    let hi = window_reduce(&hi_src, g.width, g.height, r, f32::max, f32::NEG_INFINITY);
    let lo = window_reduce(&lo_src, g.width, g.height, r, f32::min, f32::INFINITY);
    let allowed = config.body_height - config.clearance;
    hi.iter()
        .zip(&lo)
        .map(|(h, l)| {
            if !l.is_finite() || (*h as f64 - *l as f64) > allowed + 1e-9 {
                f32::INFINITY
            } else {
                1.0
            }
        })
        .collect()
}

/// Separable square-window reduction (min or max) with radius `r`.
pub(crate) fn window_reduce(
    src: &[f32],
    width: usize,
    height: usize,
    r: usize,
    op: fn(f32, f32) -> f32,
    identity: f32,
) -> Vec<f32> {
    let mut tmp = vec![identity; src.len()];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for x in 0..width {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(width - 1);
            tmp[y * width + x] = row[lo..=hi].iter().copied().fold(identity, op);
        }
    }
    let mut out = vec![identity; src.len()];
    for x in 0..width {
        for y in 0..height {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(height - 1);
            let mut acc = identity;
            for yy in lo..=hi {
                acc = op(acc, tmp[yy * width + x]);
            }
            out[y * width + x] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::compute_features;

    fn layers(n: usize) -> (Arc<HeightMap>, TerrainFeatures) {
        let g = GridGeometry::new(0.025, (0.0, 0.0), n, n).unwrap();
        let map = HeightMap::flat(g, 0.0);
        let f = compute_features(&map, 2);
        (Arc::new(map), f)
    }

    #[test]
    fn formula_examples() {
        let (map, f) = layers(30);
        let mut classes = TerrainClassMap::uniform(*map.geometry(), TerrainClass::Safe);
        classes.set((5, 5), TerrainClass::Obstacle, 1.0);
        classes.set((6, 5), TerrainClass::Risky, 1.0);
        classes.set((7, 5), TerrainClass::Stair, 1.0);
        for lambda in [0.0, 0.5, 2.0, 10.0] {
            let cm = build_cost_map(map.clone(), &classes, &f, lambda).unwrap();
            assert_eq!(cm.cell_cost((10, 10), CostKind::Foot), 1.0);
            assert!(cm.cell_cost((5, 5), CostKind::Foot).is_infinite());
            assert!((cm.cell_cost((6, 5), CostKind::Foot) - (1.0 + lambda)).abs() < 1e-6);
            assert!((cm.cell_cost((7, 5), CostKind::Foot) - (1.0 + 0.5 * lambda)).abs() < 1e-6);
            assert_eq!(cm.cell_cost((10, 10), CostKind::Base), 1.0);
        }
        let cm = build_cost_map(map, &classes, &f, 2.0).unwrap();
        assert_eq!(cm.cell_cost((6, 5), CostKind::Foot), 3.0);
    }

    #[test]
    fn query_cost_lookup_rules() {
        let (map, f) = layers(20);
        let mut classes = TerrainClassMap::uniform(*map.geometry(), TerrainClass::Safe);
        classes.set((2, 0), TerrainClass::Risky, 1.0);
        let cm = build_cost_map(map, &classes, &f, 1.0).unwrap();
        let (cx, cy) = cm.geometry().cell_center((3, 3));
        assert_eq!(cm.query_cost(cx, cy, CostKind::Foot), 1.0);
        assert!(cm.query_cost(-0.1, 0.2, CostKind::Foot).is_infinite());
        assert!(cm.query_cost(0.2, 10.0, CostKind::Base).is_infinite());
        // x = 0.05 sits on the boundary between cells 1 and 2 and floor-maps to 2
        assert_eq!(cm.query_cost(0.05, 0.01, CostKind::Foot), 2.0);
    }

    #[test]
    fn tall_block_blocks_base_in_footprint() {
        let g = GridGeometry::new(0.025, (0.0, 0.0), 60, 60).unwrap();
        let mut map = HeightMap::flat(g, 0.0);
        for y in 28..32 {
            for x in 28..32 {
                map.set((x, y), Some(0.7));
            }
        }
        let f = compute_features(&map, 2);
        let classes = TerrainClassMap::uniform(g, TerrainClass::Safe);
        let cm = build_cost_map(Arc::new(map), &classes, &f, 0.0).unwrap();
        assert!(cm.cell_cost((30, 30), CostKind::Base).is_infinite());
        assert!(cm.cell_cost((40, 30), CostKind::Base).is_infinite());
        assert_eq!(cm.cell_cost((45, 30), CostKind::Base), 1.0);
    }

    #[test]
    fn negative_lambda_rejected() {
        let (map, f) = layers(10);
        let classes = TerrainClassMap::uniform(*map.geometry(), TerrainClass::Safe);
        assert!(build_cost_map(map, &classes, &f, -1.0).is_err());
    }
}
