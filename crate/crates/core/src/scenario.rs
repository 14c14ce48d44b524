//! Seeded synthetic scenarios mirroring the evaluation tasks, with ground truth.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Bounds, GridGeometry};
use crate::planner::{Goal, PlanningWorld};
use crate::robot::Pose2;
use crate::terrain::{analyze_terrain, AppearanceClass, ClassifierModel, AppearanceLayer, HeightMap, TerrainClass, TerrainClassMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Flat,
    StepField,
    Staircase,
    Gap,
    GravelPatch,
    Platform,
    RandomTiles,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::Flat,
        ScenarioKind::StepField,
        ScenarioKind::Staircase,
        ScenarioKind::Gap,
        ScenarioKind::GravelPatch,
        ScenarioKind::Platform,
        ScenarioKind::RandomTiles,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Flat => "flat",
            ScenarioKind::StepField => "step_field",
            ScenarioKind::Staircase => "staircase",
            ScenarioKind::Gap => "gap",
            ScenarioKind::GravelPatch => "gravel_patch",
            ScenarioKind::Platform => "platform",
            ScenarioKind::RandomTiles => "random_tiles",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidRequest(format!("unknown scenario kind {s:?}")))
    }
}

/// Generator parameters. Unset fields take per-kind defaults; the manifest
/// records the resolved values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub width: Option<f64>,
    pub height: Option<f64>,
    pub resolution: Option<f64>,
    /// Staircase: number of risers.
    pub steps: Option<u32>,
    pub rise: Option<f64>,
    pub tread: Option<f64>,
    pub gap_width: Option<f64>,
    pub platform_height: Option<f64>,
    /// Step field: debris bars per square meter of the debris zone.
    pub debris_density: Option<f64>,
    pub debris_min_length: Option<f64>,
    pub debris_max_length: Option<f64>,
    /// Gravel patch: half-amplitude of the uniform surface noise (m).
    pub gravel_noise: Option<f64>,
    /// Random tiles: tile edge length (m).
    pub tile_size: Option<f64>,
}

impl ScenarioParams {
    fn resolved(&self, kind: ScenarioKind) -> ScenarioParams {
        let (w, h) = match kind {
            ScenarioKind::RandomTiles => (20.0, 20.0),
            ScenarioKind::GravelPatch | ScenarioKind::StepField | ScenarioKind::Platform => (8.0, 6.0),
            _ => (8.0, 4.0),
        };
        ScenarioParams {
            width: Some(self.width.unwrap_or(w)),
            height: Some(self.height.unwrap_or(h)),
            resolution: Some(self.resolution.unwrap_or(crate::terrain::DEFAULT_RESOLUTION)),
            steps: Some(self.steps.unwrap_or(3)),
            rise: Some(self.rise.unwrap_or(0.17)),
            tread: Some(self.tread.unwrap_or(0.29)),
            gap_width: Some(self.gap_width.unwrap_or(0.50)),
            platform_height: Some(self.platform_height.unwrap_or(0.20)),
            debris_density: Some(self.debris_density.unwrap_or(1.0)),
            debris_min_length: Some(self.debris_min_length.unwrap_or(0.3)),
            debris_max_length: Some(self.debris_max_length.unwrap_or(1.0)),
            gravel_noise: Some(self.gravel_noise.unwrap_or(0.004)),
            tile_size: Some(self.tile_size.unwrap_or(2.0)),
        }
    }

    fn check(&self) -> Result<()> {
        let positive = |name: &str, v: Option<f64>| -> Result<()> {
            match v {
                Some(v) if v > 0.0 && v.is_finite() => Ok(()),
                _ => Err(Error::InvalidRequest(format!("{name} must be > 0"))),
            }
        };
        positive("width", self.width)?;
        positive("height", self.height)?;
        positive("resolution", self.resolution)?;
        positive("rise", self.rise)?;
        positive("tread", self.tread)?;
        positive("gap_width", self.gap_width)?;
        positive("tile_size", self.tile_size)?;
        if self.steps == Some(0) {
            return Err(Error::InvalidRequest("steps must be >= 1".into()));
        }
        if self.debris_min_length > self.debris_max_length {
            return Err(Error::InvalidRequest("debris_min_length exceeds debris_max_length".into()));
        }
        Ok(())
    }
}

/// Terrain family of one random tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TileFamily {
    Flat,
    Gravel,
    Rough,
    Hump,
    Vegetation,
    Block,
}

impl TileFamily {
    /// Draws a family with fixed weights; `allow_block` excludes tall blocks.
    pub fn sample(rng: &mut ChaCha8Rng, allow_block: bool) -> TileFamily {
        let r: f64 = rng.gen();
        let fam = match r {
            r if r < 0.30 => TileFamily::Flat,
            r if r < 0.50 => TileFamily::Gravel,
            r if r < 0.62 => TileFamily::Rough,
            r if r < 0.72 => TileFamily::Hump,
            r if r < 0.85 => TileFamily::Vegetation,
            _ => TileFamily::Block,
        };
        if fam == TileFamily::Block && !allow_block {
            TileFamily::Flat
        } else {
            fam
        }
    }
}

/// Paints one tile family into the cell rectangle `[x0, x1) × [y0, y1)`.
/// Marks gravel ground truth in `gravel` when given.
pub fn paint_tile(
    map: &mut HeightMap,
    appearance: &mut AppearanceLayer,
    rect: (usize, usize, usize, usize),
    family: TileFamily,
    rng: &mut ChaCha8Rng,
    mut gravel: Option<&mut Vec<bool>>,
) {
    let g = *map.geometry();
    let (x0, y0, x1, y1) = rect;
    let (w, h) = ((x1 - x0) as f64, (y1 - y0) as f64);
    let hump = rng.gen_range(0.08..0.20);
    let noise = match family {
        TileFamily::Gravel => rng.gen_range(0.002..0.005),
        TileFamily::Rough => rng.gen_range(0.010..0.018),
        TileFamily::Vegetation => rng.gen_range(0.0..0.004),
        _ => 0.0,
    };
    let block = {
        let bw = rng.gen_range(0.3..0.7) * w;
        let bh = rng.gen_range(0.3..0.7) * h;
        let bx = rng.gen_range(0.0..(w - bw).max(1.0));
        let by = rng.gen_range(0.0..(h - bh).max(1.0));
        (x0 as f64 + bx, y0 as f64 + by, x0 as f64 + bx + bw, y0 as f64 + by + bh)
    };
    for cy in y0..y1 {
        for cx in x0..x1 {
            let i = g.index((cx, cy));
            let (u, v) = ((cx - x0) as f64 + 0.5, (cy - y0) as f64 + 0.5);
            let mut z = map.get_index(i).unwrap_or(0.0) as f64;
            match family {
                TileFamily::Hump => {
                    let a = (std::f64::consts::PI * u / w).sin() * (std::f64::consts::PI * v / h).sin();
                    z += hump * a * a;
                }
                TileFamily::Block => {
                    let (fx, fy) = (cx as f64 + 0.5, cy as f64 + 0.5);
                    if fx >= block.0 && fx < block.2 && fy >= block.1 && fy < block.3 {
                        z += 1.0;
                    }
                }
                _ => {}
            }
            if noise > 0.0 {
                z += rng.gen_range(-noise..noise);
            }
            map.set((cx, cy), Some(z as f32));
            appearance.class[i] = match family {
                TileFamily::Gravel => AppearanceClass::Gravel,
                TileFamily::Vegetation => AppearanceClass::Vegetation,
                _ => AppearanceClass::None,
            };
            if family == TileFamily::Gravel {
                if let Some(gt) = gravel.as_deref_mut() {
                    gt[i] = true;
                }
            }
        }
    }
}

/// A generated scenario: map, appearance, ground truth and a planning task.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    pub params: ScenarioParams,
    pub seed: u64,
    pub map: HeightMap,
    pub appearance: AppearanceLayer,
    pub stair_truth: Vec<bool>,
    pub gravel_truth: Vec<bool>,
    /// Gravel patch bounds (gravel_patch only).
    pub gravel_region: Option<Bounds>,
    pub start: Pose2,
    pub goal: Goal,
}

/// Serializable description of a generated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub schema: String,
    pub name: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub params: ScenarioParams,
    pub geometry: GridGeometry,
    pub start: Pose2,
    pub goal: Goal,
    pub gravel_region: Option<Bounds>,
    pub map_fingerprint: String,
    pub stair_cells: usize,
    pub gravel_cells: usize,
    pub unknown_cells: usize,
}

impl Scenario {
    pub fn geometry(&self) -> &GridGeometry {
        self.map.geometry()
    }

    pub fn manifest(&self) -> ScenarioManifest {
        ScenarioManifest {
            schema: "hyloco-scenario/1".into(),
            name: self.name.clone(),
            kind: self.kind,
            seed: self.seed,
            params: self.params.clone(),
            geometry: *self.geometry(),
            start: self.start,
            goal: self.goal,
            gravel_region: self.gravel_region,
            map_fingerprint: format!("{:016x}", self.map.fingerprint()),
            stair_cells: self.stair_truth.iter().filter(|v| **v).count(),
            gravel_cells: self.gravel_truth.iter().filter(|v| **v).count(),
            unknown_cells: self.map.geometry().len() - self.map.known_count(),
        }
    }

    /// Generator-labelled classes: unknown and tall-block cells obstacle,
    /// stairs stair, gravel risky, the rest safe.
    pub fn ground_truth_classes(&self) -> TerrainClassMap {
        let g = *self.geometry();
        let mut out = TerrainClassMap::uniform(g, TerrainClass::Safe);
        for i in 0..g.len() {
            let cell = g.cell_of_index(i);
            let class = if self.map.get_index(i).is_none() {
                TerrainClass::Obstacle
            } else if self.stair_truth[i] {
                TerrainClass::Stair
            } else if self.gravel_truth[i] {
                TerrainClass::Risky
            } else {
                TerrainClass::Safe
            };
            out.set(cell, class, 1.0);
        }
        out
    }

    /// Terrain analysis of the generated map with `classifier`.
    pub fn planning_world(&self, classifier: &ClassifierModel) -> Result<PlanningWorld> {
        let a = analyze_terrain(&self.map, Some(&self.appearance), classifier)?;
        PlanningWorld::new(Arc::new(self.map.clone()), Arc::new(a.features), Arc::new(a.classes))
    }

    /// True when the segment from `a` to `b` passes through a gravel ground-truth cell.
    pub fn segment_hits_gravel(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        let g = self.geometry();
        let n = (((b[0] - a[0]).hypot(b[1] - a[1]) / (g.resolution * 0.25)).ceil() as usize).max(1);
        (0..=n).any(|k| {
            let t = k as f64 / n as f64;
            g.world_to_cell(a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t)
                .is_some_and(|c| self.gravel_truth[g.index(c)])
        })
    }
}

/// Generates a scenario. Identical `(kind, params, seed)` give identical output.
pub fn generate_scenario(kind: ScenarioKind, params: &ScenarioParams, seed: u64) -> Result<Scenario> {
    params.check_partial()?;
    let p = params.resolved(kind);
    p.check()?;
    let g = GridGeometry::from_bounds(Bounds::new(0.0, 0.0, p.width.unwrap(), p.height.unwrap()), p.resolution.unwrap())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = HeightMap::flat(g, 0.0);
    let mut appearance = AppearanceLayer::uniform(g, AppearanceClass::None);
    let mut stair_truth = vec![false; g.len()];
    let mut gravel_truth = vec![false; g.len()];
    let mut gravel_region = None;
    let (w, h) = (p.width.unwrap(), p.height.unwrap());
    let mid = h / 2.0;
    let mut start = Pose2::new(1.0, mid, 0.0);
    let mut goal = Goal::new(w - 1.0, mid);

    let column = |x: f64| ((x / g.resolution) - 1e-9).ceil().max(0.0) as usize;
    match kind {
        ScenarioKind::Flat => {}
        ScenarioKind::Staircase => {
            let (steps, rise, tread) = (p.steps.unwrap() as usize, p.rise.unwrap(), p.tread.unwrap());
            let x0 = 3.0;
            let end = x0 + steps as f64 * tread;
            if end + 1.0 > w {
                return Err(Error::InvalidRequest("staircase does not fit the map width".into()));
            }
            for i in 0..g.len() {
                let (x, _) = g.cell_center(g.cell_of_index(i));
                if x >= x0 {
                    let k = (((x - x0) / tread).floor() as usize + 1).min(steps);
                    map.set(g.cell_of_index(i), Some((k as f64 * rise) as f32));
                    stair_truth[i] = x < end;
                }
            }
            start = Pose2::new(1.5, mid, 0.0);
            goal = Goal::new(end + 0.6, mid);
        }
        ScenarioKind::Gap => {
            let gw = p.gap_width.unwrap();
            let x0 = 3.5;
            let (c0, c1) = (column(x0), column(x0 + gw));
            for cy in 0..g.height {
                for cx in c0..c1.min(g.width) {
                    map.set((cx, cy), None);
                }
            }
            start = Pose2::new(1.5, mid, 0.0);
            goal = Goal::new(x0 + gw + 2.0, mid);
        }
        ScenarioKind::GravelPatch => {
            let region = Bounds::new(3.0, 1.5, 5.0, h - 1.5);
            let noise = p.gravel_noise.unwrap();
            for i in 0..g.len() {
                let cell = g.cell_of_index(i);
                let (x, y) = g.cell_center(cell);
                if x >= region.min_x && x < region.max_x && y >= region.min_y && y < region.max_y {
                    let z = if noise > 0.0 { rng.gen_range(-noise..noise) } else { 0.0 };
                    map.set(cell, Some(z as f32));
                    appearance.class[i] = AppearanceClass::Gravel;
                    gravel_truth[i] = true;
                }
            }
            gravel_region = Some(region);
        }
        ScenarioKind::Platform => {
            let ph = p.platform_height.unwrap() as f32;
            for i in 0..g.len() {
                let cell = g.cell_of_index(i);
                let (x, y) = g.cell_center(cell);
                if (3.5..5.5).contains(&x) && (mid - 1.0..mid + 1.0).contains(&y) {
                    map.set(cell, Some(ph));
                }
            }
            start = Pose2::new(1.5, mid, 0.0);
            goal = Goal::new(4.5, mid);
        }
        ScenarioKind::StepField => {
            let zone = Bounds::new(2.5, 0.5, w - 2.5, h - 0.5);
            let area = zone.width().max(0.0) * zone.height().max(0.0);
            let count = (area * p.debris_density.unwrap()).round() as usize;
            let (lmin, lmax) = (p.debris_min_length.unwrap(), p.debris_max_length.unwrap());
            for _ in 0..count {
                let len = if lmax > lmin { rng.gen_range(lmin..lmax) } else { lmin };
                let bar_h = rng.gen_range(0.04..0.12) as f32;
                let along_x = rng.gen_bool(0.5);
                let (bw, bh) = if along_x { (len, 0.1) } else { (0.1, len) };
                let bx = rng.gen_range(zone.min_x..(zone.max_x - bw).max(zone.min_x + 1e-6));
                let by = rng.gen_range(zone.min_y..(zone.max_y - bh).max(zone.min_y + 1e-6));
                for i in 0..g.len() {
                    let cell = g.cell_of_index(i);
                    let (x, y) = g.cell_center(cell);
                    if x >= bx && x < bx + bw && y >= by && y < by + bh {
                        let z = map.get(cell).unwrap_or(0.0).max(bar_h);
                        map.set(cell, Some(z));
                    }
                }
            }
        }
        ScenarioKind::RandomTiles => {
            let ts = ((p.tile_size.unwrap() / g.resolution).round() as usize).max(1);
            let (nx, ny) = (g.width.div_ceil(ts), g.height.div_ceil(ts));
            let start_tile = (0, ny / 2);
            let goal_tile = (nx - 1, ny / 2);
            for ty in 0..ny {
                for tx in 0..nx {
                    let fam = if (tx, ty) == start_tile || (tx, ty) == goal_tile {
                        TileFamily::Flat
                    } else {
                        TileFamily::sample(&mut rng, true)
                    };
                    let rect = (tx * ts, ty * ts, ((tx + 1) * ts).min(g.width), ((ty + 1) * ts).min(g.height));
                    paint_tile(&mut map, &mut appearance, rect, fam, &mut rng, Some(&mut gravel_truth));
                }
            }
            let center = |t: (usize, usize)| g.cell_center((t.0 * ts + ts / 2, (t.1 * ts + ts / 2).min(g.height - 1)));
            let (sx, sy) = center(start_tile);
            let (gx, gy) = center(goal_tile);
            start = Pose2::new(sx, sy, 0.0);
            goal = Goal::new(gx, gy);
        }
    }

    Ok(Scenario {
        name: format!("{}-{seed}", kind.name()),
        kind,
        params: p,
        seed,
        map,
        appearance,
        stair_truth,
        gravel_truth,
        gravel_region,
        start,
        goal,
    })
}

impl ScenarioParams {
    fn check_partial(&self) -> Result<()> {
        for (name, v) in [("width", self.width), ("height", self.height)] {
            if let Some(v) = v {
                if !(v >= 2.0) {
                    return Err(Error::InvalidRequest(format!("{name} must be at least 2 m")));
                }
            }
        }
        Ok(())
    }
}
