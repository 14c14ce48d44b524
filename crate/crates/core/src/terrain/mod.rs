//! Point-cloud ingestion, height maps, geometric features, stair detection
//! and traversability classification.

mod classify;
mod features;
pub mod forest;
mod stairs;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Bounds, Cell, GridGeometry};

pub use classify::{classify_terrain, ClassifierModel, ClassifyConfig, TrainingSample};
pub use features::{compute_features, TerrainFeatures};
pub use stairs::{detect_stairs, StairConfig, StairMask};

/// Default fine map resolution in meters per cell.
pub const DEFAULT_RESOLUTION: f64 = 0.025;

/// Unordered set of world-frame points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Format("point cloud contains non-finite coordinates".into()));
        }
        Ok(PointCloud { points })
    }

    /// Parses whitespace-separated `x y z` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace().map(str::parse::<f64>);
            let mut next = || -> Result<f64> {
                fields
                    .next()
                    .ok_or_else(|| Error::Format(format!("line {}: expected 3 fields", lineno + 1)))?
                    .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))
            };
            let p = [next()?, next()?, next()?];
            points.push(p);
        }
        PointCloud::new(points)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.points.len() * 24);
        for p in &self.points {
            out.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
        }
        out
    }

    pub fn translated(&self, dx: f64, dy: f64) -> PointCloud {
        PointCloud { points: self.points.iter().map(|p| [p[0] + dx, p[1] + dy, p[2]]).collect() }
    }
}

/// Fine 2.5D elevation grid with a per-cell known mask.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    geometry: GridGeometry,
    elevation: Vec<f32>,
    known: Vec<bool>,
}

impl HeightMap {
    /// All-unknown map.
    pub fn unknown(geometry: GridGeometry) -> Self {
        HeightMap { geometry, elevation: vec![0.0; geometry.len()], known: vec![false; geometry.len()] }
    }

    pub fn flat(geometry: GridGeometry, z: f32) -> Self {
        HeightMap { geometry, elevation: vec![z; geometry.len()], known: vec![true; geometry.len()] }
    }

    pub fn from_parts(geometry: GridGeometry, elevation: Vec<f32>, known: Vec<bool>) -> Result<Self> {
        if elevation.len() != geometry.len() || known.len() != geometry.len() {
            return Err(Error::LayerMismatch(format!(
                "expected {} cells, got {} elevations and {} mask entries",
                geometry.len(),
                elevation.len(),
                known.len()
            )));
        }
        if elevation.iter().zip(&known).any(|(z, k)| *k && !z.is_finite()) {
            return Err(Error::Format("known cell with non-finite elevation".into()));
        }
        Ok(HeightMap { geometry, elevation, known })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn resolution(&self) -> f64 {
        self.geometry.resolution
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn elevations(&self) -> &[f32] {
        &self.elevation
    }

    pub fn known_mask(&self) -> &[bool] {
        &self.known
    }

    /// Elevation of a known cell.
    #[inline]
    pub fn get(&self, cell: Cell) -> Option<f32> {
        let i = self.geometry.index(cell);
        self.known[i].then(|| self.elevation[i])
    }

    #[inline]
    pub fn get_index(&self, idx: usize) -> Option<f32> {
        self.known[idx].then(|| self.elevation[idx])
    }

    pub fn elevation_at(&self, x: f64, y: f64) -> Option<f32> {
        self.geometry.world_to_cell(x, y).and_then(|c| self.get(c))
    }

    pub fn set(&mut self, cell: Cell, z: Option<f32>) {
        let i = self.geometry.index(cell);
        match z {
            Some(z) if z.is_finite() => {
                self.elevation[i] = z;
                self.known[i] = true;
            }
            _ => {
                self.elevation[i] = 0.0;
                self.known[i] = false;
            }
        }
    }

    pub fn known_count(&self) -> usize {
        self.known.iter().filter(|k| **k).count()
    }

    /// Stable 64-bit FNV-1a digest of geometry and content, used as a map id.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        h.write(&self.geometry.resolution.to_le_bytes());
        h.write(&self.geometry.origin.0.to_le_bytes());
        h.write(&self.geometry.origin.1.to_le_bytes());
        h.write(&(self.geometry.width as u64).to_le_bytes());
        h.write(&(self.geometry.height as u64).to_le_bytes());
        for (z, k) in self.elevation.iter().zip(&self.known) {
            h.write(&[*k as u8]);
            if *k {
                h.write(&z.to_le_bytes());
            }
        }
        h.0
    }
}

#[derive(Debug)]
pub(crate) struct Fnv(pub u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    pub fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= *b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

/// Options for [`build_height_map`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightMapConfig {
    /// Search radius in cells for filling empty cells from measured neighbours.
    pub fill_radius: usize,
    /// Measured cells required inside the radius before a gap is filled.
    pub fill_min_support: usize,
}

impl Default for HeightMapConfig {
    fn default() -> Self {
        HeightMapConfig { fill_radius: 3, fill_min_support: 3 }
    }
}

/// Rasterizes a point cloud. Each cell keeps the highest point that falls into
/// it; empty cells take the elevation of the nearest measured cell within
/// `fill_radius` when enough measured cells surround them, and stay unknown
/// otherwise.
pub fn build_height_map(cloud: &PointCloud, resolution: f64, bounds: Bounds) -> Result<HeightMap> {
    build_height_map_with(cloud, resolution, bounds, HeightMapConfig::default())
}

pub fn build_height_map_with(
    cloud: &PointCloud,
    resolution: f64,
    bounds: Bounds,
    config: HeightMapConfig,
) -> Result<HeightMap> {
    let geometry = GridGeometry::from_bounds(bounds, resolution)?;
    let mut elevation = vec![f32::NEG_INFINITY; geometry.len()];
    let mut measured = vec![false; geometry.len()];
    for p in &cloud.points {
        if let Some(cell) = geometry.world_to_cell(p[0], p[1]) {
            let i = geometry.index(cell);
            let z = p[2] as f32;
            if !measured[i] || z > elevation[i] {
                elevation[i] = z;
            }
            measured[i] = true;
        }
    }

    let mut known = measured.clone();
    let r = config.fill_radius as i64;
    if r > 0 {
        let filled: Vec<(usize, f32)> = (0..geometry.len())
            .filter(|&i| !measured[i])
            .filter_map(|i| {
                let (cx, cy) = geometry.cell_of_index(i);
                let mut support = 0usize;
                let mut best: Option<(i64, f32)> = None;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let d2 = dx * dx + dy * dy;
                        if d2 > r * r {
                            continue;
                        }
                        let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                        if !geometry.contains_signed(nx, ny) {
                            continue;
                        }
                        let j = geometry.index((nx as usize, ny as usize));
                        if measured[j] {
                            support += 1;
                            if best.is_none_or(|(bd, _)| d2 < bd) {
                                best = Some((d2, elevation[j]));
                            }
                        }
                    }
                }
                (support >= config.fill_min_support).then(|| (i, best.map(|b| b.1).unwrap_or(0.0)))
            })
            .collect();
        for (i, z) in filled {
            elevation[i] = z;
            known[i] = true;
        }
    }
    for (z, k) in elevation.iter_mut().zip(&known) {
        if !*k {
            *z = 0.0;
        }
    }
    HeightMap::from_parts(geometry, elevation, known)
}

/// Roughness window radius (cells) used by [`analyze_terrain`].
pub const FEATURE_WINDOW: usize = 2;

/// Everything derived from a height map for planning.
#[derive(Debug, Clone)]
pub struct TerrainAnalysis {
    pub features: TerrainFeatures,
    pub stairs: StairMask,
    pub classes: TerrainClassMap,
}

/// Features, stair detection and classification with default settings.
pub fn analyze_terrain(
    map: &HeightMap,
    appearance: Option<&AppearanceLayer>,
    model: &ClassifierModel,
) -> Result<TerrainAnalysis> {
    let features = compute_features(map, FEATURE_WINDOW);
    let stairs = detect_stairs(map, &features, &StairConfig::default());
    let classes = classify_terrain(&features, &stairs, appearance, model)?;
    Ok(TerrainAnalysis { features, stairs, classes })
}

/// Per-cell traversability label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum TerrainClass {
    Safe = 0,
    Risky = 1,
    Obstacle = 2,
    Stair = 3,
}

impl TerrainClass {
    pub const ALL: [TerrainClass; 4] = [TerrainClass::Safe, TerrainClass::Risky, TerrainClass::Obstacle, TerrainClass::Stair];

    pub fn from_u8(v: u8) -> Option<Self> {
        TerrainClass::ALL.get(v as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TerrainClass::Safe => "safe",
            TerrainClass::Risky => "risky",
            TerrainClass::Obstacle => "obstacle",
            TerrainClass::Stair => "stair",
        }
    }
}

/// Externally supplied appearance label, standing in for an image-based
/// segmentation network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum AppearanceClass {
    None = 0,
    Pavement = 1,
    Gravel = 2,
    Vegetation = 3,
    Wall = 4,
}

impl AppearanceClass {
    pub fn from_u8(v: u8) -> Option<Self> {
        use AppearanceClass::*;
        [None, Pavement, Gravel, Vegetation, Wall].get(v as usize).copied()
    }
}

/// Per-cell appearance layer aligned with a height map.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceLayer {
    pub geometry: GridGeometry,
    pub class: Vec<AppearanceClass>,
}

impl AppearanceLayer {
    pub fn uniform(geometry: GridGeometry, class: AppearanceClass) -> Self {
        AppearanceLayer { geometry, class: vec![class; geometry.len()] }
    }
}

/// Per-cell label and confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainClassMap {
    geometry: GridGeometry,
    label: Vec<TerrainClass>,
    confidence: Vec<f32>,
}

impl TerrainClassMap {
    pub fn from_parts(geometry: GridGeometry, label: Vec<TerrainClass>, confidence: Vec<f32>) -> Result<Self> {
        if label.len() != geometry.len() || confidence.len() != geometry.len() {
            return Err(Error::LayerMismatch("class map layer length".into()));
        }
        if confidence.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Format("confidence outside [0, 1]".into()));
        }
        Ok(TerrainClassMap { geometry, label, confidence })
    }

    pub fn uniform(geometry: GridGeometry, class: TerrainClass) -> Self {
        TerrainClassMap { geometry, label: vec![class; geometry.len()], confidence: vec![1.0; geometry.len()] }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn labels(&self) -> &[TerrainClass] {
        &self.label
    }

    pub fn confidences(&self) -> &[f32] {
        &self.confidence
    }

    #[inline]
    pub fn get(&self, cell: Cell) -> TerrainClass {
        self.label[self.geometry.index(cell)]
    }

    #[inline]
    pub fn get_index(&self, idx: usize) -> TerrainClass {
        self.label[idx]
    }

    pub fn set(&mut self, cell: Cell, class: TerrainClass, confidence: f32) {
        let i = self.geometry.index(cell);
        self.label[i] = class;
        self.confidence[i] = confidence.clamp(0.0, 1.0);
    }

    pub fn count(&self, class: TerrainClass) -> usize {
        self.label.iter().filter(|l| **l == class).count()
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        for (l, c) in self.label.iter().zip(&self.confidence) {
            h.write(&[*l as u8]);
            h.write(&c.to_le_bytes());
        }
        h.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds() -> Bounds {
        Bounds::new(-0.5, -0.5, 0.5, 0.5)
    }

    #[test]
    fn single_point_sets_one_cell() {
        let cloud = PointCloud::new(vec![[0.0, 0.0, 0.5]]).unwrap();
        let map = build_height_map(&cloud, 0.025, bounds()).unwrap();
        let cell = map.geometry().world_to_cell(0.0, 0.0).unwrap();
        assert_eq!(map.get(cell), Some(0.5));
        assert_eq!(map.known_count(), 1);
    }

    #[test]
    fn empty_cloud_is_all_unknown() {
        let map = build_height_map(&PointCloud::default(), 0.025, bounds()).unwrap();
        assert_eq!(map.known_count(), 0);
    }

    #[test]
    fn max_rule_within_cell() {
        let cloud = PointCloud::new(vec![[0.01, 0.01, 0.10], [0.012, 0.011, 0.12]]).unwrap();
        let map = build_height_map(&cloud, 0.025, bounds()).unwrap();
        assert_eq!(map.elevation_at(0.01, 0.01), Some(0.12));
    }

    #[test]
    fn degenerate_bounds() {
        let r = build_height_map(&PointCloud::default(), 0.025, Bounds::new(0.0, 0.0, 0.0, 1.0));
        assert!(matches!(r, Err(Error::InvalidBounds(_))));
    }

    #[test]
    fn small_holes_are_filled_from_nearest_measurement() {
        let mut pts = Vec::new();
        for i in 0..40 {
            for j in 0..40 {
                if (i, j) == (20, 20) {
                    continue;
                }
                pts.push([-0.5 + (i as f64 + 0.5) * 0.025, -0.5 + (j as f64 + 0.5) * 0.025, 0.2]);
            }
        }
        let map = build_height_map(&PointCloud::new(pts).unwrap(), 0.025, bounds()).unwrap();
        assert_eq!(map.get((20, 20)), Some(0.2));
        assert_eq!(map.known_count(), 1600);
    }

    #[test]
    fn parse_cloud_text() {
        let cloud = PointCloud::parse("# header\n0 0 1\n\n1.5 -2 0.25\n").unwrap();
        assert_eq!(cloud.points, vec![[0.0, 0.0, 1.0], [1.5, -2.0, 0.25]]);
        assert!(PointCloud::parse("1 2\n").is_err());
        assert!(PointCloud::parse("1 2 x\n").is_err());
        assert_eq!(PointCloud::parse(&cloud.to_text()).unwrap(), cloud);
    }
}
