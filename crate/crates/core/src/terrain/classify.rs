use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridGeometry;

use super::forest::{ForestParams, RandomForest};
use super::{
    compute_features, AppearanceClass, AppearanceLayer, HeightMap, StairMask, TerrainClass, TerrainClassMap,
    TerrainFeatures,
};

pub const FEATURE_IDS: [&str; 8] = [
    "slope",
    "roughness",
    "max_step",
    "stair_flag",
    "appearance_pavement",
    "appearance_gravel",
    "appearance_vegetation",
    "appearance_wall",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    /// Steps above this height (meters) are obstacles regardless of the vote.
    pub max_step_height: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig { max_step_height: 0.30 }
    }
}

/// Forest plus the hard rules applied around it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub schema: String,
    pub feature_ids: Vec<String>,
    pub config: ClassifyConfig,
    pub forest: RandomForest,
}

/// One labelled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub features: [f32; 8],
    pub label: TerrainClass,
}

pub(crate) fn feature_vector(
    slope: f32,
    roughness: f32,
    max_step: f32,
    stair: bool,
    appearance: AppearanceClass,
) -> [f32; 8] {
    [
        slope,
        roughness,
        max_step,
        stair as u8 as f32,
        (appearance == AppearanceClass::Pavement) as u8 as f32,
        (appearance == AppearanceClass::Gravel) as u8 as f32,
        (appearance == AppearanceClass::Vegetation) as u8 as f32,
        (appearance == AppearanceClass::Wall) as u8 as f32,
    ]
}

impl ClassifierModel {
    pub const SCHEMA: &'static str = "hyloco-terrain-classifier/1";

    pub fn train(samples: &[TrainingSample], config: ClassifyConfig, params: &ForestParams) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InsufficientData { successful: 0, required: 1 });
        }
        let x: Vec<Vec<f32>> = samples.iter().map(|s| s.features.to_vec()).collect();
        let y: Vec<u8> = samples.iter().map(|s| s.label as u8).collect();
        Ok(ClassifierModel {
            schema: Self::SCHEMA.into(),
            feature_ids: FEATURE_IDS.iter().map(|s| s.to_string()).collect(),
            config,
            forest: RandomForest::fit(&x, &y, TerrainClass::ALL.len(), params),
        })
    }

    /// Model trained once per process on the built-in synthetic patch set.
    pub fn default_model() -> &'static ClassifierModel {
        static MODEL: OnceLock<ClassifierModel> = OnceLock::new();
        MODEL.get_or_init(|| {
            let samples = synthetic_training_samples(0xc1a55);
            ClassifierModel::train(&samples, ClassifyConfig::default(), &ForestParams::default())
                .expect("synthetic training set is non-empty")
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: ClassifierModel = serde_json::from_str(text)?;
        if m.schema != Self::SCHEMA {
            return Err(Error::Format(format!("unsupported classifier schema {}", m.schema)));
        }
        Ok(m)
    }

    pub fn vote(&self, features: &[f32; 8]) -> (TerrainClass, f32) {
        let (c, conf) = self.forest.predict(features);
        (TerrainClass::from_u8(c).unwrap_or(TerrainClass::Obstacle), conf)
    }
}

/// Labels every cell. Unknown cells and cells whose max step exceeds the
/// configured height are obstacles; stair cells are stairs; everything else is
/// decided by the forest vote.
pub fn classify_terrain(
    features: &TerrainFeatures,
    stairs: &StairMask,
    appearance: Option<&AppearanceLayer>,
    model: &ClassifierModel,
) -> Result<TerrainClassMap> {
    let g = features.geometry;
    g.ensure_aligned(&stairs.geometry, "stair mask")?;
    if let Some(a) = appearance {
        g.ensure_aligned(&a.geometry, "appearance layer")?;
    }
    let limit = model.config.max_step_height as f32;
    let mut label = Vec::with_capacity(g.len());
    let mut confidence = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        let (l, c) = if features.is_unknown(i) || features.max_step[i] > limit {
            (TerrainClass::Obstacle, 1.0)
        } else if stairs.cells[i] {
            (TerrainClass::Stair, 1.0)
        } else {
            let app = appearance.map_or(AppearanceClass::None, |a| a.class[i]);
            let fv = feature_vector(features.slope[i], features.roughness[i], features.max_step[i], false, app);
            model.vote(&fv)
        };
        label.push(l);
        confidence.push(c);
    }
    TerrainClassMap::from_parts(g, label, confidence)
}

#[derive(Debug, Clone, Copy)]
enum Patch {
    Flat,
    GentleSlope,
    ModerateSlope,
    SteepSlope,
    Gravel,
    SubtleGravel,
    Vegetation,
    Pavement,
    VeryRough,
    Stairs,
}

impl Patch {
    fn label(self) -> TerrainClass {
        match self {
            Patch::Flat | Patch::GentleSlope | Patch::Pavement => TerrainClass::Safe,
            Patch::ModerateSlope | Patch::Gravel | Patch::SubtleGravel | Patch::Vegetation => TerrainClass::Risky,
            Patch::SteepSlope | Patch::VeryRough => TerrainClass::Obstacle,
            Patch::Stairs => TerrainClass::Stair,
        }
    }
}

/// Generator-labelled samples from synthetic terrain patches (flat, sloped,
/// gravel, vegetation, very rough, stairs). Deterministic per seed.
pub fn synthetic_training_samples(seed: u64) -> Vec<TrainingSample> {
    const PATCH: usize = 48;
    const MARGIN: usize = 4;
    const PER_PATCH: usize = 300;
    let kinds = [
        Patch::Flat,
        Patch::GentleSlope,
        Patch::ModerateSlope,
        Patch::SteepSlope,
        Patch::Gravel,
        Patch::SubtleGravel,
        Patch::Vegetation,
        Patch::Pavement,
        Patch::VeryRough,
        Patch::Stairs,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = GridGeometry::new(0.025, (0.0, 0.0), PATCH, PATCH).expect("static geometry");
    let mut out = Vec::new();
    for &kind in &kinds {
        for _ in 0..6 {
            let (map, app) = synth_patch(kind, g, &mut rng);
            let f = compute_features(&map, 2);
            for _ in 0..PER_PATCH {
                let x = rng.gen_range(MARGIN..PATCH - MARGIN);
                let y = rng.gen_range(MARGIN..PATCH - MARGIN);
                let i = g.index((x, y));
                if f.is_unknown(i) {
                    continue;
                }
                let stair = matches!(kind, Patch::Stairs);
                out.push(TrainingSample {
                    features: feature_vector(f.slope[i], f.roughness[i], f.max_step[i], stair, app),
                    label: kind.label(),
                });
            }
        }
    }
    out
}

fn synth_patch(kind: Patch, g: GridGeometry, rng: &mut ChaCha8Rng) -> (HeightMap, AppearanceClass) {
    let dir: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (dir.cos(), dir.sin());
    let slope_of = |deg: f64| deg.to_radians().tan();
    let clean = rng.gen_bool(0.5);
    let (grade, noise, app) = match kind {
        Patch::Flat => (0.0, rng.gen_range(0.0..0.003), AppearanceClass::None),
        Patch::GentleSlope => (slope_of(rng.gen_range(0.0..12.0)), rng.gen_range(0.0..0.002), AppearanceClass::None),
        Patch::ModerateSlope => (slope_of(rng.gen_range(18.0..28.0)), 0.0, AppearanceClass::None),
        Patch::SteepSlope => (slope_of(rng.gen_range(38.0..60.0)), 0.0, AppearanceClass::None),
        Patch::Gravel => (0.0, rng.gen_range(0.015..0.045) * 3f64.sqrt(), AppearanceClass::None),
        Patch::SubtleGravel => (0.0, rng.gen_range(0.0..0.005), AppearanceClass::Gravel),
        Patch::Vegetation => (0.0, rng.gen_range(0.0..0.006), AppearanceClass::Vegetation),
        Patch::Pavement => (slope_of(rng.gen_range(0.0..8.0)), rng.gen_range(0.0..0.002), AppearanceClass::Pavement),
        Patch::VeryRough => (0.0, rng.gen_range(0.08..0.14) * 3f64.sqrt(), AppearanceClass::None),
        Patch::Stairs => (0.0, 0.0, AppearanceClass::None),
    };
    // exact zero-noise surfaces must not only come from stair treads
    let noise = if clean && !matches!(kind, Patch::Gravel | Patch::VeryRough) { 0.0 } else { noise };
    let rise = rng.gen_range(0.12..0.20);
    let tread_cells = rng.gen_range(9..15);
    let elevation = (0..g.len())
        .map(|i| {
            let (x, y) = g.cell_center(g.cell_of_index(i));
            let base = match kind {
                Patch::Stairs => rise * ((g.cell_of_index(i).0 / tread_cells) as f64),
                _ => grade * (x * dx + y * dy),
            };
            let n = if noise > 0.0 { rng.gen_range(-noise..noise) } else { 0.0 };
            (base + n) as f32
        })
        .collect();
    (HeightMap::from_parts(g, elevation, vec![true; g.len()]).expect("sized"), app)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::{detect_stairs, StairConfig};

    fn flat_features(n: usize) -> TerrainFeatures {
        let g = GridGeometry::new(0.025, (0.0, 0.0), n, n).unwrap();
        compute_features(&HeightMap::flat(g, 0.0), 2)
    }

    #[test]
    fn nominal_flat_is_safe() {
        let f = flat_features(12);
        let stairs = StairMask::empty(f.geometry);
        let classes = classify_terrain(&f, &stairs, None, ClassifierModel::default_model()).unwrap();
        assert_eq!(classes.count(TerrainClass::Safe), f.geometry.len(), "{:?}", classes.labels());
    }

    #[test]
    fn tall_step_is_obstacle_and_unknown_is_obstacle() {
        let g = GridGeometry::new(0.025, (0.0, 0.0), 12, 12).unwrap();
        let elev = (0..g.len()).map(|i| if g.cell_of_index(i).0 >= 6 { 0.5 } else { 0.0 }).collect();
        let mut map = HeightMap::from_parts(g, elev, vec![true; g.len()]).unwrap();
        map.set((2, 2), None);
        let f = compute_features(&map, 2);
        let classes =
            classify_terrain(&f, &StairMask::empty(g), None, ClassifierModel::default_model()).unwrap();
        assert_eq!(classes.get((5, 5)), TerrainClass::Obstacle);
        assert_eq!(classes.get((6, 5)), TerrainClass::Obstacle);
        assert_eq!(classes.get((2, 2)), TerrainClass::Obstacle);
        assert_eq!(classes.get((10, 10)), TerrainClass::Safe);
    }

    #[test]
    fn stair_flag_overrides_vote() {
        let f = flat_features(12);
        let mut stairs = StairMask::empty(f.geometry);
        stairs.cells[30] = true;
        let classes = classify_terrain(&f, &stairs, None, ClassifierModel::default_model()).unwrap();
        assert_eq!(classes.get_index(30), TerrainClass::Stair);
    }

    #[test]
    fn misaligned_layers_rejected() {
        let f = flat_features(12);
        let other = GridGeometry::new(0.025, (0.0, 0.0), 13, 12).unwrap();
        let r = classify_terrain(&f, &StairMask::empty(other), None, ClassifierModel::default_model());
        assert!(matches!(r, Err(Error::LayerMismatch(_))));
    }

    #[test]
    fn gravel_band_patch_is_risky() {
        // held-out patch: roughness band 0.02–0.04 m, flat underneath, seed unused in training
        let g = GridGeometry::new(0.025, (0.0, 0.0), 60, 60).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let sigma: f64 = 0.03;
        let a = sigma * 3f64.sqrt();
        let elev = (0..g.len()).map(|_| rng.gen_range(-a..a) as f32).collect();
        let map = HeightMap::from_parts(g, elev, vec![true; g.len()]).unwrap();
        let f = compute_features(&map, 2);
        let stairs = detect_stairs(&map, &f, &StairConfig::default());
        let classes = classify_terrain(&f, &stairs, None, ClassifierModel::default_model()).unwrap();
        let mut total = 0;
        let mut risky = 0;
        for y in 2..58 {
            for x in 2..58 {
                total += 1;
                risky += (classes.get((x, y)) == TerrainClass::Risky) as usize;
            }
        }
        assert!(risky as f64 >= 0.9 * total as f64, "{risky}/{total}");
    }

    #[test]
    fn classification_is_repeatable_and_model_roundtrips() {
        let model = ClassifierModel::default_model();
        let back = ClassifierModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(&back, model);
        let f = flat_features(12);
        let s = StairMask::empty(f.geometry);
        assert_eq!(classify_terrain(&f, &s, None, model).unwrap(), classify_terrain(&f, &s, None, &back).unwrap());
    }
}
