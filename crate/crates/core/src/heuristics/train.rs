//! Learning the abstract cost model from short fine-planner tasks.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridGeometry;
use crate::planner::{plan_on_costmap, Goal, PlanRequest, PlanningWorld, PlannerOptions};
use crate::robot::{Pose2, RobotSpec, RobotState};
use crate::scenario::{paint_tile, TileFamily};
use crate::terrain::{analyze_terrain, AppearanceClass, AppearanceLayer, ClassifierModel, HeightMap};

use super::abstract_map::{abstract_bin, abstract_from_pooled, pooled_features, PooledFeatures, N_FEATURES};
use super::{HeuristicKind, InformedHeuristic, FEATURE_IDS};

pub const MODEL_SCHEMA: &str = "hyloco-heuristic/1";

/// JSON of the bundled default model.
pub const BUNDLED_MODEL: &str = include_str!("../../assets/heuristic_model.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub seed: u64,
    pub tasks: usize,
    /// Tile edge in fine cells (at most 60).
    pub tile_cells: usize,
    pub lambdas: Vec<f64>,
    /// Fractions of tasks used for fitting and for γ calibration; the rest validates.
    pub train_fraction: f64,
    pub calibration_fraction: f64,
    /// Calibration quantile of (oracle cost-to-go / raw estimate).
    pub calibration_quantile: f64,
    /// Extra safety factor applied to the calibrated γ.
    pub calibration_margin: f64,
    pub max_expansions: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            seed: 0x4e11,
            tasks: 160,
            tile_cells: 60,
            lambdas: vec![0.0, 0.5, 1.0, 2.0, 5.0],
            train_fraction: 0.6,
            calibration_fraction: 0.2,
            calibration_quantile: 0.01,
            calibration_margin: 0.97,
            max_expansions: 400_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationMetrics {
    /// Fraction of validation states whose estimate does not exceed the oracle cost-to-go.
    pub under_estimation_rate: f64,
    /// Largest relative over-estimation among validation states.
    pub max_over_estimation: f64,
    pub states: usize,
    pub tasks: usize,
}

/// Linear per-meter cost model over pooled abstract features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicModel {
    pub schema: String,
    pub feature_ids: Vec<String>,
    pub weights: Vec<f64>,
    /// Calibration scale applied to every abstract cost, in (0, 1].
    pub gamma: f64,
    pub config: TrainingConfig,
    pub validation: ValidationMetrics,
}

impl HeuristicModel {
    /// Unscaled per-meter prediction.
    pub fn predict(&self, x: &[f64; N_FEATURES]) -> f64 {
        self.weights.iter().zip(x.iter()).map(|(w, v)| w * v).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: HeuristicModel = serde_json::from_str(text)?;
        if m.schema != MODEL_SCHEMA {
            return Err(Error::Format(format!("unsupported heuristic model schema {:?}", m.schema)));
        }
        if m.feature_ids.iter().map(String::as_str).ne(FEATURE_IDS.iter().copied()) || m.weights.len() != N_FEATURES {
            return Err(Error::Format("heuristic model features do not match this build".into()));
        }
        if !(m.gamma > 0.0 && m.gamma <= 1.0) {
            return Err(Error::Format("gamma must lie in (0, 1]".into()));
        }
        Ok(m)
    }

    /// The bundled model, trained with [`TrainingConfig::default`] and the
    /// default robot (`hyloco train-heuristic` regenerates it).
    pub fn default_model() -> &'static HeuristicModel {
        static MODEL: OnceLock<HeuristicModel> = OnceLock::new();
        MODEL.get_or_init(|| HeuristicModel::from_json(BUNDLED_MODEL).expect("bundled heuristic model parses"))
    }
}

/// One short planning problem on a synthetic tile.
#[derive(Debug, Clone)]
pub struct TrainingTask {
    pub world: PlanningWorld,
    pub start: Pose2,
    pub goal: Goal,
    pub lambda: f64,
    pub families: [TileFamily; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub tasks: usize,
    pub solved: usize,
    pub train_tasks: usize,
    pub calibration_tasks: usize,
    pub validation_tasks: usize,
    /// Mean unscaled per-meter prediction on flat-tile training tasks.
    pub flat_prediction: Option<f64>,
    pub gamma: f64,
    pub validation: ValidationMetrics,
}

/// Seeded synthetic tasks: each tile is painted with one or two terrain
/// families (split left/right), start and goal lie inside the tile.
pub fn generate_tasks(config: &TrainingConfig, spec: &RobotSpec) -> Vec<TrainingTask> {
    let n = config.tile_cells.clamp(40, 60);
    let g = GridGeometry::new(crate::terrain::DEFAULT_RESOLUTION, (0.0, 0.0), n, n).expect("static geometry");
    let classifier = ClassifierModel::default_model();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let side = n as f64 * g.resolution;
    let margin = spec.mount_points.iter().map(|m| m[0].hypot(m[1])).fold(0.0, f64::max) + 0.05;
    let mut tasks = Vec::with_capacity(config.tasks);
    for k in 0..config.tasks {
        let mut map = HeightMap::flat(g, 0.0);
        let mut app = AppearanceLayer::uniform(g, AppearanceClass::None);
        // every fourth task is pure flat ground so the flat cost is well anchored
        let a = if k % 4 == 0 { TileFamily::Flat } else { TileFamily::sample(&mut rng, true) };
        let b = if rng.gen_bool(0.5) { a } else { TileFamily::sample(&mut rng, true) };
        let b = if k % 4 == 0 { TileFamily::Flat } else { b };
        paint_tile(&mut map, &mut app, (0, 0, n / 2, n), a, &mut rng, None);
        paint_tile(&mut map, &mut app, (n / 2, 0, n, n), b, &mut rng, None);
        let lambda = config.lambdas[rng.gen_range(0..config.lambdas.len())];
        let lo = margin;
        let hi = side - margin;
        let start = Pose2::new(lo + rng.gen_range(0.0..0.1), rng.gen_range(lo..hi), 0.0);
        let goal = Goal::new(hi - rng.gen_range(0.0..0.1), rng.gen_range(lo..hi));
        let (start, goal) = if rng.gen_bool(0.5) {
            (Pose2::new(goal.x, goal.y, 0.0), Goal::new(start.x, start.y))
        } else {
            (start, goal)
        };
        let Ok(analysis) = analyze_terrain(&map, Some(&app), classifier) else { continue };
        let world = PlanningWorld {
            map: Arc::new(map),
            features: Arc::new(analysis.features),
            classes: Arc::new(analysis.classes),
        };
        tasks.push(TrainingTask { world, start, goal, lambda, families: [a, b] });
    }
    tasks
}

/// Oracle cost-to-go at every state of an optimal fine plan.
struct Solved {
    pooled: PooledFeatures,
    task: usize,
    /// `(x, y, θ, cost-to-go)` along the oracle path.
    samples: Vec<(f64, f64, f64, f64)>,
    features: [f64; N_FEATURES],
    per_meter: f64,
}

fn solve(task: &TrainingTask, idx: usize, config: &TrainingConfig, spec: &RobotSpec) -> Option<Solved> {
    let costmap = task.world.cost_map(task.lambda, Default::default()).ok()?;
    let start = RobotState::standing(task.start, spec, Some(&task.world.map));
    let mut request = PlanRequest::new(start, task.goal, vec![task.lambda]);
    request.heuristic = HeuristicKind::GridDijkstra;
    request.initial_epsilon = 1.0;
    request.time_budget = 1e6;
    request.options = PlannerOptions { max_expansions: config.max_expansions, ..PlannerOptions::default() };
    let plan = plan_on_costmap(&request, &costmap, &task.world, spec, None, task.lambda).ok()?;
    let s0 = &plan.states[0];
    let dist = (s0.base.x - task.goal.x).hypot(s0.base.y - task.goal.y) - task.goal.pos_tol;
    if dist < 0.2 {
        return None;
    }
    let mut remaining = plan.total_cost;
    let mut samples = Vec::with_capacity(plan.states.len());
    for (i, s) in plan.states.iter().enumerate() {
        samples.push((s.base.x, s.base.y, s.base.theta, remaining.max(0.0)));
        if i < plan.action_costs.len() {
            remaining -= plan.action_costs[i];
        }
    }
    let pooled = pooled_features(&task.world.features, &task.world.classes, &costmap).ok()?;
    // mean pooled features along the straight start-goal segment
    let g = pooled.geometry;
    let bin = abstract_bin(s0.base.theta);
    let n = ((dist + task.goal.pos_tol) / (g.resolution * 0.5)).ceil() as usize;
    let mut features = [0.0; N_FEATURES];
    let mut count = 0.0_f64;
    for k in 0..=n {
        let t = k as f64 / n.max(1) as f64;
        let (x, y) = (s0.base.x + (task.goal.x - s0.base.x) * t, s0.base.y + (task.goal.y - s0.base.y) * t);
        if let Some(c) = g.world_to_cell(x, y) {
            let v = pooled.at(g.index(c), bin);
            for (a, b) in features.iter_mut().zip(v.iter()) {
                *a += b;
            }
            count += 1.0;
        }
    }
    features.iter_mut().for_each(|v| *v /= count.max(1.0));
    Some(Solved { pooled, task: idx, samples, features, per_meter: plan.total_cost / dist })
}

fn ratios(solved: &[Solved], tasks: &[TrainingTask], model: &HeuristicModel, gamma: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for s in solved {
        let task = &tasks[s.task];
        let abs = abstract_from_pooled(&s.pooled, &task.world.classes, model, gamma);
        let h = InformedHeuristic::new(abs, &task.goal);
        for &(x, y, th, ctg) in &s.samples {
            out.push((h.at(x, y, th), ctg));
        }
    }
    out
}

/// Fits the per-meter regression on the training split, calibrates γ on the
/// calibration split and measures under-estimation on the validation split.
pub fn train_heuristic(
    tasks: &[TrainingTask],
    config: &TrainingConfig,
    spec: &RobotSpec,
) -> Result<(HeuristicModel, TrainingReport)> {
    let solved: Vec<Solved> = tasks.iter().enumerate().filter_map(|(i, t)| solve(t, i, config, spec)).collect();
    if solved.len() < 50 {
        return Err(Error::InsufficientData { successful: solved.len(), required: 50 });
    }
    let n_train = ((solved.len() as f64) * config.train_fraction).round() as usize;
    let n_cal = ((solved.len() as f64) * config.calibration_fraction).round() as usize;
    let (train, rest) = solved.split_at(n_train.min(solved.len()));
    let (cal, val) = rest.split_at(n_cal.min(rest.len()));

    let x = DMatrix::from_fn(train.len(), N_FEATURES, |r, c| train[r].features[c]);
    let y = DVector::from_iterator(train.len(), train.iter().map(|s| s.per_meter));
    // small ridge term keeps unused features (e.g. all-zero stair columns) at zero
    let xtx = x.transpose() * &x + DMatrix::identity(N_FEATURES, N_FEATURES) * 1e-6;
    let xty = x.transpose() * &y;
    let w = xtx
        .cholesky()
        .ok_or(Error::InsufficientData { successful: train.len(), required: N_FEATURES })?
        .solve(&xty);

    let mut model = HeuristicModel {
        schema: MODEL_SCHEMA.into(),
        feature_ids: FEATURE_IDS.iter().map(|s| s.to_string()).collect(),
        weights: w.iter().copied().collect(),
        gamma: 1.0,
        config: config.clone(),
        validation: ValidationMetrics::default(),
    };

    let mut r: Vec<f64> = ratios(cal, tasks, &model, 1.0)
        .into_iter()
        .filter(|(h, _)| *h > 1e-9 && h.is_finite())
        .map(|(h, ctg)| ctg / h)
        .collect();
    r.sort_by(f64::total_cmp);
    let q = if r.is_empty() { 1.0 } else { r[((r.len() as f64 * config.calibration_quantile).floor() as usize).min(r.len() - 1)] };
    model.gamma = (q * config.calibration_margin).clamp(1e-3, 1.0);

    let checks = ratios(val, tasks, &model, model.gamma);
    let under = checks.iter().filter(|(h, ctg)| *h <= ctg * (1.0 + 1e-9) + 1e-12).count();
    let max_over = checks
        .iter()
        .filter(|(_, ctg)| *ctg > 0.0)
        .map(|(h, ctg)| if h.is_finite() { h / ctg - 1.0 } else { f64::INFINITY })
        .fold(0.0, f64::max);
    model.validation = ValidationMetrics {
        under_estimation_rate: if checks.is_empty() { 0.0 } else { under as f64 / checks.len() as f64 },
        max_over_estimation: max_over,
        states: checks.len(),
        tasks: val.len(),
    };

    let flat: Vec<f64> = train
        .iter()
        .filter(|s| tasks[s.task].families == [TileFamily::Flat, TileFamily::Flat])
        .map(|s| model.predict(&s.features))
        .collect();
    let report = TrainingReport {
        tasks: tasks.len(),
        solved: solved.len(),
        train_tasks: train.len(),
        calibration_tasks: cal.len(),
        validation_tasks: val.len(),
        flat_prediction: (!flat.is_empty()).then(|| flat.iter().sum::<f64>() / flat.len() as f64),
        gamma: model.gamma,
        validation: model.validation.clone(),
    };
    Ok((model, report))
}
