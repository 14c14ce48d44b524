//! Heuristic comparison runs over seeded scenario suites.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heuristics::{HeuristicKind, HeuristicModel};
use crate::planner::{plan_on_costmap, PlanRequest, PlannerOptions};
use crate::robot::{RobotSpec, RobotState};
use crate::scenario::{generate_scenario, ScenarioKind, ScenarioParams};
use crate::terrain::ClassifierModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub kinds: Vec<ScenarioKind>,
    /// Scenarios per kind; scenario `i` uses seed `seed + i`.
    pub scenarios: usize,
    pub heuristics: Vec<HeuristicKind>,
    pub repetitions: usize,
    pub lambda: f64,
    pub initial_epsilon: f64,
    /// Wall-clock budget per plan (s).
    pub time_budget: f64,
    pub options: PlannerOptions,
    pub params: ScenarioParams,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            kinds: vec![ScenarioKind::RandomTiles],
            scenarios: 10,
            heuristics: vec![HeuristicKind::Euclidean, HeuristicKind::AbstractInformed],
            repetitions: 1,
            lambda: 1.0,
            initial_epsilon: 3.0,
            time_budget: 600.0,
            options: PlannerOptions { epsilon_schedule: vec![3.0, 2.0, 1.5], ..PlannerOptions::default() },
            params: ScenarioParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scenario: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub heuristic: HeuristicKind,
    pub repetition: usize,
    /// `None` when planning failed; see `error`.
    pub cost: Option<f64>,
    pub epsilon: Option<f64>,
    pub expansions: u64,
    pub wall_time: f64,
    pub steps: usize,
    pub error: Option<String>,
}

/// Per-scenario ratio of a heuristic against the first configured one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: String,
    pub heuristic: HeuristicKind,
    pub baseline: HeuristicKind,
    pub expansion_ratio: Option<f64>,
    pub cost_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
    pub comparisons: Vec<Comparison>,
}

/// Plans every (scenario, heuristic, repetition) triple. Scenario generation,
/// terrain analysis and cost maps are shared across heuristics.
pub fn run_bench(config: &BenchConfig, seed: u64, model: Option<&HeuristicModel>) -> Result<BenchReport> {
    if config.heuristics.is_empty() || config.kinds.is_empty() {
        return Err(Error::InvalidRequest("bench needs at least one kind and one heuristic".into()));
    }
    if config.heuristics.contains(&HeuristicKind::AbstractInformed) && model.is_none() {
        return Err(Error::InvalidRequest("abstract_informed needs a heuristic model".into()));
    }
    let spec = RobotSpec::default();
    let mut rows = Vec::new();
    let mut comparisons = Vec::new();
    for &kind in &config.kinds {
        for i in 0..config.scenarios {
            let s = seed.wrapping_add(i as u64);
            let sc = generate_scenario(kind, &config.params, s)?;
            let world = sc.planning_world(ClassifierModel::default_model())?;
            let costmap = world.cost_map(config.lambda, config.options.cost)?;
            let start = RobotState::standing(sc.start, &spec, Some(&world.map));
            let name = format!("{}-{}", kind.name(), s);
            let first = rows.len();
            for &h in &config.heuristics {
                for rep in 0..config.repetitions.max(1) {
                    let mut req = PlanRequest::new(start.clone(), sc.goal, vec![config.lambda]);
                    req.heuristic = h;
                    req.initial_epsilon = config.initial_epsilon;
                    req.time_budget = config.time_budget;
                    req.options = config.options.clone();
                    let t = Instant::now();
                    let out = plan_on_costmap(&req, &costmap, &world, &spec, model, config.lambda);
                    let wall_time = t.elapsed().as_secs_f64();
                    let row = match out {
                        Ok(p) => BenchRow {
                            scenario: name.clone(),
                            kind,
                            seed: s,
                            heuristic: h,
                            repetition: rep,
                            cost: Some(p.total_cost),
                            epsilon: Some(p.epsilon),
                            expansions: p.stats.expansions,
                            wall_time,
                            steps: p.step_count(),
                            error: None,
                        },
                        Err(e) => BenchRow {
                            scenario: name.clone(),
                            kind,
                            seed: s,
                            heuristic: h,
                            repetition: rep,
                            cost: None,
                            epsilon: None,
                            expansions: 0,
                            wall_time,
                            steps: 0,
                            error: Some(e.to_string()),
                        },
                    };
                    log::info!("{} {} rep {}: cost {:?} expansions {} {:.2}s", name, h.name(), rep, row.cost, row.expansions, wall_time);
                    rows.push(row);
                }
            }
            let block = &rows[first..];
            let base = &block[0];
            for h in config.heuristics.iter().skip(1) {
                let r = block.iter().find(|r| r.heuristic == *h).expect("row per heuristic");
                comparisons.push(Comparison {
                    scenario: name.clone(),
                    heuristic: *h,
                    baseline: base.heuristic,
                    expansion_ratio: (base.expansions > 0 && r.cost.is_some()).then(|| r.expansions as f64 / base.expansions as f64),
                    cost_ratio: base.cost.zip(r.cost).map(|(b, c)| c / b),
                });
            }
        }
    }
    Ok(BenchReport { seed, config: config.clone(), rows, comparisons })
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Markdown tables of the raw rows and the ratios.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| scenario | heuristic | rep | cost | eps | expansions | time (s) | steps |\n|---|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let cost = r.cost.map_or_else(|| r.error.clone().unwrap_or_default(), |c| format!("{c:.3}"));
            let eps = r.epsilon.map_or("-".to_string(), |e| format!("{e}"));
            s.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {:.2} | {} |\n",
                r.scenario,
                r.heuristic.name(),
                r.repetition,
                cost,
                eps,
                r.expansions,
                r.wall_time,
                r.steps
            ));
        }
        if !self.comparisons.is_empty() {
            s.push_str("\n| scenario | heuristic | vs | expansion ratio | cost ratio |\n|---|---|---|---|---|\n");
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
            for c in &self.comparisons {
                s.push_str(&format!(
                    "| {} | {} | {} | {} | {} |\n",
                    c.scenario,
                    c.heuristic.name(),
                    c.baseline.name(),
                    fmt(c.expansion_ratio),
                    fmt(c.cost_ratio)
                ));
            }
        }
        s
    }
}
