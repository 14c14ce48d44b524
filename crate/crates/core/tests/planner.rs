use std::sync::Arc;

use hyloco_core::costmap::CostMap;
use hyloco_core::grid::GridGeometry;
use hyloco_core::heuristics::HeuristicKind;
use hyloco_core::planner::{
    dijkstra_oracle, plan, plan_on_costmap, validate_plan, Action, Goal, Lattice, Plan, PlanRequest, PlanningWorld,
    StepPolicy,
};
use hyloco_core::robot::{Pose2, RobotSpec, RobotState};
use hyloco_core::scenario::{generate_scenario, ScenarioKind, ScenarioParams};
use hyloco_core::terrain::{analyze_terrain, ClassifierModel, HeightMap};
use hyloco_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RES: f64 = 0.025;

fn world(map: HeightMap) -> PlanningWorld {
    let a = analyze_terrain(&map, None, ClassifierModel::default_model()).unwrap();
    PlanningWorld::new(Arc::new(map), Arc::new(a.features), Arc::new(a.classes)).unwrap()
}

fn flat(w: usize, h: usize) -> HeightMap {
    HeightMap::flat(GridGeometry::new(RES, (0.0, 0.0), w, h).unwrap(), 0.0)
}

/// World coordinate of a cell center.
fn c(i: usize) -> f64 {
    (i as f64 + 0.5) * RES
}

fn request(world: &PlanningWorld, start: Pose2, goal: Goal) -> PlanRequest {
    let spec = RobotSpec::default();
    let mut r = PlanRequest::new(RobotState::standing(start, &spec, Some(&world.map)), goal, vec![1.0]);
    r.time_budget = 1e5;
    r
}

fn wall(map: &mut HeightMap, x0: usize, x1: usize, y0: usize, y1: usize) {
    for y in y0..y1 {
        for x in x0..x1 {
            map.set((x, y), Some(1.0));
        }
    }
}

#[test]
fn straight_line_on_flat_ground() {
    let w = world(flat(400, 80));
    let goal = Goal::new(c(380), c(40));
    let r = request(&w, Pose2::new(c(20), c(40), 0.0), goal);
    let p = plan(&r, &w, &RobotSpec::default(), None).unwrap().remove(0);
    let d = c(380) - c(20);
    assert!((p.total_cost - (d - goal.pos_tol)).abs() <= 0.01 * d, "cost {}", p.total_cost);
    assert!(p.actions.iter().all(|a| matches!(a, Action::Drive { dx, dy: 0 } if *dx > 0)));
    assert_eq!(p.epsilon, 1.0);
    assert_eq!(p.step_count(), 0);
}

#[test]
fn door_in_wall_matches_drive_only_oracle() {
    let mut map = flat(100, 100);
    wall(&mut map, 48, 54, 0, 28);
    wall(&mut map, 48, 54, 72, 100);
    let w = world(map);
    let spec = RobotSpec::default();
    let r = request(&w, Pose2::new(c(20), c(20), 0.0), Goal::new(c(82), c(80)));
    let p = plan(&r, &w, &spec, None).unwrap().remove(0);
    assert_eq!(p.epsilon, 1.0);
    assert_eq!(p.step_count(), 0);
    let cm = w.cost_map(1.0, Default::default()).unwrap();
    let lattice = Lattice::new(&cm, &spec, 0.05);
    let start = lattice.snap(&r.start, &cm, &spec).unwrap();
    let oracle = dijkstra_oracle(&start, &r.goal, &cm, &spec, &lattice, StepPolicy::Never, 5_000_000).unwrap();
    assert!((p.total_cost - oracle).abs() <= 1e-6 * oracle, "{} vs {oracle}", p.total_cost);
    assert!(p.polyline().iter().any(|q| q[0] > c(54)));
    validate_plan(&p, &cm, &spec).unwrap();
}

#[test]
fn enclosed_start_has_no_path() {
    let mut map = flat(100, 100);
    wall(&mut map, 10, 90, 10, 14);
    wall(&mut map, 10, 90, 86, 90);
    wall(&mut map, 10, 14, 10, 90);
    wall(&mut map, 86, 90, 10, 90);
    let w = world(map);
    let mut r = request(&w, Pose2::new(c(50), c(50), 0.0), Goal::new(c(96), c(96)));
    r.options.max_expansions = 20_000_000;
    assert!(matches!(plan(&r, &w, &RobotSpec::default(), None), Err(Error::NoPath)));
}

#[test]
fn gap_needs_steps() {
    let spec = RobotSpec::default();
    let sc = generate_scenario(ScenarioKind::Gap, &ScenarioParams::default(), 1).unwrap();
    let w = sc.planning_world(ClassifierModel::default_model()).unwrap();
    let mut r = PlanRequest::new(RobotState::standing(sc.start, &spec, Some(&w.map)), sc.goal, vec![1.0]);
    r.time_budget = 20.0;
    r.options.epsilon_schedule = vec![];
    let p = plan(&r, &w, &spec, None).unwrap().remove(0);
    assert!(p.step_count() >= 4, "{} steps", p.step_count());
    let xs: Vec<f64> = p.states.iter().map(|s| s.base.x).collect();
    assert!(xs[0] < 3.5 && *xs.last().unwrap() > 4.0);
    validate_plan(&p, &w.cost_map(1.0, Default::default()).unwrap(), &spec).unwrap();

    r.options.step_policy = StepPolicy::Never;
    r.time_budget = 1e5;
    assert!(matches!(plan(&r, &w, &spec, None), Err(Error::NoPath)));
}

fn small_plan() -> (Plan, PlanningWorld, CostMap) {
    let mut map = flat(120, 80);
    wall(&mut map, 60, 64, 0, 50);
    let w = world(map);
    let r = request(&w, Pose2::new(c(20), c(20), 0.0), Goal::new(c(100), c(20)));
    let p = plan(&r, &w, &RobotSpec::default(), None).unwrap().remove(0);
    let cm = w.cost_map(1.0, Default::default()).unwrap();
    (p, w, cm)
}

#[test]
fn validation_detects_teleport_and_cost_mismatch() {
    let spec = RobotSpec::default();
    let (p, w, cm) = small_plan();
    validate_plan(&p, &cm, &spec).unwrap();

    let mut bad = p.clone();
    bad.states[5].base.x += 0.5;
    let v = validate_plan(&bad, &cm, &spec).unwrap_err();
    assert!(v.index == 4 || v.index == 5, "{v:?}");

    let mut bad = p.clone();
    bad.action_costs[3] *= 2.0;
    bad.total_cost = bad.action_costs.iter().sum();
    assert_eq!(validate_plan(&bad, &cm, &spec).unwrap_err().index, 3);

    let mut bad = p.clone();
    bad.total_cost += 1.0;
    assert!(validate_plan(&bad, &cm, &spec).is_err());

    // the same plan judged against a different terrain weight on risky ground
    let sc = generate_scenario(ScenarioKind::GravelPatch, &ScenarioParams::default(), 2).unwrap();
    let gw = sc.planning_world(ClassifierModel::default_model()).unwrap();
    let mut r = PlanRequest::new(RobotState::standing(sc.start, &spec, Some(&gw.map)), sc.goal, vec![0.0]);
    r.initial_epsilon = 2.0;
    r.options.epsilon_schedule = vec![];
    let low = plan(&r, &gw, &spec, None).unwrap().remove(0);
    assert!(low.class_penalty > 0.0);
    validate_plan(&low, &gw.cost_map(0.0, Default::default()).unwrap(), &spec).unwrap();
    assert!(validate_plan(&low, &gw.cost_map(5.0, Default::default()).unwrap(), &spec).is_err());
    let _ = w;
}

#[test]
fn plans_are_deterministic_and_round_trip() {
    let (a, _, _) = small_plan();
    let (b, _, _) = small_plan();
    assert_eq!(a.to_json(), b.to_json());
    let back = Plan::from_json(&a.to_json()).unwrap();
    assert_eq!(back.to_json(), a.to_json());
}

#[test]
fn anytime_iterations_never_get_worse() {
    let spec = RobotSpec::default();
    let sc = generate_scenario(ScenarioKind::RandomTiles, &ScenarioParams { width: Some(8.0), height: Some(6.0), ..Default::default() }, 4).unwrap();
    let w = sc.planning_world(ClassifierModel::default_model()).unwrap();
    let mut r = PlanRequest::new(RobotState::standing(sc.start, &spec, Some(&w.map)), sc.goal, vec![1.0]);
    r.heuristic = HeuristicKind::GridDijkstra;
    r.time_budget = 1e5;
    r.options.max_expansions = 600_000;
    let p = plan(&r, &w, &spec, None).unwrap().remove(0);
    let found: Vec<(f64, f64)> = p.stats.iterations.iter().filter_map(|i| i.cost.map(|c| (i.epsilon, c))).collect();
    assert!(found.len() >= 2);
    let mut best = f64::INFINITY;
    for pair in p.stats.iterations.windows(2) {
        assert!(pair[1].epsilon < pair[0].epsilon);
    }
    for (_, c) in &found {
        best = best.min(*c);
    }
    assert!((p.total_cost - best).abs() < 1e-9);
    assert!(p.epsilon <= r.initial_epsilon);
    validate_plan(&p, &w.cost_map(1.0, Default::default()).unwrap(), &spec).unwrap();
}

fn random_small_map(seed: u64) -> HeightMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = flat(40, 40);
    for y in 0..40 {
        for x in 0..40 {
            map.set((x, y), Some(rng.gen_range(0.0..0.006)));
        }
    }
    for _ in 0..rng.gen_range(1..4) {
        let (x0, y0) = (rng.gen_range(0..36), rng.gen_range(0..36));
        let h = rng.gen_range(0.06..0.14) as f32;
        for y in y0..y0 + 4 {
            for x in x0..x0 + 4 {
                map.set((x, y), Some(h));
            }
        }
    }
    map
}

#[test]
fn final_plans_match_the_full_graph_oracle() {
    let spec = RobotSpec::default();
    let mut compared = 0;
    let mut seed = 0;
    while compared < 20 {
        seed += 1;
        assert!(seed < 200, "too few solvable maps");
        let w = world(random_small_map(seed));
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let start = Pose2::new(c(rng.gen_range(13..17)), c(rng.gen_range(13..27)), 0.0);
        let goal = Goal::new(c(rng.gen_range(22..27)), c(rng.gen_range(13..27)));
        let cm = w.cost_map(1.0, Default::default()).unwrap();
        let lattice = Lattice::new(&cm, &spec, 0.05);
        let mut r = request(&w, start, goal);
        r.heuristic = HeuristicKind::GridDijkstra;
        let Some(s) = lattice.snap(&r.start, &cm, &spec) else { continue };
        let Some(oracle) = dijkstra_oracle(&s, &goal, &cm, &spec, &lattice, StepPolicy::WhenBlocked, 2_000_000) else {
            continue;
        };
        let Ok(p) = plan_on_costmap(&r, &cm, &w, &spec, None, 1.0) else { continue };
        assert_eq!(p.epsilon, 1.0);
        assert!((p.total_cost - oracle).abs() <= 1e-6 * oracle.max(1e-9), "seed {seed}: {} vs {oracle}", p.total_cost);
        compared += 1;
    }
}
