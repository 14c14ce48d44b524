use hyloco_core::planner::{plan, Plan, PlanRequest};
use hyloco_core::robot::{RobotSpec, RobotState};
use hyloco_core::scenario::{generate_scenario, ScenarioKind, ScenarioParams};
use hyloco_core::sim::{AbortCause, EventKind, Monitor, World};
use hyloco_core::terrain::{analyze_terrain, ClassifierModel};

fn staircase_world(rise: f64) -> (World, hyloco_core::scenario::Scenario) {
    let spec = RobotSpec::default();
    let sc = generate_scenario(ScenarioKind::Staircase, &ScenarioParams { rise: Some(rise), ..Default::default() }, 1).unwrap();
    let a = analyze_terrain(&sc.map, Some(&sc.appearance), ClassifierModel::default_model()).unwrap();
    let robot = RobotState::standing(sc.start, &spec, Some(&sc.map));
    (World::new(sc.map.clone(), a.classes, robot, spec, 1.0).unwrap(), sc)
}

fn stair_plan(world: &World, sc: &hyloco_core::scenario::Scenario) -> Plan {
    let pw = sc.planning_world(ClassifierModel::default_model()).unwrap();
    let mut r = PlanRequest::new(world.robot.clone(), sc.goal, vec![1.0]);
    r.time_budget = 10.0;
    r.options.epsilon_schedule = vec![];
    plan(&r, &pw, &world.spec, None).unwrap().remove(0)
}

#[test]
fn empty_plan_completes_without_moving() {
    let (mut w, _) = staircase_world(0.17);
    let robot = w.robot.clone();
    let empty = Plan {
        schema: "hyloco-plan/1".into(),
        states: vec![robot.clone()],
        actions: vec![],
        action_costs: vec![],
        total_cost: 0.0,
        epsilon: 1.0,
        lambda: 1.0,
        heuristic: Default::default(),
        class_penalty: 0.0,
        stats: Default::default(),
    };
    let report = w.execute_plan(&empty, &Monitor::nominal(&w.spec)).unwrap();
    assert!(report.completed() && report.actions.is_empty());
    assert_eq!(w.robot, robot);
    assert!(matches!(w.events().last().unwrap().kind, EventKind::PlanFinished { executed: 0 }));
}

#[test]
fn plan_from_elsewhere_is_rejected() {
    let (mut w, sc) = staircase_world(0.17);
    let p = stair_plan(&w, &sc);
    w.apply_action(&p.actions[0], &Monitor::nominal(&w.spec)).unwrap();
    let before = w.to_bytes();
    assert!(w.execute_plan(&p, &Monitor::nominal(&w.spec)).is_err());
    assert_eq!(w.to_bytes(), before);
}

#[test]
fn stair_plan_aborts_on_a_taller_staircase() {
    let (w, sc) = staircase_world(0.17);
    let p = stair_plan(&w, &sc);
    let monitor = Monitor::nominal(&w.spec);
    let mut same = w.clone();
    assert!(same.execute_plan(&p, &monitor).unwrap().completed());

    let (mut taller, _) = staircase_world(0.25);
    let report = taller.execute_plan(&p, &monitor).unwrap();
    let abort = report.abort.expect("execution aborts");
    assert!(matches!(abort.cause, AbortCause::Infeasible | AbortCause::Unstable));
    let index = report.abort_index.unwrap();
    assert!(index < p.actions.len());
    assert!(taller
        .events()
        .iter()
        .any(|e| matches!(e.kind, EventKind::ExecutionAborted { action_index: Some(i), .. } if i == index)));
}
