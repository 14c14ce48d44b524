//! Shared fixtures for the criterion benches.

use hyloco_core::planner::{PlanRequest, PlanningWorld};
use hyloco_core::robot::{RobotSpec, RobotState};
use hyloco_core::scenario::{generate_scenario, Scenario, ScenarioKind, ScenarioParams};
use hyloco_core::terrain::ClassifierModel;

pub struct Fixture {
    pub scenario: Scenario,
    pub world: PlanningWorld,
    pub spec: RobotSpec,
}

pub fn fixture(kind: ScenarioKind, seed: u64) -> Fixture {
    let scenario = generate_scenario(kind, &ScenarioParams::default(), seed).expect("scenario generates");
    let world = scenario.planning_world(ClassifierModel::default_model()).expect("terrain analysis");
    Fixture { scenario, world, spec: RobotSpec::default() }
}

impl Fixture {
    pub fn request(&self, lambda: f64) -> PlanRequest {
        let start = RobotState::standing(self.scenario.start, &self.spec, Some(&self.world.map));
        let mut r = PlanRequest::new(start, self.scenario.goal, vec![lambda]);
        r.time_budget = 1e6;
        r
    }
}
