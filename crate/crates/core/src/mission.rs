//! Missions: a twin with its candidate plans, session tree and event feed,
//! persisted as a directory of documented files.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heuristics::{HeuristicKind, HeuristicModel};
use crate::planner::{plan_on_costmap, validate_plan, Action, Goal, Plan, PlanRequest, PlannerOptions, PlanningWorld};
use crate::robot::RobotState;
use crate::sim::{ActionReport, CellEdit, Event, EventKind, ExecutionReport, Monitor, SessionInfo, Twin, World};

pub const MISSION_SCHEMA: &str = "hyloco-mission/1";

/// Candidate-path request: one plan per λ from the robot's current state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRequest {
    pub goal: Goal,
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub heuristic: HeuristicKind,
    /// Seconds per λ.
    #[serde(default = "default_budget")]
    pub time_budget: f64,
    #[serde(default = "default_epsilon")]
    pub initial_epsilon: f64,
    #[serde(default)]
    pub options: PlannerOptions,
    /// Plan from this session's robot instead of the live one.
    #[serde(default)]
    pub session: Option<u64>,
}

fn default_budget() -> f64 {
    30.0
}

fn default_epsilon() -> f64 {
    3.0
}

impl CandidateRequest {
    pub fn new(goal: Goal, lambdas: Vec<f64>) -> Self {
        CandidateRequest {
            goal,
            lambdas,
            heuristic: HeuristicKind::default(),
            time_budget: default_budget(),
            initial_epsilon: default_epsilon(),
            options: PlannerOptions::default(),
            session: None,
        }
    }

    pub fn plan_request(&self, start: RobotState) -> PlanRequest {
        PlanRequest {
            start,
            goal: self.goal,
            lambdas: self.lambdas.clone(),
            heuristic: self.heuristic,
            time_budget: self.time_budget,
            initial_epsilon: self.initial_epsilon,
            options: self.options.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        ErrorBody { code: e.code().into(), message: e.to_string() }
    }
}

/// Rendering summary of one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub cost: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub expansions: u64,
    pub steps: usize,
    pub class_penalty: f64,
    pub polyline: Vec<[f64; 2]>,
}

impl PlanSummary {
    pub fn of(plan: &Plan) -> Self {
        PlanSummary {
            cost: plan.total_cost,
            epsilon: plan.epsilon,
            lambda: plan.lambda,
            expansions: plan.stats.expansions,
            steps: plan.step_count(),
            class_penalty: plan.class_penalty,
            polyline: plan.polyline(),
        }
    }
}

/// Outcome for one λ; planning failures are reported per candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub lambda: f64,
    pub plan_id: Option<String>,
    pub summary: Option<PlanSummary>,
    pub error: Option<ErrorBody>,
}

/// Plans every λ of `request` on `world`. Request-level problems are errors;
/// per-λ planning failures are returned inside the list.
pub fn plan_candidates(world: &World, request: &CandidateRequest, model: Option<&HeuristicModel>) -> Result<Vec<(f64, Result<Plan>)>> {
    let preq = request.plan_request(world.robot.clone());
    preq.validate()?;
    let pw = PlanningWorld::new(world.map().clone(), world.features().clone(), world.classes().clone())?;
    let mut out = Vec::with_capacity(request.lambdas.len());
    for &lambda in &request.lambdas {
        let result = if lambda == world.lambda() && request.options.cost == *world.costmap().config() {
            plan_on_costmap(&preq, world.costmap(), &pw, &world.spec, model, lambda)
        } else {
            pw.cost_map(lambda, request.options.cost).and_then(|cm| plan_on_costmap(&preq, &cm, &pw, &world.spec, model, lambda))
        };
        out.push((lambda, result));
    }
    Ok(out)
}

/// Event-feed record: a world event tagged with the session it happened in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedRecord {
    pub seq: u64,
    pub session: Option<u64>,
    #[serde(flatten)]
    pub event: Event,
}

/// Mutable mission state. Timestamps are supplied by the caller (unix ms).
#[derive(Debug, Clone)]
pub struct Mission {
    pub id: String,
    pub twin: Twin,
    pub plans: BTreeMap<String, Plan>,
    pub created: u64,
    pub updated: u64,
    next_plan: u64,
    feed: Vec<FeedRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MissionDoc {
    schema: String,
    id: String,
    created: u64,
    updated: u64,
    next_plan: u64,
    plans: Vec<String>,
    sessions: Vec<SessionInfo>,
}

impl Mission {
    pub fn new(id: impl Into<String>, world: World, now: u64) -> Self {
        Mission { id: id.into(), twin: Twin::new(world), plans: BTreeMap::new(), created: now, updated: now, next_plan: 1, feed: Vec::new() }
    }

    pub fn feed(&self) -> &[FeedRecord] {
        &self.feed
    }

    /// Feed records with `seq > after`.
    pub fn feed_since(&self, after: u64) -> &[FeedRecord] {
        let start = self.feed.partition_point(|r| r.seq <= after);
        &self.feed[start..]
    }

    fn push_feed(&mut self, session: Option<u64>, event: Event) {
        let seq = self.feed.len() as u64 + 1;
        self.feed.push(FeedRecord { seq, session, event });
    }

    /// Runs `op` on the twin and feeds the events it appended to `target`.
    fn tracked<T>(&mut self, target: Option<u64>, now: u64, op: impl FnOnce(&mut Twin) -> Result<T>) -> Result<T> {
        let before = self.twin.world(target).map(|w| w.events().len()).unwrap_or(0);
        let out = op(&mut self.twin)?;
        let new: Vec<Event> = self.twin.world(target)?.events()[before..].to_vec();
        for e in new {
            self.push_feed(target, e);
        }
        self.updated = now;
        Ok(out)
    }

    fn lifecycle(&mut self, session: u64, world: Option<u64>, kind: EventKind) {
        let tick = self.twin.world(world).map_or(0, |w| w.tick());
        self.push_feed(Some(session), Event { tick, kind });
    }

    pub fn request_candidates(&mut self, request: &CandidateRequest, model: Option<&HeuristicModel>, now: u64) -> Result<Vec<Candidate>> {
        let world = self.twin.world(request.session)?;
        let results = plan_candidates(world, request, model)?;
        let mut out = Vec::with_capacity(results.len());
        for (lambda, r) in results {
            out.push(match r {
                Ok(plan) => {
                    let id = format!("p{}", self.next_plan);
                    self.next_plan += 1;
                    let summary = PlanSummary::of(&plan);
                    self.plans.insert(id.clone(), plan);
                    Candidate { lambda, plan_id: Some(id), summary: Some(summary), error: None }
                }
                Err(e) => Candidate { lambda, plan_id: None, summary: None, error: Some(ErrorBody::from(&e)) },
            });
        }
        self.updated = now;
        Ok(out)
    }

    /// Validates the stored plan against the target world and executes it.
    pub fn execute_plan(&mut self, plan_id: &str, session: Option<u64>, monitor: Option<Monitor>, now: u64) -> Result<ExecutionReport> {
        let plan = self.plans.get(plan_id).ok_or_else(|| Error::NotFound(format!("plan {plan_id}")))?.clone();
        let world = self.twin.world(session)?;
        if session != self.twin.active_session() {
            return Err(Error::Frozen);
        }
        let costmap = if plan.lambda == world.lambda() {
            world.costmap().clone()
        } else {
            let pw = PlanningWorld::new(world.map().clone(), world.features().clone(), world.classes().clone())?;
            Arc::new(pw.cost_map(plan.lambda, *world.costmap().config())?)
        };
        validate_plan(&plan, &costmap, &world.spec)
            .map_err(|v| Error::InvalidRequest(format!("plan fails validation at action {}: {}", v.index, v.reason)))?;
        let monitor = monitor.unwrap_or_else(|| Monitor::nominal(&world.spec));
        self.tracked(session, now, |t| t.execute_plan(session, &plan, &monitor))
    }

    /// Generates and executes one step of `foot` to `offset`.
    pub fn trigger_step(&mut self, foot: usize, offset: f64, session: Option<u64>, monitor: Option<Monitor>, now: u64) -> Result<ActionReport> {
        let monitor = match monitor {
            Some(m) => m,
            None => Monitor::nominal(&self.twin.world(session)?.spec),
        };
        self.tracked(session, now, |t| t.apply_action(session, &Action::Step { foot, offset }, &monitor))
    }

    pub fn apply_action(&mut self, action: &Action, session: Option<u64>, now: u64) -> Result<ActionReport> {
        let monitor = Monitor::nominal(&self.twin.world(session)?.spec);
        self.tracked(session, now, |t| t.apply_action(session, action, &monitor))
    }

    pub fn edit_map(&mut self, edits: &[CellEdit], session: Option<u64>, now: u64) -> Result<()> {
        self.tracked(session, now, |t| t.edit_map(session, edits))
    }

    pub fn fork(&mut self, from: Option<u64>, now: u64) -> Result<u64> {
        let id = self.twin.fork(from)?;
        self.lifecycle(id, Some(id), EventKind::SessionForked { session: id, parent: from });
        self.updated = now;
        Ok(id)
    }

    fn parent_of(&self, id: u64) -> Result<Option<u64>> {
        self.twin.sessions().iter().find(|s| s.id == id).map(|s| s.parent).ok_or_else(|| Error::NotFound(format!("session {id}")))
    }

    pub fn commit(&mut self, id: u64, now: u64) -> Result<&World> {
        let parent = self.parent_of(id)?;
        self.twin.commit(id)?;
        let actions = self.twin.sessions().iter().find(|s| s.id == id).map_or(0, |s| s.actions.len());
        self.lifecycle(id, parent, EventKind::SessionCommitted { session: id, actions });
        self.updated = now;
        self.twin.world(parent)
    }

    pub fn discard(&mut self, id: u64, now: u64) -> Result<&World> {
        let parent = self.parent_of(id)?;
        self.twin.discard(id)?;
        self.lifecycle(id, parent, EventKind::SessionDiscarded { session: id });
        self.updated = now;
        self.twin.world(parent)
    }

    fn doc(&self) -> MissionDoc {
        MissionDoc {
            schema: MISSION_SCHEMA.into(),
            id: self.id.clone(),
            created: self.created,
            updated: self.updated,
            next_plan: self.next_plan,
            plans: self.plans.keys().cloned().collect(),
            sessions: self.twin.session_infos(),
        }
    }

    /// Writes the mission directory:
    ///
    /// ```text
    /// mission.json          ids, timestamps, session tree
    /// events.jsonl          event feed, one JSON record per line
    /// live/                 live world (map.hlm, classes.hlm, world.json)
    /// sessions/<id>/        world of every still-active session
    /// plans/<plan id>.json  stored plans
    /// ```
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("mission.json"), serde_json::to_string_pretty(&self.doc())?)?;
        let mut feed = String::new();
        for r in &self.feed {
            feed.push_str(&serde_json::to_string(r)?);
            feed.push('\n');
        }
        std::fs::write(dir.join("events.jsonl"), feed)?;
        self.twin.live().save(&dir.join("live"))?;
        let sessions = dir.join("sessions");
        if sessions.exists() {
            std::fs::remove_dir_all(&sessions)?;
        }
        for s in self.twin.sessions() {
            if let Some(w) = s.world() {
                w.save(&sessions.join(s.id.to_string()))?;
            }
        }
        let plans = dir.join("plans");
        std::fs::create_dir_all(&plans)?;
        for (id, plan) in &self.plans {
            std::fs::write(plans.join(format!("{id}.json")), plan.to_json())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let doc: MissionDoc = serde_json::from_str(&std::fs::read_to_string(dir.join("mission.json"))?)?;
        if doc.schema != MISSION_SCHEMA {
            return Err(Error::Format(format!("unsupported mission schema {:?}", doc.schema)));
        }
        let live = World::load(&dir.join("live"))?;
        let mut active = Vec::new();
        for s in doc.sessions.iter().filter(|s| s.status == crate::sim::SessionStatus::Active) {
            active.push(World::load(&dir.join("sessions").join(s.id.to_string()))?);
        }
        let twin = Twin::from_parts(live, doc.sessions, active)?;
        let mut plans = BTreeMap::new();
        for id in doc.plans {
            let text = std::fs::read_to_string(dir.join("plans").join(format!("{id}.json")))?;
            plans.insert(id, Plan::from_json(&text)?);
        }
        let feed = std::fs::read_to_string(dir.join("events.jsonl"))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<FeedRecord>, _>>()?;
        Ok(Mission { id: doc.id, twin, plans, created: doc.created, updated: doc.updated, next_plan: doc.next_plan, feed })
    }

    /// Canonical bytes of everything that is persisted.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.doc()).expect("mission serializes");
        for r in &self.feed {
            out.extend(serde_json::to_vec(r).expect("feed serializes"));
        }
        out.extend(self.twin.live().to_bytes());
        for s in self.twin.sessions() {
            if let Some(w) = s.world() {
                out.extend(w.to_bytes());
            }
        }
        for p in self.plans.values() {
            out.extend(p.to_json().into_bytes());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridGeometry;
    use crate::robot::{Pose2, RobotSpec};
    use crate::terrain::{HeightMap, TerrainClass, TerrainClassMap};

    fn mission() -> Mission {
        let g = GridGeometry::new(0.025, (0.0, 0.0), 160, 80).unwrap();
        let map = HeightMap::flat(g, 0.0);
        let spec = RobotSpec::default();
        let robot = RobotState::standing(Pose2::new(0.5125, 1.0125, 0.0), &spec, Some(&map));
        let world = World::new(map, TerrainClassMap::uniform(g, TerrainClass::Safe), robot, spec, 1.0).unwrap();
        Mission::new("m1", world, 1000)
    }

    #[test]
    fn candidates_execute_and_persist() {
        let mut m = mission();
        let req = CandidateRequest::new(Goal::new(3.0, 1.0), vec![0.5, 5.0]);
        let c = m.request_candidates(&req, None, 1001).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].plan_id.as_deref(), Some("p1"));
        assert!(c.iter().all(|c| c.summary.is_some()));
        assert!(matches!(
            m.request_candidates(&CandidateRequest::new(Goal::new(3.0, 1.0), vec![]), None, 1002),
            Err(Error::InvalidRequest(_))
        ));

        let s = m.fork(None, 1003).unwrap();
        assert!(matches!(m.execute_plan("p1", None, None, 1004), Err(Error::Frozen)));
        let report = m.execute_plan("p1", Some(s), None, 1005).unwrap();
        assert!(report.completed());
        let session_bytes = m.twin.world(Some(s)).unwrap().to_bytes();

        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let loaded = Mission::load(dir.path()).unwrap();
        assert_eq!(loaded.to_bytes(), m.to_bytes());

        m.commit(s, 1006).unwrap();
        assert_eq!(m.twin.live().to_bytes(), session_bytes);
        assert!(m.feed().windows(2).all(|w| w[0].seq + 1 == w[1].seq));
        assert!(matches!(m.feed().last().unwrap().event.kind, EventKind::SessionCommitted { .. }));
        assert!(matches!(m.execute_plan("p1", None, None, 1007), Err(Error::InvalidRequest(_))));
    }

    #[test]
    fn steps_and_unreachable_goals() {
        let mut m = mission();
        let r = m.trigger_step(0, 0.2, None, None, 1).unwrap();
        assert!(r.aborted.is_none());
        assert!(m.twin.live().tick() > 0);
        assert!(matches!(m.trigger_step(0, 0.5, None, None, 2), Err(Error::InfeasibleFoothold(_))));
        let far = CandidateRequest::new(Goal::new(30.0, 1.0), vec![0.5, 5.0]);
        let c = m.request_candidates(&far, None, 3).unwrap();
        assert!(c.iter().all(|c| c.plan_id.is_none() && c.error.is_some()));
    }
}
