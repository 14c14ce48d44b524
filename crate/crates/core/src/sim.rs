//! Kinematic digital twin: phase-by-phase execution with a stability
//! monitor, and predictive sessions that freeze a world and trial actions on
//! a forked copy.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::costmap::{build_cost_map_with, CostConfig, CostMap};
use crate::error::{Error, Result};
use crate::format::{decode_class_map, decode_height_map, encode_class_map, encode_height_map};
use crate::planner::{Action, Lattice, Plan, DEFAULT_OFFSET_STEP};
use crate::robot::geometry::Vec2;
use crate::robot::{evaluate_action, stability_with, PhaseKind, RobotSpec, RobotState};
use crate::terrain::{compute_features, HeightMap, TerrainClass, TerrainClassMap, TerrainFeatures, FEATURE_WINDOW};

pub const WORLD_SCHEMA: &str = "hyloco-world/1";

/// Independent stability check run at every phase boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monitor {
    /// Base-frame CoM the monitor believes to be true.
    pub com_offset: [f64; 2],
    /// Minimum distance of the CoM projection to the support polygon edge.
    pub margin: f64,
}

impl Monitor {
    /// Monitor agreeing with the controller's own model.
    pub fn nominal(spec: &RobotSpec) -> Self {
        Monitor { com_offset: spec.com_offset, margin: spec.stability_margin }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortCause {
    /// The monitor found the CoM too close to (or outside) the support polygon.
    Unstable,
    /// The controller rejected the next action during plan execution.
    Infeasible,
}

/// One structured event-log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    /// A drive, turn or step finished; `margin` is the smallest support distance seen.
    ActionApplied { action: Action, cost: f64, margin: f64, robot: RobotState },
    /// A step phase boundary passed the monitor.
    Phase { foot: usize, phase: PhaseKind, margin: f64 },
    /// Estimated touchdown elevation of a foot.
    Contact { foot: usize, foot_z: f64 },
    ExecutionAborted { cause: AbortCause, action_index: Option<usize>, phase: Option<PhaseKind>, margin: Option<f64>, reason: String },
    PlanStarted { actions: usize },
    PlanFinished { executed: usize },
    MapEdited { cells: usize },
    SessionForked { session: u64, parent: Option<u64> },
    SessionCommitted { session: u64, actions: usize },
    SessionDiscarded { session: u64 },
}

impl Event {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

/// Line-delimited JSON export of an event log.
pub fn events_to_jsonl(events: &[Event]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_json_line());
        out.push('\n');
    }
    out
}

pub fn events_from_jsonl(text: &str) -> Result<Vec<Event>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// Monitor reading at one phase boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    /// `None` for the single boundary of a drive or turn.
    pub phase: Option<PhaseKind>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub cause: AbortCause,
    pub phase: Option<PhaseKind>,
    pub margin: Option<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionReport {
    pub action: Action,
    pub cost: f64,
    pub phases: Vec<PhaseRecord>,
    /// Smallest monitored support distance over the phase boundaries reached.
    pub min_margin: f64,
    pub aborted: Option<Abort>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub actions: Vec<ActionReport>,
    /// Index of the action at which execution stopped.
    pub abort_index: Option<usize>,
    pub abort: Option<Abort>,
}

impl ExecutionReport {
    pub fn completed(&self) -> bool {
        self.abort.is_none()
    }

    /// Per-action margin minima.
    pub fn margins(&self) -> Vec<f64> {
        self.actions.iter().map(|a| a.min_margin).collect()
    }
}

/// One cell change of a map edit. `elevation: None` marks the cell unknown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellEdit {
    pub cell: [usize; 2],
    pub elevation: Option<f32>,
    #[serde(default)]
    pub class: Option<TerrainClass>,
}

/// Terrain, robot and event log of one twin.
///
/// Layers are shared behind `Arc`s and copied on write, so cloning a world
/// is cheap and clones never observe each other's edits.
#[derive(Debug, Clone)]
pub struct World {
    map: Arc<HeightMap>,
    classes: Arc<TerrainClassMap>,
    features: Arc<TerrainFeatures>,
    costmap: Arc<CostMap>,
    lambda: f64,
    cost_config: CostConfig,
    pub robot: RobotState,
    pub spec: RobotSpec,
    tick: u64,
    events: Vec<Event>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WorldDoc {
    schema: String,
    robot: RobotState,
    spec: RobotSpec,
    tick: u64,
    lambda: f64,
    cost_config: CostConfig,
    events: Vec<Event>,
}

impl World {
    pub fn new(map: HeightMap, classes: TerrainClassMap, robot: RobotState, spec: RobotSpec, lambda: f64) -> Result<Self> {
        Self::with_config(Arc::new(map), Arc::new(classes), robot, spec, lambda, CostConfig::default())
    }

    /// Builds a world; the robot is snapped to the nearest lattice state so
    /// that plans computed from it start exactly at it.
    pub fn with_config(
        map: Arc<HeightMap>,
        classes: Arc<TerrainClassMap>,
        robot: RobotState,
        spec: RobotSpec,
        lambda: f64,
        cost_config: CostConfig,
    ) -> Result<Self> {
        let mut w = Self::assemble(map, classes, robot, spec, lambda, cost_config)?;
        let lattice = Lattice::new(&w.costmap, &w.spec, DEFAULT_OFFSET_STEP);
        w.robot = lattice.snap(&w.robot, &w.costmap, &w.spec).ok_or_else(|| Error::InvalidStart("robot is outside the map".into()))?;
        Ok(w)
    }

    fn assemble(
        map: Arc<HeightMap>,
        classes: Arc<TerrainClassMap>,
        robot: RobotState,
        spec: RobotSpec,
        lambda: f64,
        cost_config: CostConfig,
    ) -> Result<Self> {
        spec.validate()?;
        let features = Arc::new(compute_features(&map, FEATURE_WINDOW));
        let costmap = Arc::new(build_cost_map_with(map.clone(), &classes, &features, lambda, cost_config)?);
        Ok(World { map, classes, features, costmap, lambda, cost_config, robot, spec, tick: 0, events: Vec::new() })
    }

    pub fn map(&self) -> &Arc<HeightMap> {
        &self.map
    }

    pub fn classes(&self) -> &Arc<TerrainClassMap> {
        &self.classes
    }

    pub fn features(&self) -> &Arc<TerrainFeatures> {
        &self.features
    }

    pub fn costmap(&self) -> &Arc<CostMap> {
        &self.costmap
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    fn log(&mut self, kind: EventKind) {
        self.tick += 1;
        self.events.push(Event { tick: self.tick, kind });
    }

    /// Executes one action phase by phase. Infeasible actions are rejected
    /// with the world untouched. A monitor violation logs
    /// `ExecutionAborted` and leaves the robot in the last state that passed.
    pub fn apply_action(&mut self, action: &Action, monitor: &Monitor) -> Result<ActionReport> {
        let outcome = evaluate_action(&self.robot, action, &self.costmap, &self.spec)?;
        let com = Vec2::new(monitor.com_offset[0], monitor.com_offset[1]);
        let check = |s: &RobotState| -> Result<f64> { Ok(stability_with(s, &self.spec, com, 0.0)?.support_distance) };

        let mut report = ActionReport { action: *action, cost: outcome.cost, phases: Vec::new(), min_margin: f64::INFINITY, aborted: None };
        let mut staged = Vec::new();
        let mut state = self.robot.clone();
        for i in 0..outcome.phases.len().max(1) {
            let (kind, foot, next) = match outcome.phases.get(i) {
                None => (None, 0, outcome.state.clone()),
                Some(p) => (Some(p.kind), p.foot, p.apply(&state)),
            };
            let margin = check(&next)?;
            report.min_margin = report.min_margin.min(margin);
            if margin < monitor.margin - 1e-9 {
                let abort = Abort {
                    cause: AbortCause::Unstable,
                    phase: kind,
                    margin: Some(margin),
                    reason: format!("support distance {margin:.3} below monitor margin {:.3}", monitor.margin),
                };
                for e in staged {
                    self.log(e);
                }
                self.robot = state;
                self.log(EventKind::ExecutionAborted {
                    cause: abort.cause,
                    action_index: None,
                    phase: kind,
                    margin: Some(margin),
                    reason: abort.reason.clone(),
                });
                report.aborted = Some(abort);
                return Ok(report);
            }
            report.phases.push(PhaseRecord { phase: kind, margin });
            if let Some(k) = kind {
                staged.push(EventKind::Phase { foot, phase: k, margin });
                if k == PhaseKind::Contact {
                    staged.push(EventKind::Contact { foot, foot_z: next.foot_z[foot] });
                }
            }
            state = next;
        }
        for e in staged {
            self.log(e);
        }
        self.robot = state;
        self.log(EventKind::ActionApplied { action: *action, cost: outcome.cost, margin: report.min_margin, robot: self.robot.clone() });
        Ok(report)
    }

    /// Applies the plan's actions in order and stops at the first abort or
    /// rejected action. The plan must start at the current robot state.
    pub fn execute_plan(&mut self, plan: &Plan, monitor: &Monitor) -> Result<ExecutionReport> {
        let start = plan.states.first().ok_or_else(|| Error::InvalidRequest("plan has no states".into()))?;
        if !same_pose(start, &self.robot) {
            return Err(Error::InvalidRequest("plan does not start at the robot's current state".into()));
        }
        self.log(EventKind::PlanStarted { actions: plan.actions.len() });
        let mut report = ExecutionReport { actions: Vec::new(), abort_index: None, abort: None };
        for (i, action) in plan.actions.iter().enumerate() {
            match self.apply_action(action, monitor) {
                Ok(r) => {
                    let aborted = r.aborted.clone();
                    report.actions.push(r);
                    if let Some(a) = aborted {
                        if let Some(Event { kind: EventKind::ExecutionAborted { action_index, .. }, .. }) = self.events.last_mut() {
                            *action_index = Some(i);
                        }
                        report.abort_index = Some(i);
                        report.abort = Some(a);
                        return Ok(report);
                    }
                }
                Err(e) => {
                    let abort = Abort { cause: AbortCause::Infeasible, phase: None, margin: None, reason: e.to_string() };
                    self.log(EventKind::ExecutionAborted {
                        cause: AbortCause::Infeasible,
                        action_index: Some(i),
                        phase: None,
                        margin: None,
                        reason: abort.reason.clone(),
                    });
                    report.abort_index = Some(i);
                    report.abort = Some(abort);
                    return Ok(report);
                }
            }
        }
        self.log(EventKind::PlanFinished { executed: plan.actions.len() });
        Ok(report)
    }

    /// Changes map cells (and optionally their class) and rebuilds the
    /// derived layers.
    pub fn edit_map(&mut self, edits: &[CellEdit]) -> Result<()> {
        let g = *self.map.geometry();
        if let Some(e) = edits.iter().find(|e| e.cell[0] >= g.width || e.cell[1] >= g.height) {
            return Err(Error::InvalidRequest(format!("cell {:?} outside the map", e.cell)));
        }
        let mut map = (*self.map).clone();
        let mut classes = (*self.classes).clone();
        for e in edits {
            let cell = (e.cell[0], e.cell[1]);
            map.set(cell, e.elevation);
            if let Some(c) = e.class {
                classes.set(cell, c, 1.0);
            }
        }
        let map = Arc::new(map);
        let features = Arc::new(compute_features(&map, FEATURE_WINDOW));
        let costmap = Arc::new(build_cost_map_with(map.clone(), &classes, &features, self.lambda, self.cost_config)?);
        self.map = map;
        self.classes = Arc::new(classes);
        self.features = features;
        self.costmap = costmap;
        self.log(EventKind::MapEdited { cells: edits.len() });
        Ok(())
    }

    fn doc(&self) -> WorldDoc {
        WorldDoc {
            schema: WORLD_SCHEMA.into(),
            robot: self.robot.clone(),
            spec: self.spec.clone(),
            tick: self.tick,
            lambda: self.lambda,
            cost_config: self.cost_config,
            events: self.events.clone(),
        }
    }

    /// Canonical byte encoding: length-prefixed `HLM1` map and class
    /// containers followed by the JSON state document.
    pub fn to_bytes(&self) -> Vec<u8> {
        let map = encode_height_map(&self.map);
        let classes = encode_class_map(&self.classes);
        let doc = serde_json::to_vec(&self.doc()).expect("world serializes");
        let mut out = Vec::with_capacity(16 + map.len() + classes.len() + doc.len());
        out.extend_from_slice(&(map.len() as u64).to_le_bytes());
        out.extend_from_slice(&map);
        out.extend_from_slice(&(classes.len() as u64).to_le_bytes());
        out.extend_from_slice(&classes);
        out.extend_from_slice(&doc);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let chunk = |pos: &mut usize| -> Result<&[u8]> {
            let len_bytes = bytes.get(*pos..*pos + 8).ok_or_else(|| Error::Format("truncated world".into()))?;
            let len = u64::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
            let data = bytes.get(*pos + 8..*pos + 8 + len).ok_or_else(|| Error::Format("truncated world".into()))?;
            *pos += 8 + len;
            Ok(data)
        };
        let map = decode_height_map(chunk(&mut pos)?)?;
        let classes = decode_class_map(chunk(&mut pos)?)?;
        let doc: WorldDoc = serde_json::from_slice(&bytes[pos..])?;
        Self::from_parts(map, classes, doc)
    }

    fn from_parts(map: HeightMap, classes: TerrainClassMap, doc: WorldDoc) -> Result<Self> {
        if doc.schema != WORLD_SCHEMA {
            return Err(Error::Format(format!("unsupported world schema {:?}", doc.schema)));
        }
        map.geometry().ensure_aligned(classes.geometry(), "class map")?;
        let mut w = Self::assemble(Arc::new(map), Arc::new(classes), doc.robot, doc.spec, doc.lambda, doc.cost_config)?;
        w.tick = doc.tick;
        w.events = doc.events;
        Ok(w)
    }

    /// Writes `map.hlm`, `classes.hlm` and `world.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("map.hlm"), encode_height_map(&self.map))?;
        std::fs::write(dir.join("classes.hlm"), encode_class_map(&self.classes))?;
        std::fs::write(dir.join("world.json"), serde_json::to_string_pretty(&self.doc())?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let map = decode_height_map(&std::fs::read(dir.join("map.hlm"))?)?;
        let classes = decode_class_map(&std::fs::read(dir.join("classes.hlm"))?)?;
        let doc: WorldDoc = serde_json::from_str(&std::fs::read_to_string(dir.join("world.json"))?)?;
        Self::from_parts(map, classes, doc)
    }
}

fn same_pose(a: &RobotState, b: &RobotState) -> bool {
    (a.base.x - b.base.x).abs() <= 1e-6
        && (a.base.y - b.base.y).abs() <= 1e-6
        && crate::robot::wrap_angle(a.base.theta - b.base.theta).abs() <= 1e-6
        && (0..4).all(|f| (a.foot_offset[f] - b.foot_offset[f]).abs() <= 1e-6)
        && a.in_contact == b.in_contact
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Committed,
    Discarded,
}

/// A predictive session. While active it owns a forked copy of its parent's
/// world; the parent stays frozen and is itself the pre-fork snapshot.
#[derive(Debug, Clone)]
pub struct PredictiveSession {
    pub id: u64,
    /// Parent session, or `None` for the live world.
    pub parent: Option<u64>,
    pub status: SessionStatus,
    /// Actions applied inside the session (including those committed from children).
    pub actions: Vec<Action>,
    world: Option<World>,
}

impl PredictiveSession {
    pub fn world(&self) -> Option<&World> {
        self.world.as_ref()
    }
}

/// Summary of a session for persistence and clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: u64,
    pub parent: Option<u64>,
    pub status: SessionStatus,
    pub actions: Vec<Action>,
}

/// The live world plus its tree of predictive sessions. Only the innermost
/// active session (or the live world, when none is active) accepts control.
#[derive(Debug, Clone)]
pub struct Twin {
    live: World,
    sessions: Vec<PredictiveSession>,
    active: Vec<usize>,
}

impl Twin {
    pub fn new(live: World) -> Self {
        Twin { live, sessions: Vec::new(), active: Vec::new() }
    }

    pub fn live(&self) -> &World {
        &self.live
    }

    pub fn sessions(&self) -> &[PredictiveSession] {
        &self.sessions
    }

    pub fn session_infos(&self) -> Vec<SessionInfo> {
        self.sessions
            .iter()
            .map(|s| SessionInfo { id: s.id, parent: s.parent, status: s.status, actions: s.actions.clone() })
            .collect()
    }

    /// Innermost active session id, if any.
    pub fn active_session(&self) -> Option<u64> {
        self.active.last().map(|&i| self.sessions[i].id)
    }

    pub fn is_frozen(&self) -> bool {
        !self.active.is_empty()
    }

    fn index(&self, id: u64) -> Result<usize> {
        self.sessions.iter().position(|s| s.id == id).ok_or_else(|| Error::NotFound(format!("session {id}")))
    }

    /// World of `target` (`None` = live) for reading.
    pub fn world(&self, target: Option<u64>) -> Result<&World> {
        match target {
            None => Ok(&self.live),
            Some(id) => {
                let s = &self.sessions[self.index(id)?];
                s.world.as_ref().ok_or_else(|| Error::InvalidSessionState(format!("session {id} is {:?}", s.status)))
            }
        }
    }

    fn check_control(&self, target: Option<u64>) -> Result<()> {
        if let Some(id) = target {
            let s = &self.sessions[self.index(id)?];
            if s.status != SessionStatus::Active {
                return Err(Error::InvalidSessionState(format!("session {id} is {:?}", s.status)));
            }
        }
        if target != self.active_session() {
            return Err(Error::Frozen);
        }
        Ok(())
    }

    fn world_mut(&mut self, target: Option<u64>) -> &mut World {
        match target {
            None => &mut self.live,
            Some(_) => {
                let i = *self.active.last().expect("checked");
                self.sessions[i].world.as_mut().expect("active session has a world")
            }
        }
    }

    /// Forks `from` (`None` = live). The forked world stops accepting
    /// control until the new session is committed or discarded.
    pub fn fork(&mut self, from: Option<u64>) -> Result<u64> {
        if let Some(id) = from {
            let s = &self.sessions[self.index(id)?];
            if s.status != SessionStatus::Active {
                return Err(Error::InvalidSessionState(format!("session {id} is {:?}", s.status)));
            }
        }
        if from != self.active_session() {
            return Err(Error::AlreadyFrozen);
        }
        let world = self.world(from)?.clone();
        let id = self.sessions.len() as u64 + 1;
        self.sessions.push(PredictiveSession { id, parent: from, status: SessionStatus::Active, actions: Vec::new(), world: Some(world) });
        self.active.push(self.sessions.len() - 1);
        Ok(id)
    }

    pub fn apply_action(&mut self, target: Option<u64>, action: &Action, monitor: &Monitor) -> Result<ActionReport> {
        self.check_control(target)?;
        let report = self.world_mut(target).apply_action(action, monitor)?;
        if target.is_some() {
            let i = *self.active.last().unwrap();
            self.sessions[i].actions.push(*action);
        }
        Ok(report)
    }

    pub fn execute_plan(&mut self, target: Option<u64>, plan: &Plan, monitor: &Monitor) -> Result<ExecutionReport> {
        self.check_control(target)?;
        let report = self.world_mut(target).execute_plan(plan, monitor)?;
        if target.is_some() {
            let i = *self.active.last().unwrap();
            let done = report.abort_index.map_or(report.actions.len(), |k| if report.abort.as_ref().is_some_and(|a| a.cause == AbortCause::Unstable) { k + 1 } else { k });
            self.sessions[i].actions.extend_from_slice(&plan.actions[..done]);
        }
        Ok(report)
    }

    pub fn edit_map(&mut self, target: Option<u64>, edits: &[CellEdit]) -> Result<()> {
        self.check_control(target)?;
        self.world_mut(target).edit_map(edits)
    }

    fn finish(&mut self, id: u64) -> Result<usize> {
        let i = self.index(id)?;
        if self.sessions[i].status != SessionStatus::Active {
            return Err(Error::InvalidSessionState(format!("session {id} is {:?}", self.sessions[i].status)));
        }
        if self.active.last() != Some(&i) {
            return Err(Error::InvalidSessionState(format!("session {id} has an active child session")));
        }
        self.active.pop();
        Ok(i)
    }

    /// Replaces the parent world with the session world and returns it.
    pub fn commit(&mut self, id: u64) -> Result<&World> {
        let i = self.finish(id)?;
        let s = &mut self.sessions[i];
        s.status = SessionStatus::Committed;
        let world = s.world.take().expect("active session has a world");
        let actions = s.actions.clone();
        let parent = s.parent;
        match parent {
            None => self.live = world,
            Some(p) => {
                let pi = self.index(p)?;
                self.sessions[pi].world = Some(world);
                self.sessions[pi].actions.extend(actions);
            }
        }
        self.world(parent)
    }

    /// Drops the session world; the parent, frozen since the fork, is
    /// returned unchanged.
    pub fn discard(&mut self, id: u64) -> Result<&World> {
        let i = self.finish(id)?;
        let s = &mut self.sessions[i];
        s.status = SessionStatus::Discarded;
        s.world = None;
        let parent = s.parent;
        self.world(parent)
    }

    /// Rebuilds a twin from its live world, session summaries and the worlds
    /// of the sessions that are still active (outermost first).
    pub fn from_parts(live: World, infos: Vec<SessionInfo>, mut active_worlds: Vec<World>) -> Result<Self> {
        let active_ids: Vec<u64> = infos.iter().filter(|s| s.status == SessionStatus::Active).map(|s| s.id).collect();
        if active_ids.len() != active_worlds.len() {
            return Err(Error::Format("active session count does not match stored worlds".into()));
        }
        let mut twin = Twin { live, sessions: Vec::new(), active: Vec::new() };
        active_worlds.reverse();
        for info in infos {
            let world = (info.status == SessionStatus::Active).then(|| active_worlds.pop().unwrap());
            if world.is_some() {
                if info.parent != twin.active_session() {
                    return Err(Error::Format("active sessions do not form a chain".into()));
                }
                twin.active.push(twin.sessions.len());
            }
            twin.sessions.push(PredictiveSession { id: info.id, parent: info.parent, status: info.status, actions: info.actions, world });
        }
        Ok(twin)
    }
}
