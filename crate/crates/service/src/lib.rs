//! HTTP mission service: worlds, candidate planning, execution, stepping and
//! predictive sessions, with an event stream and on-disk persistence.
//!
//! Every mission lives behind its own async mutex, so mutating requests on
//! one mission are serialized while different missions proceed
//! concurrently. Planning and execution run on the blocking thread pool.
//! After each mutation the mission directory is rewritten and the new feed
//! records are broadcast to `GET /missions/{id}/events` subscribers.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use futures::Stream;
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, Mutex, RwLock};

use hyloco_core::format;
use hyloco_core::grid::GridGeometry;
use hyloco_core::heuristics::HeuristicModel;
use hyloco_core::mission::{CandidateRequest, ErrorBody, FeedRecord, Mission};
use hyloco_core::planner::PlanningWorld;
use hyloco_core::robot::{Pose2, RobotSpec, RobotState};
use hyloco_core::sim::{Monitor, SessionInfo, World};
use hyloco_core::terrain::{analyze_terrain, ClassifierModel, HeightMap};
use hyloco_core::Error;

/// Startup configuration of [`serve`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Directory holding one subdirectory per mission.
    pub storage: PathBuf,
}

/// Error response: HTTP status plus `{code, message}` body.
#[derive(Debug)]
pub struct ApiError(pub StatusCode, pub ErrorBody);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Frozen | Error::AlreadyFrozen | Error::InvalidSessionState(_) => StatusCode::CONFLICT,
            Error::NoStableShift
            | Error::InfeasibleFoothold(_)
            | Error::ActionRejected(_)
            | Error::UnsupportedState(_)
            | Error::InvalidStart(_)
            | Error::NoPath
            | Error::BudgetExhausted
            | Error::InsufficientData { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(status, ErrorBody::from(&e))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError::from(Error::InvalidRequest(msg.into()))
}

type ApiResult<T> = Result<T, ApiError>;

struct Slot {
    mission: Arc<Mutex<Mission>>,
    feed: broadcast::Sender<FeedRecord>,
}

/// Shared service state.
pub struct AppState {
    missions: RwLock<BTreeMap<String, Arc<Slot>>>,
    storage: PathBuf,
    model: Option<Arc<HeuristicModel>>,
    next_id: AtomicU64,
}

impl AppState {
    /// Loads every mission found under `storage`.
    pub fn open(storage: &Path, model: Option<HeuristicModel>) -> hyloco_core::Result<Arc<Self>> {
        std::fs::create_dir_all(storage)?;
        let mut missions = BTreeMap::new();
        let mut max_id = 0;
        let mut dirs: Vec<_> = std::fs::read_dir(storage)?.filter_map(|e| e.ok()).map(|e| e.path()).collect();
        dirs.sort();
        for dir in dirs {
            if !dir.join("mission.json").exists() {
                continue;
            }
            let m = Mission::load(&dir)?;
            if let Some(n) = m.id.strip_prefix('m').and_then(|n| n.parse::<u64>().ok()) {
                max_id = max_id.max(n);
            }
            missions.insert(m.id.clone(), Arc::new(Slot { mission: Arc::new(Mutex::new(m)), feed: broadcast::channel(1024).0 }));
        }
        Ok(Arc::new(AppState {
            missions: RwLock::new(missions),
            storage: storage.to_path_buf(),
            model: model.map(Arc::new),
            next_id: AtomicU64::new(max_id + 1),
        }))
    }

    async fn slot(&self, id: &str) -> ApiResult<Arc<Slot>> {
        self.missions.read().await.get(id).cloned().ok_or_else(|| Error::NotFound(format!("mission {id}")).into())
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/missions", post(create_mission).get(list_missions))
        .route("/missions/:id", get(mission_summary))
        .route("/missions/:id/world", get(world_state))
        .route("/missions/:id/layers/:layer", get(layer))
        .route("/missions/:id/candidates", post(candidates))
        .route("/missions/:id/plans/:pid", get(get_plan))
        .route("/missions/:id/plans/:pid/execute", post(execute))
        .route("/missions/:id/step", post(step))
        .route("/missions/:id/fork", post(fork))
        .route("/missions/:id/sessions/:sid/:op", post(session_op))
        .route("/missions/:id/events", get(events))
        .with_state(state)
}

/// Binds, loads stored missions and serves until the process ends.
pub async fn serve(config: ServiceConfig, model: Option<HeuristicModel>) -> std::io::Result<()> {
    let state = AppState::open(&config.storage, model).map_err(|e| std::io::Error::other(e.to_string()))?;
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

/// Runs a mutation on the blocking pool with the mission locked, then
/// persists the mission and broadcasts the new feed records.
async fn mutate<T: Send + 'static>(
    state: &Arc<AppState>,
    id: &str,
    op: impl FnOnce(&mut Mission, u64) -> hyloco_core::Result<T> + Send + 'static,
) -> ApiResult<T> {
    let slot = state.slot(id).await?;
    let mut guard = slot.mission.clone().lock_owned().await;
    let dir = state.storage.join(id);
    let (guard_back, result) = tokio::task::spawn_blocking(move || {
        let before = guard.feed().last().map_or(0, |r| r.seq);
        let out = op(&mut guard, now_ms());
        let fresh = guard.feed_since(before).to_vec();
        let saved = guard.save(&dir);
        (guard, out.and_then(|v| saved.map(|_| (v, fresh))))
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, ErrorBody { code: "Internal".into(), message: e.to_string() }))?;
    let (value, fresh) = result?;
    for r in fresh {
        let _ = slot.feed.send(r);
    }
    drop(guard_back);
    Ok(value)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateMission {
    /// Base64 `HLM1` height map.
    map: String,
    /// Base64 `HLM1` class map; classified from the map when absent.
    #[serde(default)]
    classes: Option<String>,
    #[serde(default)]
    start: Option<Pose2>,
    #[serde(default)]
    spec: Option<RobotSpec>,
    #[serde(default = "default_lambda")]
    lambda: f64,
}

fn default_lambda() -> f64 {
    1.0
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MissionSummary {
    pub id: String,
    pub geometry: GridGeometry,
    pub lambda: f64,
    pub robot: RobotState,
    pub tick: u64,
    pub frozen: bool,
    pub active_session: Option<u64>,
    pub plans: Vec<String>,
    pub sessions: Vec<SessionInfo>,
    pub created: u64,
    pub updated: u64,
}

fn summary(m: &Mission) -> MissionSummary {
    let live = m.twin.live();
    MissionSummary {
        id: m.id.clone(),
        geometry: *live.map().geometry(),
        lambda: live.lambda(),
        robot: live.robot.clone(),
        tick: live.tick(),
        frozen: m.twin.is_frozen(),
        active_session: m.twin.active_session(),
        plans: m.plans.keys().cloned().collect(),
        sessions: m.twin.session_infos(),
        created: m.created,
        updated: m.updated,
    }
}

fn decode_b64(s: &str) -> ApiResult<Vec<u8>> {
    base64::engine::general_purpose::STANDARD.decode(s.trim()).map_err(|e| bad_request(format!("base64: {e}")))
}

/// `POST /missions`: JSON body with a base64 map, or a raw `HLM1` body with
/// `Content-Type: application/octet-stream`.
async fn create_mission(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<(StatusCode, Json<MissionSummary>)> {
    let raw = headers.get(header::CONTENT_TYPE).is_some_and(|v| v.as_bytes().starts_with(b"application/octet-stream"));
    let req = if raw {
        CreateMission { map: String::new(), classes: None, start: None, spec: None, lambda: default_lambda() }
    } else {
        serde_json::from_slice::<CreateMission>(&body).map_err(|e| bad_request(format!("body: {e}")))?
    };
    let map_bytes = if raw { body.to_vec() } else { decode_b64(&req.map)? };
    let class_bytes = req.classes.as_deref().map(decode_b64).transpose()?;
    let id = format!("m{}", state.next_id.fetch_add(1, Ordering::SeqCst));
    let mid = id.clone();
    let mission = tokio::task::spawn_blocking(move || -> hyloco_core::Result<Mission> {
        let map = format::decode_height_map(&map_bytes)?;
        let classes = match class_bytes {
            Some(b) => format::decode_class_map(&b)?,
            None => analyze_terrain(&map, None, ClassifierModel::default_model())?.classes,
        };
        let spec = req.spec.unwrap_or_default();
        let start = req.start.unwrap_or_else(|| default_start(&map));
        let robot = RobotState::standing(start, &spec, Some(&map));
        let world = World::new(map, classes, robot, spec, req.lambda)?;
        Ok(Mission::new(mid, world, now_ms()))
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, ErrorBody { code: "Internal".into(), message: e.to_string() }))??;
    mission.save(&state.storage.join(&id))?;
    let body = summary(&mission);
    state.missions.write().await.insert(id, Arc::new(Slot { mission: Arc::new(Mutex::new(mission)), feed: broadcast::channel(1024).0 }));
    Ok((StatusCode::CREATED, Json(body)))
}

fn default_start(map: &HeightMap) -> Pose2 {
    let g = map.geometry();
    let (x, y) = g.cell_center((g.width / 2, g.height / 2));
    Pose2::new(x, y, 0.0)
}

async fn list_missions(State(state): State<Arc<AppState>>) -> Json<Vec<String>> {
    Json(state.missions.read().await.keys().cloned().collect())
}

async fn mission_summary(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<MissionSummary>> {
    let slot = state.slot(&id).await?;
    let m = slot.mission.lock().await;
    Ok(Json(summary(&m)))
}

#[derive(Debug, Default, Deserialize)]
struct SessionQuery {
    #[serde(default)]
    session: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WorldView {
    pub session: Option<u64>,
    pub tick: u64,
    pub robot: RobotState,
    pub map_fingerprint: String,
}

/// `GET /missions/{id}/world?session=`: robot and tick of the live or a session world.
async fn world_state(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, Query(q): Query<SessionQuery>) -> ApiResult<Json<WorldView>> {
    let slot = state.slot(&id).await?;
    let m = slot.mission.lock().await;
    let w = m.twin.world(q.session)?;
    Ok(Json(WorldView { session: q.session, tick: w.tick(), robot: w.robot.clone(), map_fingerprint: format!("{:016x}", w.map().fingerprint()) }))
}

#[derive(Debug, Default, Deserialize)]
struct LayerQuery {
    #[serde(default)]
    session: Option<u64>,
    /// `hlm` (default) or `pgm`.
    #[serde(default)]
    format: Option<String>,
    /// Cost layer weight; defaults to the world's λ.
    #[serde(default)]
    lambda: Option<f64>,
}

/// `GET /missions/{id}/layers/{height|classes|cost}`.
async fn layer(
    State(state): State<Arc<AppState>>,
    UrlPath((id, layer)): UrlPath<(String, String)>,
    Query(q): Query<LayerQuery>,
) -> ApiResult<Response> {
    let pgm = match q.format.as_deref() {
        None | Some("hlm") => false,
        Some("pgm") => true,
        Some(other) => return Err(bad_request(format!("unknown format {other:?}"))),
    };
    let slot = state.slot(&id).await?;
    let world = slot.mission.lock().await.twin.world(q.session)?.clone();
    let bytes = tokio::task::spawn_blocking(move || -> hyloco_core::Result<Vec<u8>> {
        Ok(match layer.as_str() {
            "height" if pgm => format::height_map_pgm(world.map()),
            "height" => format::encode_height_map(world.map()),
            "classes" if pgm => format::class_map_pgm(world.classes()),
            "classes" => format::encode_class_map(world.classes()),
            "cost" => {
                let cm = match q.lambda {
                    Some(l) if l != world.lambda() => {
                        let pw = PlanningWorld::new(world.map().clone(), world.features().clone(), world.classes().clone())?;
                        Arc::new(pw.cost_map(l, *world.costmap().config())?)
                    }
                    _ => world.costmap().clone(),
                };
                if pgm {
                    format::cost_map_pgm(&cm)
                } else {
                    format::encode_cost_map(&cm)
                }
            }
            other => return Err(Error::NotFound(format!("layer {other:?}"))),
        })
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, ErrorBody { code: "Internal".into(), message: e.to_string() }))??;
    let ctype = if pgm { "image/x-portable-graymap" } else { "application/octet-stream" };
    Ok(([(header::CONTENT_TYPE, ctype)], bytes).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CandidatesResponse {
    pub candidates: Vec<hyloco_core::mission::Candidate>,
}

async fn candidates(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<Json<CandidatesResponse>> {
    let req: CandidateRequest = serde_json::from_slice(&body).map_err(|e| bad_request(format!("body: {e}")))?;
    let model = state.model.clone();
    let candidates = mutate(&state, &id, move |m, now| m.request_candidates(&req, model.as_deref(), now)).await?;
    Ok(Json(CandidatesResponse { candidates }))
}

async fn get_plan(State(state): State<Arc<AppState>>, UrlPath((id, pid)): UrlPath<(String, String)>) -> ApiResult<Response> {
    let slot = state.slot(&id).await?;
    let m = slot.mission.lock().await;
    let plan = m.plans.get(&pid).ok_or_else(|| Error::NotFound(format!("plan {pid}")))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], plan.to_json()).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExecuteBody {
    #[serde(default)]
    session: Option<u64>,
    #[serde(default)]
    monitor: Option<Monitor>,
}

fn parse_optional<T: serde::de::DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(|b| b.is_ascii_whitespace()) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| bad_request(format!("body: {e}")))
}

async fn execute(
    State(state): State<Arc<AppState>>,
    UrlPath((id, pid)): UrlPath<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<hyloco_core::sim::ExecutionReport>> {
    let b: ExecuteBody = parse_optional(&body)?;
    Ok(Json(mutate(&state, &id, move |m, now| m.execute_plan(&pid, b.session, b.monitor, now)).await?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepBody {
    foot: usize,
    offset: f64,
    #[serde(default)]
    session: Option<u64>,
    #[serde(default)]
    monitor: Option<Monitor>,
}

async fn step(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<Json<hyloco_core::sim::ActionReport>> {
    let b: StepBody = serde_json::from_slice(&body).map_err(|e| bad_request(format!("body: {e}")))?;
    Ok(Json(mutate(&state, &id, move |m, now| m.trigger_step(b.foot, b.offset, b.session, b.monitor, now)).await?))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForkBody {
    /// Session to fork; the live world when absent.
    #[serde(default)]
    from: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ForkResponse {
    pub session: u64,
}

async fn fork(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<Json<ForkResponse>> {
    let b: ForkBody = parse_optional(&body)?;
    let session = mutate(&state, &id, move |m, now| m.fork(b.from, now)).await?;
    Ok(Json(ForkResponse { session }))
}

/// `POST /missions/{id}/sessions/{sid}/{commit|discard}`; returns the world
/// that regained control.
async fn session_op(
    State(state): State<Arc<AppState>>,
    UrlPath((id, sid, op)): UrlPath<(String, u64, String)>,
) -> ApiResult<Json<WorldView>> {
    let commit = match op.as_str() {
        "commit" => true,
        "discard" => false,
        other => return Err(Error::NotFound(format!("session operation {other:?}")).into()),
    };
    let view = mutate(&state, &id, move |m, now| {
        let parent = m.twin.sessions().iter().find(|s| s.id == sid).and_then(|s| s.parent);
        let w = if commit { m.commit(sid, now)? } else { m.discard(sid, now)? };
        Ok(WorldView { session: parent, tick: w.tick(), robot: w.robot.clone(), map_fingerprint: format!("{:016x}", w.map().fingerprint()) })
    })
    .await?;
    Ok(Json(view))
}

#[derive(Debug, Default, Deserialize)]
struct EventsQuery {
    /// Replay records with `seq` greater than this before streaming live ones.
    #[serde(default)]
    after: u64,
}

fn sse_event(r: &FeedRecord) -> SseEvent {
    let data = serde_json::to_string(r).expect("feed record serializes");
    SseEvent::default().id(r.seq.to_string()).data(data)
}

/// `GET /missions/{id}/events`: server-sent events, one feed record each.
async fn events(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<EventsQuery>,
) -> ApiResult<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>> {
    let slot = state.slot(&id).await?;
    // subscribe under the lock so no record falls between history and live
    let (history, rx) = {
        let m = slot.mission.lock().await;
        (m.feed_since(q.after).to_vec(), slot.feed.subscribe())
    };
    let last = history.last().map_or(q.after, |r| r.seq);
    let replay = futures::stream::iter(history.into_iter().map(|r| Ok(sse_event(&r))));
    let live = futures::stream::unfold((rx, last), |(mut rx, last)| async move {
        loop {
            match rx.recv().await {
                Ok(r) if r.seq <= last => continue,
                Ok(r) => {
                    let seq = r.seq;
                    return Some((Ok(sse_event(&r)), (rx, seq)));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    use futures::StreamExt;
    Ok(Sse::new(replay.chain(live)).keep_alive(KeepAlive::default()))
}
