use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use futures::StreamExt;
use serde_json::{json, Value};

use hyloco_core::format;
use hyloco_core::grid::GridGeometry;
use hyloco_core::terrain::{HeightMap, TerrainClass, TerrainClassMap};
use hyloco_service::{router, AppState};

struct Server {
    base: String,
    client: reqwest::Client,
    _dir: Option<tempfile::TempDir>,
}

async fn start(storage: &std::path::Path) -> String {
    let state = AppState::open(storage, None).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
    format!("http://{addr}")
}

async fn server() -> Server {
    let dir = tempfile::tempdir().unwrap();
    let base = start(dir.path()).await;
    Server { base, client: reqwest::Client::new(), _dir: Some(dir) }
}

/// 4 m × 2 m flat map with a 0.5 m block at x ∈ [2.5, 2.75), y ∈ [0, 0.5).
fn map_and_classes() -> (HeightMap, TerrainClassMap) {
    let g = GridGeometry::new(0.025, (0.0, 0.0), 160, 80).unwrap();
    let mut map = HeightMap::flat(g, 0.0);
    let mut classes = TerrainClassMap::uniform(g, TerrainClass::Safe);
    for cx in 100..110 {
        for cy in 0..20 {
            map.set((cx, cy), Some(0.5));
            classes.set((cx, cy), TerrainClass::Obstacle, 1.0);
        }
    }
    (map, classes)
}

fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

impl Server {
    async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let r = self.client.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap();
        let status = r.status().as_u16();
        (status, r.json().await.unwrap())
    }

    async fn create(&self) -> (String, Vec<u8>) {
        let (map, classes) = map_and_classes();
        self.create_with(map, classes).await
    }

    async fn create_with(&self, map: HeightMap, classes: TerrainClassMap) -> (String, Vec<u8>) {
        let bytes = format::encode_height_map(&map);
        let (status, body) = self
            .post(
                "/missions",
                json!({"map": b64(&bytes), "classes": b64(&format::encode_class_map(&classes)), "start": {"x": 0.5125, "y": 1.0125, "theta": 0.0}}),
            )
            .await;
        assert_eq!(status, 201, "{body}");
        (body["id"].as_str().unwrap().to_string(), bytes)
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn create_mission_and_fetch_layers() {
    let s = server().await;
    let (id, bytes) = s.create().await;
    let got = s.client.get(format!("{}/missions/{id}/layers/height", s.base)).send().await.unwrap().bytes().await.unwrap();
    assert_eq!(got.as_ref(), bytes.as_slice());
    let classes = s.client.get(format!("{}/missions/{id}/layers/classes", s.base)).send().await.unwrap().bytes().await.unwrap();
    assert_eq!(format::decode_class_map(&classes).unwrap(), map_and_classes().1);
    let cost = s.client.get(format!("{}/missions/{id}/layers/cost?lambda=2", s.base)).send().await.unwrap().bytes().await.unwrap();
    assert_eq!(format::decode_cost_map(&cost).unwrap().lambda(), 2.0);
    let pgm = s.client.get(format!("{}/missions/{id}/layers/height?format=pgm", s.base)).send().await.unwrap().bytes().await.unwrap();
    assert!(pgm.starts_with(b"P5"));

    let r = s.client.get(format!("{}/missions/{id}/layers/nope", s.base)).send().await.unwrap();
    assert_eq!(r.status().as_u16(), 404);
    let body: Value = r.json().await.unwrap();
    assert_eq!(body["code"], "NotFound");
    let r = s.client.get(format!("{}/missions/zzz", s.base)).send().await.unwrap();
    assert_eq!(r.status().as_u16(), 404);

    // raw HLM1 upload
    let r = s
        .client
        .post(format!("{}/missions", s.base))
        .header("content-type", "application/octet-stream")
        .body(bytes.clone())
        .send()
        .await
        .unwrap();
    assert_eq!(r.status().as_u16(), 201);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_plans_on_two_missions() {
    let s = Arc::new(server().await);
    let (a, _) = s.create().await;
    let (b, _) = s.create().await;
    let req = json!({"goal": {"x": 3.5, "y": 1.0}, "lambdas": [0.5, 5.0], "time_budget": 20.0});
    let (pa, pb) = (format!("/missions/{a}/candidates"), format!("/missions/{b}/candidates"));
    let (ra, rb) = tokio::join!(s.post(&pa, req.clone()), s.post(&pb, req));
    for (status, body) in [ra, rb] {
        assert_eq!(status, 200, "{body}");
        let c = body["candidates"].as_array().unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|c| c["plan_id"].is_string() && c["summary"]["polyline"].as_array().unwrap().len() > 1));
    }
    let (status, body) = s.post(&format!("/missions/{a}/candidates"), json!({"goal": {"x": 3.5, "y": 1.0}, "lambdas": []})).await;
    assert_eq!((status, body["code"].as_str().unwrap()), (400, "InvalidRequest"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn predictive_session_freezes_live_world() {
    let s = server().await;
    let (id, _) = s.create().await;
    let (_, c) = s.post(&format!("/missions/{id}/candidates"), json!({"goal": {"x": 2.0, "y": 1.0}, "lambdas": [1.0]})).await;
    let pid = c["candidates"][0]["plan_id"].as_str().unwrap().to_string();

    let (status, fork) = s.post(&format!("/missions/{id}/fork"), json!({})).await;
    assert_eq!(status, 200);
    let sid = fork["session"].as_u64().unwrap();
    let (status, body) = s.post(&format!("/missions/{id}/step"), json!({"foot": 0, "offset": 0.1})).await;
    assert_eq!((status, body["code"].as_str().unwrap()), (409, "Frozen"));
    let (status, body) = s.post(&format!("/missions/{id}/fork"), json!({})).await;
    assert_eq!((status, body["code"].as_str().unwrap()), (409, "AlreadyFrozen"));

    let (status, report) = s.post(&format!("/missions/{id}/plans/{pid}/execute"), json!({"session": sid})).await;
    assert_eq!(status, 200, "{report}");
    assert!(report["abort"].is_null());
    let session_view: Value = s.client.get(format!("{}/missions/{id}/world?session={sid}", s.base)).send().await.unwrap().json().await.unwrap();

    let (status, live) = s.post(&format!("/missions/{id}/sessions/{sid}/commit"), json!({})).await;
    assert_eq!(status, 200);
    assert_eq!(live["robot"], session_view["robot"]);
    assert_eq!(live["tick"], session_view["tick"]);
    let (status, body) = s.post(&format!("/missions/{id}/sessions/{sid}/discard"), json!({})).await;
    assert_eq!((status, body["code"].as_str().unwrap()), (409, "InvalidSessionState"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn steps_stream_events_and_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(dir.path()).await;
    let s = Server { base, client: reqwest::Client::new(), _dir: None };
    // a block just ahead of the front-left wheel
    let (mut map, mut classes) = map_and_classes();
    for cx in 43..48 {
        for cy in 50..56 {
            map.set((cx, cy), Some(0.5));
            classes.set((cx, cy), TerrainClass::Obstacle, 1.0);
        }
    }
    let (id, _) = s.create_with(map, classes).await;

    let stream = s.client.get(format!("{}/missions/{id}/events", s.base)).send().await.unwrap();
    assert!(stream.headers()["content-type"].to_str().unwrap().starts_with("text/event-stream"));
    let mut chunks = stream.bytes_stream();

    let (status, report) = s.post(&format!("/missions/{id}/step"), json!({"foot": 1, "offset": 0.15})).await;
    assert_eq!(status, 200, "{report}");
    assert_eq!(report["phases"].as_array().unwrap().len(), 5);
    let (status, body) = s.post(&format!("/missions/{id}/step"), json!({"foot": 0, "offset": 0.3})).await;
    assert_eq!(status, 422);
    assert_eq!(body["code"], "InfeasibleFoothold");

    let mut text = String::new();
    let read = async {
        while !text.contains("action_applied") {
            let chunk = chunks.next().await.unwrap().unwrap();
            text.push_str(std::str::from_utf8(&chunk).unwrap());
        }
    };
    tokio::time::timeout(Duration::from_secs(10), read).await.expect("events arrive");
    let records: Vec<Value> =
        text.lines().filter_map(|l| l.strip_prefix("data:")).map(|d| serde_json::from_str(d.trim()).unwrap()).collect();
    assert!(records.iter().any(|r| r["type"] == "contact" && r["payload"]["foot"] == 1));
    let seqs: Vec<u64> = records.iter().map(|r| r["seq"].as_u64().unwrap()).collect();
    assert!(seqs.windows(2).all(|w| w[0] + 1 == w[1]));

    let before: Value = s.client.get(format!("{}/missions/{id}", s.base)).send().await.unwrap().json().await.unwrap();
    let saved = std::fs::read(dir.path().join(&id).join("live").join("world.json")).unwrap();
    let restarted = start(dir.path()).await;
    let after: Value = s.client.get(format!("{restarted}/missions/{id}")).send().await.unwrap().json().await.unwrap();
    assert_eq!(before, after);
    let replay = s.client.get(format!("{restarted}/missions/{id}/events?after=0")).send().await.unwrap();
    let mut replay = replay.bytes_stream();
    let first = tokio::time::timeout(Duration::from_secs(10), replay.next()).await.unwrap().unwrap().unwrap();
    assert!(std::str::from_utf8(&first).unwrap().contains("\"seq\":1"));
    assert_eq!(std::fs::read(dir.path().join(&id).join("live").join("world.json")).unwrap(), saved);
}
