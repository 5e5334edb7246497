//! The HTTP surface driven in-process.

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use maestro_arena::clock::ClockMode;
use maestro_arena::config::DatasetConfig;
use maestro_arena::export::export_csv;
use maestro_arena::setup::{gen_data, train_hidden};
use maestro_arena::{Arena, Config};
use maestro_core::train::TrainConfig;
use maestro_server::{app, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

fn config(dir: &std::path::Path) -> Config {
    let mut c = Config::desk(dir);
    c.dataset = DatasetConfig::Synthetic { n_train: 400, n_test: 100, num_classes: 10, dims: [12, 12, 1] };
    c.train = TrainConfig { epochs: 5, ..TrainConfig::default() };
    c.eval.n_samples = 20;
    c.timing.clock = ClockMode::Frozen;
    c.phases[1].deadline = "2025-06-01T00:00:00Z".parse().unwrap();
    c
}

async fn setup(dir: &std::path::Path) -> (Router, AppState) {
    let c = config(dir);
    gen_data(&c).unwrap();
    train_hidden(&c).unwrap();
    app(Arc::new(Arena::open(c).unwrap()))
}

async fn call(router: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let response = router.clone().oneshot(request).await.unwrap();
    let status = response.status();
    (status, response.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get_json(router: &Router, uri: &str) -> (StatusCode, Value) {
    let (status, body) = call(router, "GET", uri, None).await;
    (status, serde_json::from_slice(&body).unwrap())
}

async fn drain(state: &AppState) {
    for _ in 0..2000 {
        if state.queue.in_flight() == 0 {
            return;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("queue did not drain");
}

fn fgsm(who: &str) -> Value {
    json!({"submitter_id": who, "phase": "attack", "payload": {"kind": "reference", "role": "attack", "method": "fgsm"}})
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (router, _) = setup(dir.path()).await;

    let (status, body) = get_json(&router, "/api/boards/nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["kind"], "not_found");
    assert_eq!(get_json(&router, "/api/boards/nope/csv").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get_json(&router, "/api/boards/attack/history/mallory").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get_json(&router, "/api/nothing").await.0, StatusCode::NOT_FOUND);

    assert_eq!(get_json(&router, "/api/boards/attack?dir=sideways").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get_json(&router, "/api/boards/attack?limit=-1").await.0, StatusCode::BAD_REQUEST);
    let (status, body) = get_json(&router, "/api/boards/attack?sort=bogus").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"]["message"].as_str().unwrap().contains("overall_score"));

    let (status, _) = call(&router, "POST", "/api/submissions", Some(json!({"nonsense": true}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&router, "POST", "/api/submissions", Some(fgsm("mallory"))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let late = json!({"submitter_id": "bob", "phase": "defense",
        "payload": {"kind": "reference", "role": "defense", "method": "plain"}});
    let (status, body) = call(&router, "POST", "/api/submissions", Some(late)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let body: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(body["error"]["kind"], "deadline_passed");
    assert_eq!(body["error"]["deadline"], "2025-06-01T00:00:00+00:00");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn submissions_flow_to_boards() {
    let dir = tempfile::tempdir().unwrap();
    let (router, state) = setup(dir.path()).await;

    let mut ids = Vec::new();
    for who in ["alice", "alice", "bob"] {
        let (status, body) = call(&router, "POST", "/api/submissions", Some(fgsm(who))).await;
        assert_eq!(status, StatusCode::CREATED);
        ids.push(serde_json::from_slice::<Value>(&body).unwrap()["id"].as_u64().unwrap());
    }
    drain(&state).await;

    let (status, s) = get_json(&router, &format!("/api/submissions/{}", ids[0])).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(s["status"], "evaluated");
    assert!(s["evaluation"]["metrics"]["overall_score"].is_number());

    let (_, board) = get_json(&router, "/api/boards/attack").await;
    assert_eq!(board["total"], 2);
    assert_eq!(board["sort"], "eval_timestamp");
    assert_eq!(board["dir"], "desc");
    let row = &board["rows"][0];
    assert_eq!(row["submitter_id"], "bob");
    assert!(row["cells"]["adv_acc"]["band"].is_string());

    let (_, history) = get_json(&router, "/api/boards/attack/history/alice").await;
    assert_eq!(history["rows"].as_array().unwrap().len(), 2);

    let (_, narrow) = get_json(&router, "/api/boards/attack?metrics=adv_acc,overall_score&search=BO").await;
    assert_eq!(narrow["total"], 1);
    assert_eq!(narrow["rows"][0]["metrics"].as_object().unwrap().len(), 2);

    let (_, errors) = get_json(&router, "/api/boards/attack/errors").await;
    assert_eq!(errors["rows"], json!([]));

    let (status, csv) = call(&router, "GET", "/api/boards/attack/csv", None).await;
    assert_eq!(status, StatusCode::OK);
    let expected = export_csv(state.arena.config(), &state.arena.snapshot(), "attack").unwrap();
    assert_eq!(String::from_utf8(csv).unwrap(), expected);

    // Reads are pure: same bytes, no new records.
    let before = state.arena.snapshot().record_count();
    let a = call(&router, "GET", "/api/boards/attack?sort=overall_score", None).await;
    let b = call(&router, "GET", "/api/boards/attack?sort=overall_score", None).await;
    assert_eq!(a, b);
    let _ = call(&router, "GET", "/api/phases", None).await;
    assert_eq!(state.arena.snapshot().record_count(), before);

    let (_, phases) = get_json(&router, "/api/phases").await;
    assert_eq!(phases[0]["name"], "attack");
    assert_eq!(phases[0]["evaluations"], 3);
    let (_, config) = get_json(&router, "/api/config").await;
    assert_eq!(config["config_version"], 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pending_submissions_are_requeued_at_start() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path());
    gen_data(&c).unwrap();
    train_hidden(&c).unwrap();
    let arena = Arena::open(c.clone()).unwrap();
    let s = arena.submit("alice", "attack", serde_json::from_value(fgsm("alice")["payload"].clone()).unwrap()).unwrap();
    drop(arena);

    let (_, state) = app(Arc::new(Arena::open(c).unwrap()));
    drain(&state).await;
    assert!(state.arena.snapshot().evaluation_of(s.id).is_some());
}
