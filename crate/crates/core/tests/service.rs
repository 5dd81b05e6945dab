use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use priu::bench::synth::{generate, SynthSpec};
use priu::capture::{train_and_capture, CaptureOptions};
use priu::engine::Engine;
use priu::model::{build_schedule, Hyperparams, ModelKind};
use priu::service::{router, AppState, Session};
use priu::trainer::TrainOptions;

fn session(kind: ModelKind) -> Session {
    let ds = generate(&SynthSpec {
        kind,
        n: 200,
        m: 5,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let hp = Hyperparams {
        eta: 0.05,
        lambda: 0.01,
        batch_size: 20,
        iterations: 30,
        seed: 1,
        model_kind: kind,
    };
    let schedule = build_schedule(ds.n(), &hp).unwrap();
    let (_, cache) = train_and_capture(&ds, &hp, &schedule, &TrainOptions::default(), &CaptureOptions::default()).unwrap();
    Session::new(Engine::new(ds, cache).unwrap(), None).unwrap()
}

fn app(kind: ModelKind) -> Router {
    router(AppState::loaded(session(kind)), None).unwrap()
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn post(app: &Router, body: Value) -> (StatusCode, Value) {
    let req = Request::post("/update")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    call(app, req).await
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

#[tokio::test]
async fn empty_removal_returns_base_model() {
    let app = app(ModelKind::BinaryLogistic);
    for method in ["priu", "priu-opt", "basel", "infl"] {
        let (status, body) = post(&app, json!({ "removed": [], "method": method })).await;
        assert_eq!(status, StatusCode::OK, "{method}: {body}");
        let m = &body["metrics"];
        assert_eq!(m["removed_count"], 0);
        assert_eq!(m["l2_dist_to_base"].as_f64().unwrap(), 0.0);
        assert!((m["cosine"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        assert!(m["accuracy"].as_f64().is_some());
        assert!(m["mse"].is_null());
    }
}

#[tokio::test]
async fn identical_requests_give_identical_metrics() {
    let app = app(ModelKind::Linear);
    let body = json!({ "removed": [3, 1, 4, 1, 5], "method": "priu" });
    let (s1, a) = post(&app, body.clone()).await;
    let (s2, b) = post(&app, body).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(a["metrics"], b["metrics"]);
    assert_ne!(a["request_id"], b["request_id"]);
    // duplicates collapse
    assert_eq!(a["metrics"]["removed_count"], 4);
    assert!(a["metrics"]["l2_dist_to_base"].as_f64().unwrap() < 1e-6);
}

#[tokio::test]
async fn rate_removal_is_seeded() {
    let app = app(ModelKind::Linear);
    let (_, a) = post(&app, json!({ "removed": { "rate": 0.1, "seed": 9 } })).await;
    let (_, b) = post(&app, json!({ "removed": { "rate": 0.1, "seed": 9 } })).await;
    assert_eq!(a["metrics"]["removed_count"], 20);
    assert_eq!(a["metrics"], b["metrics"]);
}

#[tokio::test]
async fn rejects_bad_requests() {
    let app = app(ModelKind::BinaryLogistic);
    let (s, _) = post(&app, json!({ "removed": [200] })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let all: Vec<u32> = (0..200).collect();
    let (s, _) = post(&app, json!({ "removed": all })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post(&app, json!({ "removed": { "rate": 1.5, "seed": 0 } })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, body) = post(&app, json!({ "removed": [1], "method": "closed-form" })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    assert!(body["error"].is_string());
}

#[tokio::test]
async fn compare_and_history() {
    let app = app(ModelKind::BinaryLogistic);
    let (_, a) = post(&app, json!({ "removed": [0, 1, 2] })).await;
    let (_, b) = post(&app, json!({ "removed": [0, 1, 2], "method": "basel" })).await;
    let uri = format!("/compare?a={}&b={}", a["request_id"], b["request_id"]);
    let (s, cmp) = get(&app, &uri).await;
    assert_eq!(s, StatusCode::OK);
    assert!(cmp["l2_dist"].as_f64().unwrap() < 0.05, "{cmp}");
    assert!(cmp["sign_flips"]["flips"].is_u64());
    let (_, same) = get(&app, "/compare?a=1&b=1").await;
    assert_eq!(same["l2_dist"].as_f64().unwrap(), 0.0);
    assert_eq!(same["sign_flips"]["flips"], 0);
    let (s, _) = get(&app, "/compare?a=1&b=99").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, view) = get(&app, "/session").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(view["n"], 200);
    assert_eq!(view["model_kind"], "binary");
    assert_eq!(view["history"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn unavailable_until_loaded() {
    let state = AppState::pending();
    let app = router(state.clone(), Some("http://localhost:5173")).unwrap();
    let (s, _) = get(&app, "/session").await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    state.finish_loading(Ok(session(ModelKind::Linear)));
    let (s, _) = get(&app, "/session").await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn cors_preflight_allows_configured_origin() {
    let app = router(Arc::new(AppState::default()), Some("http://localhost:5173")).unwrap();
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/update")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(
        resp.headers().get("access-control-allow-origin").unwrap(),
        "http://localhost:5173"
    );
}

#[test]
fn invalid_origin_is_config_error() {
    assert!(router(AppState::pending(), Some("not a\nheader")).is_err());
}
