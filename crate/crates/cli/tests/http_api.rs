use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cocreate::config::{ConfigLayer, ServerConfig};
use cocreate::server::{router, AppState, API_SCHEMA_VERSION};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const INTENT: &str = "We host an XR stream in Patras and need latency below 20 ms for the audience. \
    Our budget is 9,000€ for one week.";

fn app_with(layer: ConfigLayer) -> (Router, Arc<AppState>) {
    let config = ServerConfig::resolve(layer, ConfigLayer::default(), ConfigLayer::default()).unwrap();
    let state = AppState::from_config(&config).unwrap();
    (router(state.clone(), &config.cors_allow_list), state)
}

fn app() -> Router {
    app_with(ConfigLayer::default()).0
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn open(app: &Router, id: &str) -> String {
    let body = json!({ "intentText": INTENT, "sessionId": id, "defaultSliceProfile": "eMBB" });
    let (status, v) = call(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    assert_eq!(v["schemaVersion"], API_SCHEMA_VERSION);
    v["sessionId"].as_str().unwrap().to_owned()
}

async fn say(app: &Router, id: &str, msg: Value) -> (StatusCode, Value) {
    call(app, "POST", &format!("/sessions/{id}/messages"), Some(msg)).await
}

async fn run_to_confirmation(app: &Router, id: &str) {
    let start = (chrono::Utc::now().date_naive() + chrono::Days::new(7)).to_string();
    for (msg, stage) in [
        (json!({ "action": "text", "text": "" }), "Q2_Alternatives"),
        (json!({ "action": "text", "text": "Which catalog bundles would cover this event?" }), "Q2_Alternatives"),
        (json!({ "action": "select", "index": 0 }), "Q4_Temporal"),
        (json!({ "action": "temporal", "startDate": start, "durationDays": 7 }), "Q5_Confirmation"),
        (json!({ "action": "text", "text": "Show me the final order with its total cost." }), "Q5_Confirmation"),
    ] {
        let (status, v) = say(app, id, msg.clone()).await;
        assert_eq!(status, StatusCode::OK, "{msg}: {v}");
        assert_eq!(v["stage"], stage, "{msg}");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn oracle_session_places_one_order() {
    let app = app();
    let id = open(&app, "http-oracle").await;
    run_to_confirmation(&app, &id).await;
    let (status, v) = say(&app, &id, json!({ "action": "confirm" })).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["stage"], "Confirmed");
    let (_, orders) = call(&app, "GET", "/orders", None).await;
    assert_eq!(orders["orders"].as_array().unwrap().len(), 1);
    let (_, again) = say(&app, &id, json!({ "action": "confirm" })).await;
    assert!(again["error"].is_string());
    let (_, orders) = call(&app, "GET", "/orders", None).await;
    assert_eq!(orders["orders"].as_array().unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn confirm_before_the_last_stage_conflicts() {
    let app = app();
    let id = open(&app, "early").await;
    say(&app, &id, json!({ "action": "text", "text": "" })).await;
    let (status, v) = say(&app, &id, json!({ "action": "confirm" })).await;
    assert_eq!(status, StatusCode::CONFLICT, "{v}");
    assert_eq!(v["schemaVersion"], API_SCHEMA_VERSION);
    let (_, orders) = call(&app, "GET", "/orders", None).await;
    assert!(orders["orders"].as_array().unwrap().is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn errors_map_to_status_codes() {
    let app = app();
    assert_eq!(call(&app, "GET", "/sessions/nope", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(say(&app, "nope", json!({ "action": "confirm" })).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/no/such/route", None).await.0, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/sessions", Some(json!({ "intentText": " " }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/sessions", Some(json!({ "intentText": "x", "backend": "gpt" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/sessions", Some(json!({ "intent": "x" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    open(&app, "dup").await;
    let (s, _) = call(&app, "POST", "/sessions", Some(json!({ "intentText": INTENT, "sessionId": "dup" }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = say(&app, "dup", json!({ "action": "dance" })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = say(&app, "dup", json!({ "action": "select", "index": 0, "bundle": [] })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = say(&app, "dup", json!({ "action": "select", "index": 0 })).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn delete_aborts_and_further_messages_conflict() {
    let app = app();
    let id = open(&app, "gone").await;
    let (s, v) = call(&app, "DELETE", &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["stage"], "Aborted");
    let (s, _) = say(&app, &id, json!({ "action": "text", "text": "hello" })).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn backend_failure_is_reported_with_the_session() {
    let app = app();
    let body = json!({ "intentText": INTENT, "backend": "scripted:deepseek-r1:32b", "sessionId": "ds" });
    assert_eq!(call(&app, "POST", "/sessions", Some(body)).await.0, StatusCode::CREATED);
    let mut last = Value::Null;
    for msg in [json!({ "action": "text", "text": "" }), json!({ "action": "text", "text": "bundles?" })] {
        let (s, v) = say(&app, "ds", msg).await;
        last = v;
        if last["stage"] == "Aborted" {
            assert_eq!(s, StatusCode::OK);
            break;
        }
    }
    assert_eq!(last["stage"], "Aborted", "{last}");
    assert!(last["error"].is_string());
    assert_eq!(last["session"]["failure"], "ToolCallingUnsupported");
}

#[tokio::test(flavor = "multi_thread")]
async fn event_stream_replays_history_and_ends_after_the_order() {
    let app = app();
    let id = open(&app, "sse").await;
    run_to_confirmation(&app, &id).await;
    say(&app, &id, json!({ "action": "confirm" })).await;
    let req = Request::builder().uri(format!("/sessions/{id}/events")).body(Body::empty()).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    assert!(res.headers()["content-type"].to_str().unwrap().starts_with("text/event-stream"));
    let body = tokio::time::timeout(Duration::from_secs(5), res.into_body().collect()).await.unwrap().unwrap();
    let text = String::from_utf8(body.to_bytes().to_vec()).unwrap();
    let names: Vec<&str> = text.lines().filter_map(|l| l.strip_prefix("event: ")).collect();
    assert_eq!(names.first(), Some(&"StageChanged"));
    assert_eq!(names.last(), Some(&"OrderPlaced"));
    assert!(names.contains(&"ProposalAdded") && names.contains(&"DraftReady"));
    let ids: Vec<u64> = text.lines().filter_map(|l| l.strip_prefix("id: ")).map(|s| s.parse().unwrap()).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
    let data: Value = serde_json::from_str(text.lines().find_map(|l| l.strip_prefix("data: ")).unwrap()).unwrap();
    assert_eq!(data["schemaVersion"], API_SCHEMA_VERSION);
}

#[tokio::test(flavor = "multi_thread")]
async fn live_events_reach_an_open_stream() {
    let app = app();
    let id = open(&app, "live").await;
    let req = Request::builder().uri(format!("/sessions/{id}/events")).body(Body::empty()).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let reader = tokio::spawn(async move { res.into_body().collect().await.unwrap().to_bytes() });
    tokio::time::sleep(Duration::from_millis(50)).await;
    call(&app, "DELETE", &format!("/sessions/{id}"), None).await;
    let bytes = tokio::time::timeout(Duration::from_secs(5), reader).await.unwrap().unwrap();
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    assert!(text.contains("event: Aborted"), "{text}");
}

#[tokio::test(flavor = "multi_thread")]
async fn idle_sessions_are_swept() {
    let layer = ConfigLayer { per_turn_timeout: Some(1), ..ConfigLayer::default() };
    let (app, state) = app_with(layer);
    let id = open(&app, "idle").await;
    assert_eq!(state.sweep_idle(), 0);
    tokio::time::sleep(Duration::from_millis(1100)).await;
    assert_eq!(tokio::task::spawn_blocking(move || state.sweep_idle()).await.unwrap(), 1);
    let (_, v) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(v["stage"], "Aborted");
    assert_eq!(v["session"]["failure"], "Timeout");
}

#[tokio::test(flavor = "multi_thread")]
async fn catalog_and_cors() {
    let (app, _) = app_with(ConfigLayer { cors_allow_list: Some(vec!["http://ui.local".into()]), ..ConfigLayer::default() });
    let (s, v) = call(&app, "GET", "/catalog/offerings", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["offerings"].as_array().unwrap().len(), 9);
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/sessions")
        .header("origin", "http://ui.local")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    assert_eq!(res.headers()["access-control-allow-origin"], "http://ui.local");
}

#[tokio::test(flavor = "multi_thread")]
async fn data_dir_persists_orders() {
    let dir = tempfile::tempdir().unwrap();
    let layer = || ConfigLayer { data_dir: Some(dir.path().to_path_buf()), ..ConfigLayer::default() };
    let (app, _) = app_with(layer());
    let id = open(&app, "kept").await;
    run_to_confirmation(&app, &id).await;
    say(&app, &id, json!({ "action": "confirm" })).await;
    assert!(dir.path().join("orders.jsonl").is_file());
    let (app2, _) = app_with(layer());
    let (_, orders) = call(&app2, "GET", "/orders", None).await;
    assert_eq!(orders["orders"].as_array().unwrap().len(), 1);
}
