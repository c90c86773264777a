use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use gapscan_server::{router, AppState, ServerConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app_in(dir: &std::path::Path) -> Router {
    let config = ServerConfig {
        data_dir: dir.to_path_buf(),
        ..ServerConfig::default()
    };
    router(Arc::new(AppState::new(config)))
}

fn app() -> Router {
    app_in(std::path::Path::new("/nonexistent"))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn create(app: &Router, extra: Value) -> u64 {
    let mut body = json!({
        "dataset": {"kind": "uniform", "dim": 3, "rows": 40, "seed": 5},
        "oracle": "quadratic",
    });
    for (k, v) in extra.as_object().unwrap() {
        body[k] = v.clone();
    }
    let (status, v) = call(app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["session_id"].as_u64().unwrap()
}

async fn search(app: &Router, id: u64, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, &format!("/sessions/{id}/search"), Some(body)).await
}

fn pids(v: &Value) -> Vec<u64> {
    v["proposals"].as_array().unwrap().iter().map(|p| p["id"].as_u64().unwrap()).collect()
}

#[tokio::test]
async fn health_and_description() {
    let app = app();
    let (s, v) = call(&app, Method::GET, "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    let (s, v) = call(&app, Method::GET, "/openapi.json", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["paths"]["/sessions/{id}/verify"].is_object());
}

#[tokio::test]
async fn create_validates_input() {
    let app = app();
    let base = json!({"dataset": {"kind": "uniform", "dim": 2, "rows": 30}, "oracle": "quadratic"});

    let mut bad = base.clone();
    bad["t1"] = json!(10.0);
    bad["t2"] = json!(20.0);
    let (s, v) = call(&app, Method::POST, "/sessions", Some(bad)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");
    assert_eq!(v["error"], "bad_request");

    let mut bad = base.clone();
    bad["dataset"] = json!({"kind": "file", "name": "missing"});
    let (s, _) = call(&app, Method::POST, "/sessions", Some(bad)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let mut bad = base.clone();
    bad["dataset"] = json!({"kind": "file", "name": "../etc/passwd"});
    let (s, _) = call(&app, Method::POST, "/sessions", Some(bad)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let mut bad = base.clone();
    bad["oracle"] = json!("teapot");
    let (s, _) = call(&app, Method::POST, "/sessions", Some(bad)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, v) = call(&app, Method::POST, "/sessions", Some(base)).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["session"]["rows"], 30);
    let (s, _) = call(&app, Method::GET, "/sessions/999", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn search_strategies() {
    let app = app();
    let id = create(&app, json!({})).await;

    let (s, v) = search(&app, id, json!({"strategy": "blank"})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["proposals"].as_array().unwrap().len(), 1);
    assert_eq!(v["proposals"][0]["configuration"]["values"], json!([0.5, 0.5, 0.5]));

    let (s, v) = search(&app, id, json!({"strategy": "esa", "batch_size": 50})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["proposals"].as_array().unwrap().len(), 50);
    assert_eq!(v["dataset_version"], 0);

    let brushed = json!({
        "strategy": "esa",
        "batch_size": 20,
        "brushes": [{"variable": "x0", "lo": 0.6, "hi": 0.9}, {"variable": "x2", "lo": 0.0, "hi": 0.3}],
    });
    let (s, v) = search(&app, id, brushed).await;
    assert_eq!(s, StatusCode::OK);
    for p in v["proposals"].as_array().unwrap() {
        let x = p["configuration"]["values"].as_array().unwrap();
        let x0 = x[0].as_f64().unwrap();
        let x2 = x[2].as_f64().unwrap();
        assert!((0.6..=0.9).contains(&x0) && (0.0..=0.3).contains(&x2), "{x:?}");
    }

    let (s, v) = search(&app, id, json!({"strategy": "teleport"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");
    let (s, _) = search(&app, id, json!({"brushes": [{"variable": "x0", "lo": -0.1, "hi": 0.5}]})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = search(&app, id, json!({"brushes": [{"variable": "nope", "lo": 0.1, "hi": 0.5}]})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (_, v) = call(&app, Method::GET, &format!("/sessions/{id}/proposals"), None).await;
    assert_eq!(v["proposals"].as_array().unwrap().len(), 71);
}

#[tokio::test]
async fn async_search_job() {
    let app = app();
    let id = create(&app, json!({})).await;
    let (s, v) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/search?async=true"),
        Some(json!({"batch_size": 10})),
    )
    .await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let url = v["status_url"].as_str().unwrap().to_string();
    let mut last = Value::Null;
    for _ in 0..200 {
        let (s, v) = call(&app, Method::GET, &url, None).await;
        assert_eq!(s, StatusCode::OK);
        if v["status"] != "running" {
            last = v;
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert_eq!(last["status"], "done", "{last}");
    assert_eq!(last["result"]["proposals"].as_array().unwrap().len(), 10);
    let (s, _) = call(&app, Method::GET, "/jobs/424242", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn verify_budget_cap_and_idempotence() {
    let app = app();
    let id = create(&app, json!({"budget": 5.0})).await;
    let (_, v) = search(&app, id, json!({"strategy": "random-sample", "batch_size": 6})).await;
    let ids = pids(&v);
    let url = format!("/sessions/{id}/verify");
    for &pid in &ids[..5] {
        let (s, v) = call(&app, Method::POST, &url, Some(json!({"pids": [pid]}))).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        assert_eq!(v["verified"].as_array().unwrap().len(), 1);
    }
    let (s, v) = call(&app, Method::POST, &url, Some(json!({"pids": [ids[5]]}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"], "budget_exhausted");

    let (s, v) = call(&app, Method::POST, &url, Some(json!({"pids": [ids[0]]}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["already_verified"], json!([ids[0]]));
    assert_eq!(v["budget_spent"], 5.0);
    assert!(!v["warnings"].as_array().unwrap().is_empty());

    let (_, p) = call(&app, Method::GET, &format!("/sessions/{id}/progress"), None).await;
    assert_eq!(p["budget_spent"], 5.0);
    assert_eq!(p["dataset_version"], 5);
    let (s, _) = call(&app, Method::POST, &url, Some(json!({"pids": [31337]}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn stale_versions_are_rejected() {
    let app = app();
    let id = create(&app, json!({})).await;
    let (_, v) = search(&app, id, json!({"strategy": "random-sample", "batch_size": 3, "expected_version": 0})).await;
    let ids = pids(&v);
    let url = format!("/sessions/{id}/verify");
    let (s, v) = call(&app, Method::POST, &url, Some(json!({"pids": [ids[0]], "expected_version": 0}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["dataset_version"], 1);

    let (s, v) = call(&app, Method::POST, &url, Some(json!({"pids": [ids[1]], "expected_version": 0}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"], "stale_version");
    let (s, _) = call(
        &app,
        Method::PATCH,
        &format!("/sessions/{id}/proposals/{}", ids[1]),
        Some(json!({"deltas": [], "expected_version": 0})),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = search(&app, id, json!({"expected_version": 0})).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn sessions_are_isolated() {
    let app = app();
    let a = create(&app, json!({})).await;
    let b = create(&app, json!({})).await;
    let (_, va) = search(&app, a, json!({"strategy": "random-sample", "batch_size": 4})).await;
    let (_, vb) = search(&app, b, json!({"strategy": "blank"})).await;
    let a_ids = pids(&va);
    call(&app, Method::POST, &format!("/sessions/{a}/verify"), Some(json!({"pids": [a_ids[0], a_ids[1]]}))).await;
    let (_, vb2) = search(&app, b, json!({"strategy": "random-sample", "batch_size": 2})).await;

    let (_, sa) = call(&app, Method::GET, &format!("/sessions/{a}"), None).await;
    let (_, sb) = call(&app, Method::GET, &format!("/sessions/{b}"), None).await;
    assert_eq!(sa["rows"], 42);
    assert_eq!(sa["dataset_version"], 1);
    assert_eq!(sb["rows"], 40);
    assert_eq!(sb["dataset_version"], 0);
    assert_eq!(sb["proposals"], 3);
    assert_eq!(pids(&vb), vec![0]);
    assert_eq!(pids(&vb2), vec![1, 2]);
    let (s, _) = call(&app, Method::POST, &format!("/sessions/{b}/verify"), Some(json!({"pids": [a_ids[3]]}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, _) = call(&app, Method::DELETE, &format!("/sessions/{a}"), None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (s, _) = call(&app, Method::GET, &format!("/sessions/{a}"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, Method::GET, &format!("/sessions/{b}"), None).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn edit_reports_displacement() {
    let app = app();
    let id = create(&app, json!({})).await;
    let (_, v) = search(&app, id, json!({"strategy": "blank"})).await;
    let pid = pids(&v)[0];
    let url = format!("/sessions/{id}/proposals/{pid}");

    let (s, v) = call(&app, Method::PATCH, &url, Some(json!({"deltas": []}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["displacement"], json!([0.0, 0.0]));

    let (_, view) = call(&app, Method::GET, &format!("/sessions/{id}/view"), None).await;
    let loading = view["loading_vectors"][1].as_array().unwrap().clone();
    let (s, v) = call(&app, Method::PATCH, &url, Some(json!({"deltas": [{"variable": "x1", "delta": 0.2}]}))).await;
    assert_eq!(s, StatusCode::OK);
    for k in 0..2 {
        let got = v["displacement"][k].as_f64().unwrap();
        let want = loading[k].as_f64().unwrap() * 0.2;
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
    assert_eq!(v["proposal"]["configuration"]["provenance"], "user-edited");

    let (_, v) = call(&app, Method::PATCH, &url, Some(json!({"deltas": [{"variable": "x2", "delta": -3.0}]}))).await;
    assert_eq!(v["clamped"], json!(["x2"]));
    let (s, _) = call(&app, Method::PATCH, &format!("/sessions/{id}/proposals/777"), Some(json!({}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn view_bundle() {
    let app = app();
    let id = create(&app, json!({"dataset": {"kind": "uniform", "dim": 4, "rows": 150, "seed": 2}})).await;
    let (_, v) = search(&app, id, json!({"strategy": "random-sample", "batch_size": 2})).await;
    let pid = pids(&v)[0];

    let (s, global) = call(&app, Method::GET, &format!("/sessions/{id}/view"), None).await;
    assert_eq!(s, StatusCode::OK, "{global}");
    assert_eq!(global["dataset_version"], 0);
    assert_eq!(global["existing"].as_array().unwrap().len(), 150);
    let grid = &global["density"];
    let sum: f64 = grid["values"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
    let integral = sum * grid["dx"].as_f64().unwrap() * grid["dy"].as_f64().unwrap();
    assert!((integral - 1.0).abs() < 0.02, "{integral}");
    assert_eq!(global["bars"].as_array().unwrap().len(), 4);

    let uri = format!("/sessions/{id}/view?subset=f1:1.6:2&use_global_pca=false&neighbor={pid}&k=11");
    let (s, subset) = call(&app, Method::GET, &uri, None).await;
    assert_eq!(s, StatusCode::OK, "{subset}");
    assert_ne!(subset["scree"], global["scree"]);
    assert_eq!(subset["neighbor"]["embedding"]["points"].as_array().unwrap().len(), 11);

    let (s, _) = call(&app, Method::GET, &format!("/sessions/{id}/view?neighbor=999"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, Method::GET, &format!("/sessions/{id}/view?subset=f1:oops"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn round_and_save_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_in(dir.path());
    let id = create(&app, json!({"t1": 1e6, "t2": 1e-9, "budget": 3.0})).await;
    let (s, r) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/round"),
        Some(json!({"search": {"strategy": "random-sample", "batch_size": 20}, "verify_budget": 10})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert_eq!(r["phase_before"], "developed");
    assert!(r["verified"].as_array().unwrap().len() <= 3);

    let (s, v) = call(&app, Method::POST, &format!("/sessions/{id}/save"), Some(json!({"name": "grown"}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let rows = v["rows"].as_u64().unwrap();
    let (_, list) = call(&app, Method::GET, "/datasets", None).await;
    assert_eq!(list["datasets"], json!(["grown"]));

    let (s, v) = call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({"dataset": {"kind": "file", "name": "grown"}, "oracle": "quadratic"})),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert_eq!(v["session"]["rows"].as_u64().unwrap(), rows);
}
