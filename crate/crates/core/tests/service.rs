use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use reliance_aid::config::SessionConfig;
use reliance_aid::service::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

fn small_base() -> SessionConfig {
    let mut c = SessionConfig {
        games_per_operator: 2,
        trials_per_game: 3,
        abc_update_interval_games: 1,
        bank_size: 10,
        ..SessionConfig::default()
    };
    c.abc.accepted_target = 50;
    c.abc.batch_size = 500;
    c.abc.max_batches = 2;
    c
}

fn app(dir: Option<&std::path::Path>) -> Router {
    router(AppState::new(small_base(), dir.map(Into::into)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn create(app: &Router) -> String {
    let (status, body) = call(app, "POST", "/api/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["id"].as_str().unwrap().to_owned()
}

#[tokio::test]
async fn healthz_answers() {
    let (status, body) = call(&app(None), "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
}

#[tokio::test]
async fn create_returns_awaiting_initial_with_game() {
    let app = app(None);
    let (status, body) = call(&app, "POST", "/api/sessions", Some(json!({}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["state"], "awaiting-initial");
    assert_eq!(body["trials_per_game"], 3);
    assert_eq!(body["game"]["trial"], 0);
    assert_eq!(body["game"]["options"].as_array().unwrap().len(), 2);
    assert!(body["suggestion"].is_null());
}

#[tokio::test]
async fn sessions_get_distinct_ids() {
    let app = app(None);
    let a = create(&app).await;
    let b = create(&app).await;
    assert_ne!(a, b);
}

#[tokio::test]
async fn overrides_apply_and_invalid_values_are_422() {
    let app = app(None);
    let (status, body) = call(&app, "POST", "/api/sessions", Some(json!({"trials_per_game": 4}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["trials_per_game"], 4);

    let (status, body) = call(&app, "POST", "/api/sessions", Some(json!({"config": {"trials_per_game": 0}}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let fields = body["fields"].as_array().unwrap();
    assert!(fields.iter().any(|f| f["field"] == "trials_per_game"), "{body}");

    let (status, body) = call(&app, "POST", "/api/sessions", Some(json!({"no_such_knob": 1}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["fields"][0]["field"], "no_such_knob");

    let (status, _) = call(&app, "POST", "/api/sessions", Some(json!([1, 2]))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn full_session_flow() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(Some(dir.path()));
    let id = create(&app).await;
    let base = format!("/api/sessions/{id}");

    let mut trials = 0;
    loop {
        let (status, s) = call(&app, "POST", &format!("{base}/initial"), Some(json!({"selection": "B"}))).await;
        assert_eq!(status, StatusCode::OK, "{s}");
        let suggestion = s["suggestion"].as_str().unwrap().to_owned();
        assert_eq!(s["agrees"], suggestion == "B");

        let (_, view) = call(&app, "GET", &base, None).await;
        assert_eq!(view["state"], "awaiting-final");
        assert_eq!(view["initial"], "B");
        assert_eq!(view["suggestion"], suggestion.as_str());

        let (status, f) = call(&app, "POST", &format!("{base}/final"), Some(json!({"final": suggestion}))).await;
        assert_eq!(status, StatusCode::OK, "{f}");
        trials += 1;
        assert_eq!(f["summary"]["trials"], trials);
        if f["state"] == "finished" {
            assert!(f["next"].is_null());
            break;
        }
    }
    assert_eq!(trials, 6);

    let (status, trace) = call(&app, "GET", &format!("{base}/trace"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(trace["id"], id.as_str());
    assert_eq!(trace["records"].as_array().unwrap().len(), 6);

    // Finished sessions accept no more input.
    let (status, _) = call(&app, "POST", &format!("{base}/initial"), Some(json!({"selection": "A"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let transcript = std::fs::read_to_string(dir.path().join(format!("{id}.jsonl"))).unwrap();
    let trial_lines = transcript.lines().filter(|l| l.contains("\"kind\":\"trial\"")).count();
    assert_eq!(trial_lines, 6);
}

#[tokio::test]
async fn out_of_order_calls_are_409() {
    let app = app(None);
    let id = create(&app).await;
    let base = format!("/api/sessions/{id}");
    let (status, _) = call(&app, "POST", &format!("{base}/final"), Some(json!({"final": "A"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, "POST", &format!("{base}/initial"), Some(json!({"selection": "A"}))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = call(&app, "POST", &format!("{base}/initial"), Some(json!({"selection": "A"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].is_string());
}

#[tokio::test]
async fn bad_selection_is_422() {
    let app = app(None);
    let id = create(&app).await;
    let uri = format!("/api/sessions/{id}/initial");
    for body in [json!({"selection": "C"}), json!({"selection": 1}), json!({})] {
        let (status, resp) = call(&app, "POST", &uri, Some(body)).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(resp["fields"][0]["field"], "selection");
    }
}

#[tokio::test]
async fn unknown_session_is_404() {
    let app = app(None);
    for (method, path) in [("GET", ""), ("GET", "/trace"), ("POST", "/initial"), ("POST", "/final")] {
        let body = (method == "POST").then(|| json!({"selection": "A", "final": "A"}));
        let (status, _) = call(&app, method, &format!("/api/sessions/nope{path}"), body).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{method} {path}");
    }
}
