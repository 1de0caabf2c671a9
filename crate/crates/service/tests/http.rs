use std::collections::HashSet;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use ecbw_core::session_engine::{EngineConfig, ManualClock, Phase, SessionEngine, Submission};
use ecbw_core::{IdeaStore, SelectionStrategy, StoreConfig};
use ecbw_service::api::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app_with(engine: SessionEngine, allowlist: Option<HashSet<u32>>) -> (Router, Arc<AppState>) {
    let state = Arc::new(AppState {
        engine: Arc::new(engine),
        topic: "Meeting colleagues from other departments".into(),
        instructions: "Vote, then write.".into(),
        allowlist,
    });
    (router(state.clone()), state)
}

fn fresh(config: StoreConfig) -> SessionEngine {
    SessionEngine::new(IdeaStore::new(config).unwrap(), EngineConfig::new(SelectionStrategy::Ecbw, 3))
}

/// Twelve families of three unpresented ideas each.
fn grown_store() -> IdeaStore {
    let mut store = IdeaStore::new(StoreConfig::default()).unwrap();
    for p in 1..=12 {
        store.append_initial(format!("root {p}"), p).unwrap();
    }
    for f in 1..=12 {
        for k in 0..2 {
            store.append_offspring(format!("child {f}.{k}"), 20 + f, f).unwrap();
        }
    }
    store
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| panic!("non-JSON body: {bytes:?}"));
    (status, value)
}

async fn login(app: &Router, p: i64) -> (StatusCode, Value) {
    call(app, "POST", "/api/login", Some(&json!({ "participant_no": p }).to_string())).await
}

async fn submit(app: &Router, body: Value) -> (StatusCode, Value) {
    call(app, "POST", "/api/submit", Some(&body.to_string())).await
}

fn initial_ideas(session: &Value) -> Value {
    json!({ "session_id": session["session_id"], "votes": [], "ideas": [[0, "a"], [1, "b"], [2, "c"]] })
}

fn assert_error_shape(body: &Value) {
    assert!(body["code"].is_string() && body["message"].is_string(), "{body}");
}

#[tokio::test]
async fn status_login_and_initial_submit() {
    let (app, _) = app_with(fresh(StoreConfig::default()), None);
    let (code, status) = call(&app, "GET", "/api/status", None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(status, json!({ "n": 0, "N": 210, "N_f": 12, "terminated": false, "strategy": "ECBW" }));

    let (code, session) = login(&app, 1).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(session["phase"], "INITIAL");
    assert_eq!(session["grid"], json!([]));
    assert_eq!(session["entry_slots"], 3);
    assert_eq!(session["topic"], "Meeting colleagues from other departments");

    let (code, body) = submit(&app, initial_ideas(&session)).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(body, json!({ "n": 3, "terminated": false }));
    assert_eq!(call(&app, "GET", "/api/status", None).await.1["n"], 3);

    let (code, body) = submit(&app, initial_ideas(&session)).await;
    assert_eq!(code, StatusCode::CONFLICT);
    assert_eq!(body["code"], "already_committed");
}

#[tokio::test]
async fn bad_logins() {
    let (app, _) = app_with(fresh(StoreConfig::default()), Some(HashSet::from([1, 2])));
    for p in [0, -4] {
        let (code, body) = login(&app, p).await;
        assert_eq!(code, StatusCode::BAD_REQUEST);
        assert_error_shape(&body);
    }
    let (code, body) = call(&app, "POST", "/api/login", Some("{\"participant\":")).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert_error_shape(&body);
    let (code, body) = login(&app, 3).await;
    assert_eq!(code, StatusCode::FORBIDDEN);
    assert_eq!(body["code"], "not_allowed");
    assert_eq!(login(&app, 2).await.0, StatusCode::OK);
    let (code, body) = call(&app, "GET", "/api/nothing", None).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    assert_error_shape(&body);
}

#[tokio::test]
async fn stimulus_grid_and_votes() {
    let engine = SessionEngine::new(grown_store(), EngineConfig::new(SelectionStrategy::Ecbw, 9));
    let (app, state) = app_with(engine, None);
    let (code, session) = login(&app, 99).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(session["phase"], "STIMULUS");
    let grid = session["grid"].as_array().unwrap();
    assert_eq!(grid.len(), 3);
    let snapshot = state.engine.snapshot();
    for col in grid {
        let cells = col["cells"].as_array().unwrap();
        assert_eq!(cells.len(), 3);
        for cell in cells {
            let record = snapshot.get(cell["idea_id"].as_u64().unwrap() as u32).unwrap();
            assert_eq!(cell["text"], record.text.as_str());
            assert_eq!(col["family_no"], record.family_no);
        }
    }
    let body = json!({
        "session_id": session["session_id"],
        "votes": [[0, 0], [0, 2], [1, 1], [2, 0]],
        "ideas": [[0, "x"], [1, "y"], [2, "z"]],
    });
    let (code, resp) = submit(&app, body).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(resp, json!({ "n": 39, "terminated": false }));
    let store = state.engine.snapshot();
    assert_eq!(store.records().iter().map(|r| r.score).sum::<u32>(), 4);
    assert_eq!(store.records().iter().map(|r| r.presentations).sum::<u32>(), 9);
}

#[tokio::test]
async fn invalid_submissions() {
    let mut store = IdeaStore::new(StoreConfig::default()).unwrap();
    for p in 1..=12 {
        store.append_initial(format!("root {p}"), p).unwrap();
    }
    let (app, _) = app_with(SessionEngine::new(store, EngineConfig::new(SelectionStrategy::Ecbw, 1)), None);
    let (_, session) = login(&app, 50).await;
    // one idea per family, so row 1 is empty
    let (code, body) = submit(&app, json!({ "session_id": session["session_id"], "votes": [[0, 1]], "ideas": [] })).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "invalid_submission");
    let (code, _) = submit(&app, json!({ "session_id": session["session_id"], "ideas": [[0, "a"], [0, "b"]] })).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    let (code, body) = call(&app, "POST", "/api/submit", Some("{\"votes\": 3}")).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error_shape(&body);
    // the session survives rejected submissions
    let (code, _) = submit(&app, json!({ "session_id": session["session_id"], "votes": [[0, 0]] })).await;
    assert_eq!(code, StatusCode::OK);

    let (code, body) = submit(&app, json!({ "session_id": "no-such-session" })).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "unknown_session");
}

#[tokio::test]
async fn terminated_store_refuses_login() {
    let (app, _) = app_with(fresh(StoreConfig::with_sizes(12, 12)), None);
    for p in 1..=4 {
        let (_, session) = login(&app, p).await;
        let (_, body) = submit(&app, initial_ideas(&session)).await;
        assert_eq!(body["terminated"], p == 4);
    }
    let (code, body) = login(&app, 5).await;
    assert_eq!(code, StatusCode::CONFLICT);
    assert_eq!(body["code"], "terminated");
    assert_eq!(body["status"]["terminated"], true);
    assert_eq!(body["status"]["n"], 12);
    assert_eq!(call(&app, "GET", "/api/status", None).await.1["terminated"], true);
}

#[tokio::test]
async fn expired_session_is_gone() {
    let clock = Arc::new(ManualClock::default());
    let engine = fresh(StoreConfig::default()).with_clock(clock.clone());
    let (app, _) = app_with(engine, None);
    let (_, session) = login(&app, 1).await;
    clock.advance(Duration::from_secs(61 * 60));
    let (code, body) = submit(&app, initial_ideas(&session)).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "session_expired");
    assert_eq!(call(&app, "GET", "/api/status", None).await.1["n"], 0);
}

/// A fixed request script, run once over HTTP and once against the engine.
#[tokio::test]
async fn http_layer_adds_no_behavior() {
    let config = StoreConfig::with_sizes(60, 12);
    let (app, state) = app_with(
        SessionEngine::new(IdeaStore::new(config).unwrap(), EngineConfig::new(SelectionStrategy::Ecbw, 21)),
        None,
    );
    let direct = SessionEngine::new(IdeaStore::new(config).unwrap(), EngineConfig::new(SelectionStrategy::Ecbw, 21));

    for k in 0..25u32 {
        let p = k % 7 + 1;
        let (code, view) = login(&app, p as i64).await;
        let session = direct.login(p);
        if code == StatusCode::CONFLICT {
            assert!(session.is_err());
            break;
        }
        let session = session.unwrap();
        let votes: Vec<(usize, usize)> = match &session.grid {
            Some(g) => g
                .columns
                .iter()
                .enumerate()
                .flat_map(|(c, col)| (0..col.cells.len()).map(move |r| (c, r)))
                .filter(|&(c, r)| (c + r + k as usize) % 3 == 0)
                .collect(),
            None => vec![],
        };
        let ideas: Vec<(usize, String)> = (0..3).map(|c| (c, format!("idea {k}.{c}"))).collect();
        if k % 5 == 4 {
            // abandoned session: never submitted
            continue;
        }
        let (code, _) = submit(&app, json!({ "session_id": view["session_id"], "votes": votes, "ideas": ideas })).await;
        assert_eq!(code, StatusCode::OK);
        direct.commit(&session.id, &Submission { voted_cells: votes, new_ideas: ideas }).unwrap();
        assert_eq!(view["phase"] == "INITIAL", session.phase == Phase::Initial);
    }
    assert_eq!(state.engine.snapshot().to_log_string(), direct.snapshot().to_log_string());
}
