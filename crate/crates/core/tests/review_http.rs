use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use rapidner::review::{default_type_info, router, ReviewStore};
use rapidner::types::{AnnotatedSentence, EntityType, Sentence};
use serde_json::{json, Value};
use tower::ServiceExt;

fn store(dir: &std::path::Path) -> Arc<ReviewStore> {
    let mut s1 = Sentence::new("doc#0", "I love masala chai");
    s1.entity_type_hint = Some(EntityType::new("DRINK").unwrap());
    let s2 = Sentence::new("doc#1", "Nothing here");
    let annotated: Vec<AnnotatedSentence> = [s1, s2]
        .into_iter()
        .map(|sentence| AnnotatedSentence {
            sentence,
            spans: vec![],
            conflicts: vec![],
        })
        .collect();
    let types = default_type_info(&[EntityType::new("DRINK").unwrap()]);
    Arc::new(ReviewStore::init(&annotated, types, &dir.join("review.journal"), false).unwrap())
}

async fn call(
    app: &axum::Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes)
            .unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

#[tokio::test]
async fn list_accept_and_progress() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(store(dir.path()), None);

    let (st, page) = call(&app, "GET", "/api/sentences?status=PENDING", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(page["total"], 2);
    let ids: Vec<&str> = page["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["sent_id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["doc#0", "doc#1"]);

    let (st, rec) = call(
        &app,
        "POST",
        "/api/sentences/doc%231/decision",
        Some(json!({"annotator_id": "ann1", "revision": 0, "action": "accept"})),
    )
    .await;
    assert_eq!(st, StatusCode::OK, "{rec}");
    assert_eq!(rec["status"], "ACCEPTED");

    let (_, rec) = call(&app, "GET", "/api/sentences/doc%231", None).await;
    assert_eq!(rec["status"], "ACCEPTED");
    assert_eq!(rec["revision"], 1);

    let (_, page) = call(&app, "GET", "/api/sentences?type=DRINK&limit=1", None).await;
    assert_eq!(page["total"], 1);

    let (_, progress) = call(&app, "GET", "/api/progress", None).await;
    assert_eq!(progress["by_status"]["ACCEPTED"], 1);
    assert_eq!(progress["by_status"]["PENDING"], 1);

    let (_, types) = call(&app, "GET", "/api/types", None).await;
    assert_eq!(types[0]["name"], "DRINK");
    assert!(types[0]["color"].as_str().unwrap().starts_with('#'));
}

#[tokio::test]
async fn error_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(store(dir.path()), None);
    let add = json!({"annotator_id": "a", "revision": 0, "action": "add_span",
                     "span": {"start": 7, "end": 18, "type": "DRINK"}});
    let (st, rec) = call(
        &app,
        "POST",
        "/api/sentences/doc%230/decision",
        Some(add.clone()),
    )
    .await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(rec["status"], "CORRECTED");
    assert_eq!(rec["current_spans"][0]["origin"], "HUMAN");

    // same revision again: stale
    let (st, body) = call(&app, "POST", "/api/sentences/doc%230/decision", Some(add)).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(body["kind"], "StaleRevision");

    let overlap = json!({"annotator_id": "a", "revision": 1, "action": "add_span",
                         "span": {"start": 14, "end": 18, "type": "DRINK"}});
    let (st, body) = call(
        &app,
        "POST",
        "/api/sentences/doc%230/decision",
        Some(overlap),
    )
    .await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["kind"], "OverlapViolation");

    let (st, _) = call(&app, "GET", "/api/sentences/missing", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn serves_static_ui() {
    let dir = tempfile::tempdir().unwrap();
    let ui = dir.path().join("ui");
    std::fs::create_dir(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<h1>review</h1>").unwrap();
    let app = router(store(dir.path()), Some(&ui));
    let (st, body) = call(&app, "GET", "/index.html", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body, "<h1>review</h1>");
    let (st, _) = call(&app, "GET", "/api/progress", None).await;
    assert_eq!(st, StatusCode::OK);
}
