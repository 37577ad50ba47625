use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use edukg::hitl::HitlService;
use edukg::services::{FixtureKnowledgeBase, KnowledgeFixture, ServiceBundle};
use edukg::weighting::{text_similarity, TestEmbedder};
use edukg::PipelineConfig;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const BFS: &str = "http://dbpedia.org/resource/Breadth-first_search";
const TRAVERSAL: &str = "http://dbpedia.org/resource/Graph_traversal";
const BACKTRACKING: &str = "http://dbpedia.org/resource/Backtracking";

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn knowledge() -> KnowledgeFixture {
    KnowledgeFixture::load(&fixtures().join("knowledge.json")).unwrap()
}

fn app() -> Router {
    let kb = Arc::new(FixtureKnowledgeBase::new(knowledge()));
    let service = HitlService::new(Arc::new(ServiceBundle::fixture(kb)), PipelineConfig::default());
    edukg_service::router(service)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn upload(app: &Router, name: &str) -> String {
    let doc = std::fs::read_to_string(fixtures().join(format!("{name}.glyphs.jsonl"))).unwrap();
    let (status, body) = call(app, Method::POST, "/materials", Some(doc)).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["material_id"].as_str().unwrap().to_string()
}

async fn ready_draft(app: &Router, material: &str, mode: &str) -> String {
    let (status, body) = call(
        app,
        Method::POST,
        &format!("/materials/{material}/drafts?mode={mode}"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    let id = body["id"].as_str().unwrap().to_string();
    for _ in 0..600 {
        let (_, view) = call(app, Method::GET, &format!("/drafts/{id}"), None).await;
        if view["state"] == "ready" {
            return id;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("draft {id} never became ready");
}

fn encode(uri: &str) -> String {
    uri.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

#[tokio::test]
async fn review_flow_end_to_end() {
    let app = app();
    let material = upload(&app, "two_slide").await;
    assert_eq!(material, "graph-algorithms");
    let draft = ready_draft(&app, &material, "bottom-up").await;

    let (status, listed) = call(&app, Method::GET, &format!("/drafts/{draft}/concepts"), None).await;
    assert_eq!(status, StatusCode::OK);
    let version = listed["version"].as_u64().unwrap();
    assert!(listed["concepts"].as_array().unwrap().iter().any(|c| c["uri"] == BFS));

    let (status, body) = call(
        &app,
        Method::DELETE,
        &format!("/drafts/{draft}/concepts/{}?expected_version={version}", encode(BFS)),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let version = body["version"].as_u64().unwrap();

    let add = json!({ "query": BACKTRACKING, "slides": [1], "expected_version": version });
    let (status, body) = call(
        &app,
        Method::POST,
        &format!("/drafts/{draft}/concepts"),
        Some(add.to_string()),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let version = body["version"].as_u64().unwrap();

    let fin = json!({ "expected_version": version }).to_string();
    let (status, body) = call(
        &app,
        Method::POST,
        &format!("/drafts/{draft}/finalize"),
        Some(fin.clone()),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");

    let (status, graph) = call(&app, Method::GET, &format!("/materials/{material}/edukg"), None).await;
    assert_eq!(status, StatusCode::OK);
    let text = graph.to_string();
    assert!(!text.contains(BFS));
    assert!(!text.contains(TRAVERSAL));
    let edge = graph["edges"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["src"] == format!("slide:{material}:1") && e["dst"] == BACKTRACKING)
        .expect("slide 2 edge");

    // hand computation with the test embedder
    let kb = knowledge();
    let abstract_text = kb
        .entities
        .iter()
        .find(|e| e.uri == BACKTRACKING)
        .and_then(|e| e.abstract_text.clone())
        .unwrap();
    let doc = std::fs::read_to_string(fixtures().join("two_slide.glyphs.jsonl")).unwrap();
    let deck = edukg::layout::extract_slides(&edukg::layout::GlyphDocument::parse(&doc).unwrap()).unwrap();
    let w_slide = text_similarity(&TestEmbedder, &abstract_text, &deck.slides()[1].text).unwrap();
    let w_lm = text_similarity(&TestEmbedder, &abstract_text, deck.full_text()).unwrap();
    assert_eq!(edge["importance"].as_f64().unwrap(), w_slide + w_lm);

    let (status, slide) = call(
        &app,
        Method::GET,
        &format!("/materials/{material}/slides/1/edukg?k=3"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert!(slide["concepts"].as_array().unwrap().len() <= 3);

    let (status, body) = call(&app, Method::POST, &format!("/drafts/{draft}/finalize"), Some(fin)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "DRAFT_IMMUTABLE");
}

#[tokio::test]
async fn error_statuses_and_codes() {
    let app = app();
    let (status, body) = call(&app, Method::POST, "/materials", Some("not json".into())).await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("BAD_DOCUMENT"))
    );

    let material = upload(&app, "two_slide").await;
    let doc = std::fs::read_to_string(fixtures().join("two_slide.glyphs.jsonl")).unwrap();
    let (status, body) = call(&app, Method::POST, "/materials", Some(doc)).await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::CONFLICT, Some("DUPLICATE_MATERIAL"))
    );

    let (status, body) = call(&app, Method::GET, &format!("/materials/{material}/edukg"), None).await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::NOT_FOUND, Some("NOT_PUBLISHED"))
    );

    let (status, body) = call(&app, Method::POST, "/materials/nope/drafts", None).await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::NOT_FOUND, Some("UNKNOWN_MATERIAL"))
    );

    let (status, body) = call(
        &app,
        Method::POST,
        &format!("/materials/{material}/drafts?mode=sideways"),
        None,
    )
    .await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("BAD_MODE"))
    );

    let draft = ready_draft(&app, &material, "top-down").await;
    let (status, body) = call(&app, Method::POST, &format!("/materials/{material}/drafts"), None).await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::CONFLICT, Some("CONFLICT_ACTIVE_DRAFT"))
    );

    let (status, body) = call(
        &app,
        Method::POST,
        &format!("/drafts/{draft}/finalize"),
        Some("{}".into()),
    )
    .await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("MISSING_VERSION"))
    );

    let stale = json!({ "expected_version": 7 }).to_string();
    let (status, body) = call(&app, Method::POST, &format!("/drafts/{draft}/finalize"), Some(stale)).await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::CONFLICT, Some("VERSION_CONFLICT"))
    );

    let add = json!({ "query": "zzz qqq", "slides": [0], "expected_version": 1 }).to_string();
    let (status, body) = call(&app, Method::POST, &format!("/drafts/{draft}/concepts"), Some(add)).await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::UNPROCESSABLE_ENTITY, Some("UNRESOLVABLE"))
    );

    let add = json!({ "query": "quicksort", "slides": [9], "expected_version": 1 }).to_string();
    let (status, body) = call(&app, Method::POST, &format!("/drafts/{draft}/concepts"), Some(add)).await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::UNPROCESSABLE_ENTITY, Some("BAD_SLIDE_INDEX"))
    );

    let (status, body) = call(&app, Method::GET, "/drafts/d404", None).await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::NOT_FOUND, Some("UNKNOWN_DRAFT"))
    );
    assert!(body["message"].is_string());
}
