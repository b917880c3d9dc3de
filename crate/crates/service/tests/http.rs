use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mechkb_core::embed::FallbackEmbedder;
use mechkb_core::index::{build_index, BuildOptions};
use mechkb_core::normalize::NormalizationConfig;
use mechkb_core::schema::{EntitySurface, MechanismRelation, Provenance, RelationClass};
use mechkb_core::Index;
use mechkb_service::{app, ServiceError, ServiceState, SharedProvider};
use serde_json::Value;
use tower::ServiceExt;

const DIM: usize = 64;

fn rel(a1: &str, a2: &str, class: RelationClass, conf: f64, idx: u32) -> MechanismRelation {
    let cfg = NormalizationConfig::default();
    MechanismRelation::new(
        EntitySurface::new(a1, &cfg).unwrap(),
        EntitySurface::new(a2, &cfg).unwrap(),
        class,
        conf,
        Provenance {
            doc_id: format!("doc{}", idx / 3),
            sentence: format!("{a1} and {a2}."),
            title: format!("Paper {}", idx / 3),
            url: format!("https://example.org/{}", idx / 3),
            sentence_index: idx,
        },
    )
    .unwrap()
}

fn fixture() -> Vec<MechanismRelation> {
    use RelationClass::*;
    let mut rels = vec![
        rel("warmer climates", "coronavirus", Indirect, 0.95, 0),
        rel("microscope", "coronavirus", Indirect, 0.97, 1),
        rel("warm climate", "coronavirus", Direct, 0.99, 2),
        rel("humidity", "covid-19", Indirect, 0.92, 3),
        rel("reinforcement learning", "robot control", Direct, 0.93, 4),
        rel("reinforcement learning", "game playing", Indirect, 0.91, 5),
        rel("deep reinforcement learning", "navigation", Direct, 0.96, 6),
        rel("ivermectin", "covid-19", Indirect, 0.9, 7),
        rel("low confidence", "coronavirus", Indirect, 0.5, 8),
    ];
    for i in 0..1200 {
        rels.push(rel(&format!("filler {i}"), "coronavirus", Indirect, 0.95, 100 + i));
    }
    rels
}

fn index() -> Index {
    build_index(fixture(), &FallbackEmbedder::new(DIM), &BuildOptions::default()).unwrap()
}

fn provider() -> SharedProvider {
    Arc::new(FallbackEmbedder::new(DIM))
}

fn loaded() -> Router {
    let state = ServiceState::new();
    state.install(index(), provider()).unwrap();
    app(state)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let res = app
        .clone()
        .oneshot(Request::get(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn scores(body: &Value) -> Vec<f64> {
    body["results"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["score"].as_f64().unwrap())
        .collect()
}

#[tokio::test]
async fn health_flips_after_install() {
    let state = ServiceState::new();
    let app = app(state.clone());
    let (status, body) = get(&app, "/health").await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"]["code"], "index_not_loaded");
    let (status, _) = get(&app, "/search?e1=x").await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);

    let idx = index();
    let counts = serde_json::to_value(&idx.manifest().counts).unwrap();
    state.install(idx, provider()).unwrap();
    let (status, body) = get(&app, "/health").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["provider"], "fallback");
    assert_eq!(body["counts"], counts);
    assert!(matches!(
        state.install(index(), provider()),
        Err(ServiceError::AlreadyLoaded)
    ));
}

#[tokio::test]
async fn install_rejects_foreign_provider() {
    let state = ServiceState::new();
    let err = state
        .install(index(), Arc::new(FallbackEmbedder::new(DIM * 2)))
        .unwrap_err();
    assert!(matches!(err, ServiceError::Index(_)));
    assert!(!state.is_ready());
}

#[tokio::test]
async fn warm_climate_query() {
    let app = loaded();
    let (status, body) =
        get(&app, "/search?e1=warm+climate&e2=coronavirus&class=indirect&k=20").await;
    assert_eq!(status, StatusCode::OK);
    let results = body["results"].as_array().unwrap();
    assert!(!results.is_empty() && results.len() <= 20);
    assert!(results.iter().all(|r| r["class"] == "INDIRECT"));
    assert!(results.iter().all(|r| r["confidence"].as_f64().unwrap() >= 0.9));
    let s = scores(&body);
    assert!(s.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(results[0]["arg1"], "warmer climates");
    assert_eq!(results[0]["title"], "Paper 0");
    assert_eq!(results[0]["url"], "https://example.org/0");
    assert_eq!(results[0]["relation_id"].as_str().unwrap().len(), 16);
    let pos = |name: &str| results.iter().position(|r| r["arg1"] == name);
    if let Some(m) = pos("microscope") {
        assert!(pos("warmer climates").unwrap() < m);
    }
    assert!(body["took_ms"].is_u64());
    assert!(body["total_scanned"].as_u64().unwrap() > 0);
}

#[tokio::test]
async fn one_sided_direct_query() {
    let app = loaded();
    let (status, body) = get(&app, "/search?e1=reinforcement+learning&class=direct").await;
    assert_eq!(status, StatusCode::OK);
    let results = body["results"].as_array().unwrap();
    assert!(results.iter().all(|r| r["class"] == "DIRECT"));
    assert_eq!(results[0]["arg1"], "reinforcement learning");
    assert_eq!(results[0]["arg2"], "robot control");
}

#[tokio::test]
async fn repeated_alternatives_and_symmetry() {
    let app = loaded();
    let (_, one) = get(&app, "/search?e1=covid-19&e2=ivermectin&k=5").await;
    let (_, sym) = get(&app, "/search?e1=covid-19&e2=ivermectin&k=5&symmetric=true").await;
    assert_eq!(sym["results"][0]["arg1"], "ivermectin");
    assert_eq!(sym["results"][0]["reversed"], true);
    assert!(scores(&sym)[0] > scores(&one)[0]);
    let (status, multi) = get(&app, "/search?e1=ivermectin&e2=sars-cov-2&e2=covid-19&k=3").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(multi["results"][0]["arg2"], "covid-19");
}

#[tokio::test]
async fn invalid_requests_name_the_field() {
    let app = loaded();
    for (uri, field) in [
        ("/search", "e1"),
        ("/search?e2=coronavirus", "e1"),
        ("/search?e1=x&class=causal", "class"),
        ("/search?e1=x&k=0", "k"),
        ("/search?e1=x&k=abc", "k"),
        ("/search?e1=x&min_confidence=2", "min_confidence"),
        ("/search?e1=x&symmetric=perhaps", "symmetric"),
        ("/search?e1=x&offset=99999", "offset"),
        ("/search?e1=...", "e1"),
        ("/search?e1=x&e2=%3F%21", "e2"),
    ] {
        let (status, body) = get(&app, uri).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
        assert_eq!(body["error"]["field"], field, "{uri}");
        assert!(body["error"]["message"].as_str().unwrap().len() > 3);
    }
}

#[tokio::test]
async fn k_is_capped() {
    let app = loaded();
    let (status, body) = get(&app, "/search?e1=filler&e2=coronavirus&k=1000000000").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["results"].as_array().unwrap().len(), 1000);
    assert_eq!(body["k"], 1000);
}

#[tokio::test]
async fn offset_pages_through_results() {
    let app = loaded();
    let (_, all) = get(&app, "/search?e1=filler+1&e2=coronavirus&k=8").await;
    let (_, page) = get(&app, "/search?e1=filler+1&e2=coronavirus&k=3&offset=4").await;
    assert_eq!(page["results"].as_array().unwrap()[..], all["results"].as_array().unwrap()[4..7]);
}

#[tokio::test]
async fn identical_requests_identical_bodies() {
    let app = loaded();
    let uri = "/search?e1=warm+climate&e2=coronavirus&k=50&symmetric=1";
    let (_, mut a) = get(&app, uri).await;
    let (_, mut b) = get(&app, uri).await;
    a["took_ms"] = Value::Null;
    b["took_ms"] = Value::Null;
    assert_eq!(a, b);
}

#[tokio::test]
async fn relation_lookup() {
    let app = loaded();
    let (_, body) = get(&app, "/search?e1=ivermectin&e2=covid-19&k=1").await;
    let id = body["results"][0]["relation_id"].as_str().unwrap().to_string();
    let (status, rel) = get(&app, &format!("/relation/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(rel["relation_id"], id.as_str());
    assert_eq!(rel["arg1"]["raw"], "ivermectin");
    assert_eq!(rel["provenance"]["doc_id"], "doc2");

    let (status, body) = get(&app, "/relation/0000000000000001").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "not_found");
    let (status, body) = get(&app, "/relation/not-hex").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["field"], "id");
}

#[tokio::test]
async fn cors_and_unknown_routes() {
    let app = loaded();
    let res = app
        .clone()
        .oneshot(
            Request::get("/health")
                .header(header::ORIGIN, "http://localhost:5173")
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    assert_eq!(res.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");
    let (status, body) = get(&app, "/nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "not_found");
}
