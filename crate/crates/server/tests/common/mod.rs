#![allow(dead_code)]

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use jsonschema::JSONSchema;
use kgmem_core::graph::MemoryGraph;
use kgmem_core::pipeline::MemoryEngine;
use kgmem_server::{providers, router, AppState, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

pub fn mock_config() -> ServiceConfig {
    ServiceConfig {
        mock_providers: true,
        ..Default::default()
    }
}

pub fn state_with(cfg: ServiceConfig, graph: MemoryGraph) -> Arc<AppState> {
    let engine = MemoryEngine::new(providers::build(&cfg).unwrap(), cfg.engine());
    Arc::new(AppState::new(cfg, engine, graph))
}

pub fn app() -> (Router, Arc<AppState>) {
    let state = state_with(mock_config(), MemoryGraph::new(64));
    (router(state.clone()), state)
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| {
            panic!(
                "non-JSON body ({e}): {}",
                String::from_utf8_lossy(&self.body)
            )
        })
    }

    pub fn text(&self) -> String {
        String::from_utf8(self.body.clone()).unwrap()
    }
}

pub async fn call(app: &Router, method: &str, path: &str, body: impl Into<Body>) -> Reply {
    let req = Request::builder()
        .method(method)
        .uri(path)
        .header("content-type", "application/json")
        .body(body.into())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let content_type = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let body = to_bytes(resp.into_body(), usize::MAX)
        .await
        .unwrap()
        .to_vec();
    Reply {
        status,
        content_type,
        body,
    }
}

pub async fn get(app: &Router, path: &str) -> Reply {
    call(app, "GET", path, Body::empty()).await
}

pub async fn post(app: &Router, path: &str, body: &Value) -> Reply {
    call(app, "POST", path, serde_json::to_vec(body).unwrap()).await
}

pub const SCHEMAS: &str = include_str!("../schemas/service.json");

pub fn schema(name: &str) -> JSONSchema {
    let mut doc: Value = serde_json::from_str(SCHEMAS).unwrap();
    assert!(doc["$defs"].get(name).is_some(), "no schema {name}");
    doc["$ref"] = json!(format!("#/$defs/{name}"));
    JSONSchema::compile(&doc).unwrap_or_else(|e| panic!("schema {name}: {e}"))
}

#[track_caller]
pub fn conforms(name: &str, value: &Value) {
    let s = schema(name);
    let msgs: Vec<String> = match s.validate(value) {
        Ok(()) => return,
        Err(errors) => errors
            .map(|e| format!("{} at {}", e, e.instance_path))
            .collect(),
    };
    panic!("{name} violated:\n{}\n{value:#}", msgs.join("\n"));
}

#[track_caller]
pub fn is_error(r: &Reply, status: StatusCode, code: &str) -> Value {
    assert_eq!(r.status, status, "{}", r.text());
    assert!(
        r.content_type.starts_with("application/json"),
        "{}",
        r.content_type
    );
    let body = r.json();
    conforms("error", &body);
    assert_eq!(body["code"], code, "{body}");
    body
}

/// Drive every endpoint through one success and one failure on a fresh
/// mock-provider service, checking each body against its schema.
pub async fn endpoint_sweep() {
    use kgmem_core::fixtures::{booking_trajectory, BOOKING_QUERY};
    let (app, _) = app();
    let r = get(&app, "/healthz").await;
    assert_eq!(r.status, StatusCode::OK);
    conforms("healthz", &r.json());
    is_error(
        &get(&app, "/nowhere").await,
        StatusCode::NOT_FOUND,
        "not_found",
    );

    let r = post(&app, "/retrieve", &json!({"query": "anything"})).await;
    assert_eq!(r.status, StatusCode::OK);
    conforms("retrieve_response", &r.json());

    let trajectory = serde_json::to_value(booking_trajectory()).unwrap();
    let r = post(&app, "/memories", &trajectory).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    conforms("ingest_report", &r.json());
    is_error(
        &call(&app, "POST", "/memories", "{").await,
        StatusCode::BAD_REQUEST,
        "invalid_json",
    );
    is_error(
        &post(&app, "/memories", &json!({"goal": "g", "pairs": []})).await,
        StatusCode::BAD_REQUEST,
        "validation",
    );

    let r = post(
        &app,
        "/retrieve",
        &json!({"query": BOOKING_QUERY, "mode": "semantic"}),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK);
    let body = r.json();
    conforms("retrieve_response", &body);
    is_error(
        &post(&app, "/retrieve", &json!({"query": ""})).await,
        StatusCode::BAD_REQUEST,
        "validation",
    );

    let id = body["request_id"].as_str().unwrap();
    let r = get(&app, &format!("/debug/hop-trace/{id}")).await;
    assert_eq!(r.status, StatusCode::OK);
    conforms("hop_trace", &r.json());
    is_error(
        &get(&app, "/debug/hop-trace/missing").await,
        StatusCode::NOT_FOUND,
        "not_found",
    );

    let r = post(&app, "/maintenance/update", &json!({"tau": 0.0})).await;
    assert_eq!(r.status, StatusCode::OK);
    conforms("update_report", &r.json());
    is_error(
        &post(&app, "/maintenance/update", &json!({"m": 0})).await,
        StatusCode::BAD_REQUEST,
        "validation",
    );

    let r = post(&app, "/memories/delete", &json!({"ids": ["1"]})).await;
    assert_eq!(r.status, StatusCode::OK);
    conforms("delete_report", &r.json());
    is_error(
        &post(&app, "/memories/delete", &json!({})).await,
        StatusCode::BAD_REQUEST,
        "invalid_json",
    );
    is_error(
        &post(
            &app,
            "/memories/delete",
            &json!({"kind": "Concept", "max_return": 2}),
        )
        .await,
        StatusCode::BAD_REQUEST,
        "validation",
    );

    let r = get(&app, "/stats").await;
    assert_eq!(r.status, StatusCode::OK);
    conforms("stats", &r.json());
    is_error(
        &call(&app, "DELETE", "/stats", "").await,
        StatusCode::METHOD_NOT_ALLOWED,
        "method_not_allowed",
    );

    is_error(
        &get(&app, "/eval/summary").await,
        StatusCode::BAD_REQUEST,
        "validation",
    );
    is_error(
        &get(&app, "/eval/sweep.csv").await,
        StatusCode::BAD_REQUEST,
        "validation",
    );
    let records =
        json!([{"id": "a", "p_base": 0.5, "p_mem": 1.0, "memory_tokens": 100, "budget": 64}]);
    let r = post(&app, "/eval/records", &records).await;
    assert_eq!(r.status, StatusCode::OK);
    conforms("eval_ingest", &r.json());
    is_error(
        &post(&app, "/eval/records", &json!([{"id": "b"}])).await,
        StatusCode::BAD_REQUEST,
        "invalid_json",
    );
    let r = get(&app, "/eval/summary").await;
    assert_eq!(r.status, StatusCode::OK);
    conforms("eval_summary", &r.json());
    let r = get(&app, "/eval/sweep.csv").await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(r.content_type.starts_with("text/csv"));
}

pub const STRESS_READERS: usize = 8;

fn without_request_fields(mut v: Value) -> Value {
    let obj = v.as_object_mut().expect("response object");
    obj.remove("request_id");
    obj.remove("timing");
    v
}

/// Race `STRESS_READERS` retrievals against one maintenance request, `rounds`
/// times. Every retrieval must match the response computed on the graph
/// before or after maintenance. Returns how many saw each.
pub async fn snapshot_stress(rounds: usize) -> (usize, usize) {
    use kgmem_core::fixtures::{booking_trajectory, mock_providers, passage_trajectory};
    use kgmem_core::pipeline::{graph_digest, EngineConfig};
    use kgmem_core::retriever::{MemoryMode, RetrievalConfig};

    let engine = MemoryEngine::new(mock_providers(), EngineConfig::default());
    let mut before = MemoryGraph::new(64);
    engine.create(&mut before, &booking_trajectory()).unwrap();
    engine.create(&mut before, &passage_trajectory()).unwrap();
    let mut after = before.clone();
    let report = engine.update(&mut after, Some(0.0), Some(2)).unwrap();
    assert!(report.merges_applied > 0);

    let cfg = RetrievalConfig {
        mode_override: Some(MemoryMode::Semantic),
        ..Default::default()
    };
    let query = "Where is Luigi's and who was born in 1943?";
    let expect = |g: &MemoryGraph| -> Value {
        let r = engine
            .retrieve_and_compress(g, query, Some(&cfg), &Default::default(), "")
            .unwrap();
        serde_json::from_str(&r.canonical_json()).unwrap()
    };
    let (pre, post_) = (expect(&before), expect(&after));
    assert_ne!(pre, post_);
    let request = json!({"query": query, "mode": "semantic"});

    let (mut saw_pre, mut saw_post) = (0, 0);
    for round in 0..rounds {
        let state = state_with(mock_config(), before.clone());
        let app = router(state.clone());
        let barrier = Arc::new(tokio::sync::Barrier::new(STRESS_READERS + 1));
        let mut readers = Vec::new();
        for k in 0..STRESS_READERS {
            let (app, barrier, request) = (app.clone(), barrier.clone(), request.clone());
            readers.push(tokio::spawn(async move {
                barrier.wait().await;
                for _ in 0..((round + k) % 4) {
                    tokio::task::yield_now().await;
                }
                post(&app, "/retrieve", &request).await
            }));
        }
        let writer = {
            let (app, barrier) = (app.clone(), barrier.clone());
            tokio::spawn(async move {
                barrier.wait().await;
                for _ in 0..(round % 5) {
                    tokio::task::yield_now().await;
                }
                post(&app, "/maintenance/update", &json!({"tau": 0.0, "m": 2})).await
            })
        };
        for r in readers {
            let r = r.await.unwrap();
            assert_eq!(r.status, StatusCode::OK, "{}", r.text());
            let v = without_request_fields(r.json());
            if v == pre {
                saw_pre += 1;
            } else if v == post_ {
                saw_post += 1;
            } else {
                panic!("round {round}: torn retrieval\n{v:#}");
            }
        }
        assert_eq!(writer.await.unwrap().status, StatusCode::OK);
        assert_eq!(
            graph_digest(&state.store.snapshot()),
            graph_digest(&after),
            "round {round}"
        );
        let last = post(&app, "/retrieve", &request).await;
        assert_eq!(without_request_fields(last.json()), post_, "round {round}");
    }
    (saw_pre, saw_post)
}
