use std::io::Cursor;
use std::sync::Arc;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tower::ServiceExt;

use tablerag_core::answer::AnswerKind;
use tablerag_core::config::{AppConfig, HttpSection};
use tablerag_core::gateway::{
    CompletionProvider, FixtureMap, GenerationParams, MockProvider, PromptRole, PromptText, ProviderError,
};
use tablerag_core::pipeline::{SessionIds, SessionManager};
use tablerag_core::store::synth::SyntheticCorpusSpec;
use tablerag_core::store::{ColumnDef, ScalarType};
use tablerag_core::suite::{write_demo, Suite, SUITE_EPOCH};
use tablerag_core::{Clock, TickClock};
use tablerag_server::api::router;
use tablerag_server::cli;
use tablerag_server::http_provider::{HttpCompletionProvider, HttpProviderError};

struct Bundle {
    dir: tempfile::TempDir,
    suite: Suite,
    config: AppConfig,
}

fn bundle() -> Bundle {
    let dir = tempfile::tempdir().unwrap();
    let suite = write_demo(dir.path(), SyntheticCorpusSpec::scaled(2, 0.2)).unwrap();
    let config = AppConfig::load(&dir.path().join("config.toml")).unwrap();
    Bundle { dir, suite, config }
}

fn manager(config: &AppConfig, provider: Arc<dyn CompletionProvider>) -> Arc<SessionManager> {
    let clock: Arc<dyn Clock> = Arc::new(TickClock::new(Duration::from_millis(1), SUITE_EPOCH));
    let pipeline = config.build_pipeline(provider, clock).unwrap();
    Arc::new(SessionManager::new(Arc::new(pipeline), SessionIds::seeded(5)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => builder
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn open(app: &Router, user: &str) -> String {
    let (status, body) = call(app, "POST", "/session", Some(json!({ "user_id": user }))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn session_and_query_routes() {
    let b = bundle();
    let app = router(manager(&b.config, Arc::new(b.config.mock_provider().unwrap())));

    let (status, body) = call(&app, "GET", "/health", None).await;
    assert_eq!((status, body["status"].as_str()), (StatusCode::OK, Some("ok")));

    let (status, body) = call(&app, "POST", "/session", Some(json!({ "user_id": "nobody" }))).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(body["error"], "unknown_user");

    let id = open(&app, "analyst").await;
    let (status, info) = call(&app, "GET", &format!("/session/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(info["mup"]["user_id"], "analyst");

    let case = b
        .suite
        .cases
        .iter()
        .find(|c| c.user == "analyst" && c.sql.is_some() && c.expected_kind == AnswerKind::Answer)
        .unwrap();
    let (status, reply) = call(
        &app,
        "POST",
        &format!("/session/{id}/query"),
        Some(json!({ "query": case.query })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{reply}");
    assert_eq!(reply["kind"], "answer");
    assert_eq!(reply["answer"].as_str(), case.response.as_deref());
    assert_eq!(reply["llm_calls"], 3);
    assert_eq!(reply["timings"].as_object().unwrap().len(), 5);
    assert!(reply["sql"].is_string());
    assert_eq!(reply["scores"]["s4"], 1);

    let (status, trace) = call(&app, "GET", &format!("/session/{id}/trace/1"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(trace, reply["trace"]);
    let (status, body) = call(&app, "GET", &format!("/session/{id}/trace/7"), None).await;
    assert_eq!(
        (status, body["error"].as_str()),
        (StatusCode::NOT_FOUND, Some("unknown_trace"))
    );

    let (status, body) = call(
        &app,
        "POST",
        &format!("/session/{id}/query"),
        Some(json!({ "query": "  " })),
    )
    .await;
    assert_eq!(
        (status, body["error"].as_str()),
        (StatusCode::BAD_REQUEST, Some("empty_query"))
    );

    let (status, body) = call(&app, "POST", "/session/nope/query", Some(json!({ "query": "hi" }))).await;
    assert_eq!(
        (status, body["error"].as_str()),
        (StatusCode::NOT_FOUND, Some("unknown_session"))
    );

    let (status, body) = call(&app, "DELETE", &format!("/session/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["dropped_staged"], 1);
    let (status, _) = call(&app, "GET", &format!("/session/{id}"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn error_kinds_are_ordinary_replies() {
    let b = bundle();
    let app = router(manager(&b.config, Arc::new(b.config.mock_provider().unwrap())));

    let guest = open(&app, "guest").await;
    let q = "What is the water consumption level for offices in Kenya in 2023?";
    let (status, reply) = call(
        &app,
        "POST",
        &format!("/session/{guest}/query"),
        Some(json!({ "query": q })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(reply["kind"], "access_error");
    assert!(reply["scores"].is_null() && reply["sql"].is_null());

    let analyst = open(&app, "analyst").await;
    let q = "Tell me a joke about penguins.";
    let (_, reply) = call(
        &app,
        "POST",
        &format!("/session/{analyst}/query"),
        Some(json!({ "query": q })),
    )
    .await;
    assert_eq!(reply["kind"], "irrelevant");

    let faq = b
        .suite
        .cases
        .iter()
        .find(|c| c.sql.is_none() && c.expected_kind == AnswerKind::Answer)
        .unwrap();
    let session = open(&app, &faq.user).await;
    let (status, reply) = call(
        &app,
        "POST",
        &format!("/session/{session}/query"),
        Some(json!({ "query": faq.query })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(reply["kind"], "answer");
    assert_eq!(reply["llm_calls"], 2);
    assert!(reply["sql"].is_null());
    assert_eq!(reply["timings"]["sql_gen"], 0);
}

#[tokio::test]
async fn provider_failure_maps_to_bad_gateway() {
    let b = bundle();
    let app = router(manager(&b.config, Arc::new(MockProvider::new(FixtureMap::default()))));
    let id = open(&app, "analyst").await;
    let q = "Which country has the highest water consumption?";
    let (status, body) = call(
        &app,
        "POST",
        &format!("/session/{id}/query"),
        Some(json!({ "query": q })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["error"], "provider_unavailable");
}

/// Serves a fake chat completions endpoint on a background runtime and
/// returns its URL.
fn fake_endpoint() -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let app = Router::new()
                .route(
                    "/v1/chat/completions",
                    post(|headers: axum::http::HeaderMap, Json(body): Json<Value>| async move {
                        if headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()) != Some("Bearer secret") {
                            return (StatusCode::UNAUTHORIZED, Json(json!({})));
                        }
                        let content = format!(
                            "{} | {} | {}",
                            body["model"].as_str().unwrap_or(""),
                            body["max_tokens"],
                            body["messages"][0]["content"].as_str().unwrap_or("")
                        );
                        (
                            StatusCode::OK,
                            Json(json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] })),
                        )
                    }),
                )
                .route("/broken", post(|| async { "not json" }));
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

#[test]
fn http_provider_round_trip() {
    let base = fake_endpoint();
    let section = |path: &str, env: &str| HttpSection {
        endpoint: format!("{base}{path}"),
        model: "m1".into(),
        token_env: env.into(),
    };
    std::env::set_var("TABLERAG_TEST_TOKEN", "secret");
    std::env::set_var("TABLERAG_TEST_BAD_TOKEN", "wrong");
    let prompt = PromptText::new(PromptRole::Answer, "How much water?").unwrap();
    let params = GenerationParams {
        max_output_tokens: 64,
        ..GenerationParams::default()
    };

    let provider =
        HttpCompletionProvider::from_section(&section("/v1/chat/completions", "TABLERAG_TEST_TOKEN")).unwrap();
    assert_eq!(provider.id(), "http:m1");
    assert_eq!(
        provider.complete(&prompt, &params).unwrap(),
        "m1 | 64 | How much water?"
    );

    let denied =
        HttpCompletionProvider::from_section(&section("/v1/chat/completions", "TABLERAG_TEST_BAD_TOKEN")).unwrap();
    assert!(matches!(
        denied.complete(&prompt, &params),
        Err(ProviderError::Unavailable(_))
    ));

    let broken = HttpCompletionProvider::from_section(&section("/broken", "TABLERAG_TEST_TOKEN")).unwrap();
    assert!(matches!(
        broken.complete(&prompt, &params),
        Err(ProviderError::Unavailable(_))
    ));

    assert!(matches!(
        HttpCompletionProvider::from_section(&section("/x", "TABLERAG_TEST_UNSET_TOKEN")),
        Err(HttpProviderError::MissingToken(_))
    ));
}

#[test]
fn repl_answers_and_prints_traces() {
    let b = bundle();
    let m = manager(&b.config, Arc::new(b.config.mock_provider().unwrap()));
    let case = b
        .suite
        .cases
        .iter()
        .find(|c| c.user == "analyst" && c.expected_kind == AnswerKind::Answer && c.sql.is_some())
        .unwrap();
    let input = format!("{}\n:trace\n\n:quit\nnever asked\n", case.query);
    let mut out = Vec::new();
    cli::repl(&m, "analyst", Cursor::new(input), &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.contains(case.response.as_deref().unwrap()));
    assert!(text.contains("[Answer] scores [1,"));
    assert!(text.contains("\"stage_timings\""));
    assert!(text.ends_with("session closed, 1 staged tables dropped\n"));
    assert_eq!(m.session_count(), 0);
}

#[test]
fn ingest_adds_a_queryable_table() {
    let b = bundle();
    let csv = b.dir.path().join("sites.csv");
    std::fs::write(&csv, "site,capacity,active\nLagos,12.5,yes\nLima,,no\n").unwrap();
    let data = b.dir.path().join("data");
    let catalog = data.join("catalog.json");
    let cols = cli::ingest(&data, &csv, "Sites", None, Some(&catalog)).unwrap();
    assert_eq!(
        cols,
        vec![
            ColumnDef::new("site", ScalarType::Text),
            ColumnDef::new("capacity", ScalarType::Decimal),
            ColumnDef::new("active", ScalarType::Boolean),
        ]
    );
    let config = AppConfig::load(&b.dir.path().join("config.toml")).unwrap();
    let m = manager(&config, Arc::new(config.mock_provider().unwrap()));
    assert_eq!(m.pipeline().store.table("sites").unwrap().row_count(), 2);
    assert!(m.pipeline().catalog.contains("sites"));

    let bad = cli::ingest(
        &data,
        &csv,
        "sites",
        Some(cli::parse_schema_arg("site:text,capacity:integer,active:boolean").unwrap()),
        None,
    );
    assert!(bad.is_err());
}

#[test]
fn standalone_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("rows.csv");
    std::fs::write(&data, "country,total\nKenya,1250.5\n").unwrap();
    let args = cli::ScoreArgs {
        question: "What is the total water consumption in Kenya?".into(),
        response: "Total water consumption in Kenya was 1250.5 units.".into(),
        data: Some(data.clone()),
        ..Default::default()
    };
    let v = cli::score(&args, None).unwrap();
    assert_eq!((v.s1, v.s2, v.s4), (1.0, 1, 1), "{:?}", v.evidence);

    let fabricated = cli::ScoreArgs {
        response: "Kenya used 1250.5 units, up from 980.25 the year before.".into(),
        ..args
    };
    assert!(cli::score(&fabricated, None).unwrap().s1 < 1.0);
}

#[test]
fn corpus_generation_writes_a_loadable_bundle() {
    let dir = tempfile::tempdir().unwrap();
    cli::generate_corpus(dir.path(), 4, 0.05, false).unwrap();
    let config = AppConfig::load(&dir.path().join("config.toml")).unwrap();
    manager(&config, Arc::new(config.mock_provider().unwrap()));

    let data_only = tempfile::tempdir().unwrap();
    cli::generate_corpus(data_only.path(), 4, 0.05, true).unwrap();
    assert!(data_only.path().join("schemas.json").exists());
    assert!(!data_only.path().join("config.toml").exists());
    assert!(cli::generate_corpus(data_only.path(), 4, 0.0, true).is_err());
}
