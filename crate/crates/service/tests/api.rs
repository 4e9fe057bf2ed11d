use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use betaboard_core::betamove::SuccessParams;
use betaboard_core::board::{validate_problem, HoldFeatureTable, ProblemRecord, ValidationRules};
use betaboard_core::deeprouteset::{tokenize, train_generator, GenTrainConfig, GeneratorConfig};
use betaboard_core::embed::embed_sequence;
use betaboard_core::gradenet::{train, GradeNetConfig, LabeledSequence, TrainConfig};
use betaboard_core::synth::beta_corpus;
use betaboard_nn::Activation;
use betaboard_service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

const LADDER: &str = r#"{"holds":[
    {"position":"E2","role":"start"},
    {"position":"E10","role":"intermediate"},
    {"position":"E18","role":"finish"}]}"#;

fn training_problems() -> Vec<(Value, &'static str)> {
    vec![
        (
            json!({"id":"toy-a","holds":[
                {"position":"B3","role":"start"},{"position":"C6","role":"intermediate"},
                {"position":"D9","role":"intermediate"},{"position":"D12","role":"intermediate"},
                {"position":"E15","role":"intermediate"},{"position":"E18","role":"finish"}]}),
            "V5",
        ),
        (
            json!({"id":"toy-b","holds":[
                {"position":"H2","role":"start"},{"position":"I2","role":"start"},
                {"position":"A10","role":"intermediate"},{"position":"K18","role":"finish"}]}),
            "V11",
        ),
    ]
}

/// Small models: a grade classifier overfit on two problems and a generator
/// trained on synthetic betas.
fn state() -> Arc<AppState> {
    static STATE: OnceLock<Arc<AppState>> = OnceLock::new();
    STATE
        .get_or_init(|| {
            let table = HoldFeatureTable::default();
            let params = SuccessParams::default();
            let base = AppState::new(table.clone(), params);

            let labeled: Vec<LabeledSequence> = training_problems()
                .into_iter()
                .map(|(body, grade)| {
                    let record: ProblemRecord = serde_json::from_value(body).unwrap();
                    let problem = betaboard_core::board::Problem::from_record(&record).unwrap();
                    let seq = betaboard_core::betamove::beam_search(&problem, &table, &params, 8).unwrap();
                    LabeledSequence {
                        id: record.id.unwrap(),
                        grade: grade.parse().unwrap(),
                        moves: embed_sequence(&seq, &table),
                    }
                })
                .collect();
            let grade_cfg = TrainConfig {
                epochs: 150,
                weight_adjust_epoch: None,
                learning_rate: 1e-2,
                seed: 4,
                model: GradeNetConfig {
                    lstm_hidden: 12,
                    dense: vec![12, 12, 12, 12, 12, 8],
                    stage2_lstm: vec![12, 12],
                    head_b_hidden: 8,
                    activation: Activation::Tanh,
                    ..Default::default()
                },
                ..Default::default()
            };
            let (grade_model, _) = train(&labeled, None, &grade_cfg).unwrap();

            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let corpus: Vec<_> = beta_corpus(&mut rng, 300, &table, &params, &ValidationRules::default())
                .iter()
                .map(|s| tokenize(s).unwrap())
                .collect();
            let gen_cfg = GenTrainConfig {
                epochs: 60,
                batch_size: 16,
                learning_rate: 1e-2,
                seed: 2,
                model: GeneratorConfig {
                    embedding_dim: 16,
                    hidden: 48,
                },
            };
            let (generator, _) = train_generator(&corpus, &gen_cfg).unwrap();
            Arc::new(base.with_grade_model(grade_model).with_generator(generator))
        })
        .clone()
}

fn empty_state() -> Arc<AppState> {
    Arc::new(AppState::new(HoldFeatureTable::default(), SuccessParams::default()))
}

async fn call(state: Arc<AppState>, method: &str, uri: &str, body: &str) -> (StatusCode, Vec<u8>) {
    let app = router(state, &ServiceConfig::default().cors_origins);
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

/// Compares against `tests/golden/<name>.json`; `UPDATE_GOLDEN` rewrites it.
fn golden(name: &str, status: StatusCode, body: &[u8]) -> Value {
    let body: Value = serde_json::from_slice(body).unwrap();
    let actual = json!({"status": status.as_u16(), "body": body});
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("tests/golden/{name}.json"));
    let text = serde_json::to_string_pretty(&actual).unwrap() + "\n";
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &text).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
    assert_eq!(expected, text, "{name}");
    body
}

#[tokio::test]
async fn beta_ladder() {
    let (status, body) = call(empty_state(), "POST", "/api/beta", LADDER).await;
    assert_eq!(status, StatusCode::OK);
    let body = golden("beta_ladder", status, &body);
    assert_eq!(body["moves"].as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn beta_missing_finish() {
    let req = r#"{"holds":[{"position":"E2","role":"start"},{"position":"E9","role":"intermediate"},{"position":"F12","role":"intermediate"}]}"#;
    let (status, body) = call(empty_state(), "POST", "/api/beta", req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let body = golden("beta_missing_finish", status, &body);
    assert_eq!(body["code"], "invalid_problem");
    assert!(body["details"].as_array().unwrap().iter().any(|d| d == "missing finish"));
}

#[tokio::test]
async fn beta_malformed_json() {
    let (status, body) = call(empty_state(), "POST", "/api/beta", "{not json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let body: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(body["code"], "bad_request");
    assert!(body.get("details").is_some());
}

#[tokio::test]
async fn beta_search_failure_is_422() {
    // Passes the rules only once the hold cap is lifted past what the
    // search accepts.
    let mut holds = vec![json!({"position":"A1","role":"start"}), json!({"position":"A18","role":"finish"})];
    for i in 0..63 {
        let col = (b'A' + (i % 11) as u8) as char;
        let row = 2 + i / 11;
        holds.push(json!({"position": format!("{col}{row}"), "role":"intermediate"}));
    }
    let body = json!({"holds": holds}).to_string();
    let mut st = AppState::new(HoldFeatureTable::default(), SuccessParams::default());
    st.rules.max_holds = 100;
    let (status, bytes) = call(Arc::new(st), "POST", "/api/beta", &body).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    golden("beta_too_large", status, &bytes);
}

#[tokio::test]
async fn beta_is_byte_identical_on_repeat() {
    let a = call(empty_state(), "POST", "/api/beta", LADDER).await;
    let b = call(empty_state(), "POST", "/api/beta", LADDER).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn grade_training_problems_and_probs() {
    for (body, grade) in training_problems() {
        let (status, bytes) = call(state(), "POST", "/api/grade", &body.to_string()).await;
        assert_eq!(status, StatusCode::OK);
        let name = format!("grade_{}", body["id"].as_str().unwrap().replace('-', "_"));
        let resp = golden(&name, status, &bytes);
        assert_eq!(resp["predicted_grade"], grade);
        let sum: f64 = resp["probs"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
}

#[tokio::test]
async fn grade_errors() {
    let bad = r#"{"holds":[{"position":"Z99","role":"start"}]}"#;
    let (status, bytes) = call(state(), "POST", "/api/grade", bad).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    golden("grade_bad_position", status, &bytes);

    let (status, bytes) = call(empty_state(), "POST", "/api/grade", LADDER).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    golden("grade_no_model", status, &bytes);
}

#[tokio::test]
async fn generate_is_deterministic_and_valid() {
    let req = r#"{"temperature":1.0,"seed":7,"count":3}"#;
    let (status, a) = call(state(), "POST", "/api/generate", req).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&a));
    let (_, b) = call(state(), "POST", "/api/generate", req).await;
    assert_eq!(a, b);
    let body = golden("generate_seed7", status, &a);
    let items = body.as_array().unwrap();
    assert_eq!(items.len(), 3);
    for item in items {
        let record: ProblemRecord = serde_json::from_value(item["problem"].clone()).unwrap();
        let p = betaboard_core::board::Problem::from_record(&record).unwrap();
        assert!(validate_problem(&p, &ValidationRules::default()).is_empty());
        assert!(item["predicted_grade"].is_string());
    }
}

#[tokio::test]
async fn generate_errors() {
    let (status, bytes) = call(state(), "POST", "/api/generate", r#"{"count":0}"#).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    golden("generate_count_zero", status, &bytes);
    let (status, _) = call(state(), "POST", "/api/generate", r#"{"count":21}"#).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(state(), "POST", "/api/generate", r#"{"count":2,"temperature":-1}"#).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, bytes) = call(empty_state(), "POST", "/api/generate", r#"{"count":1}"#).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    golden("generate_no_model", status, &bytes);
}

#[tokio::test]
async fn health_reports_versions() {
    let (status, bytes) = call(state(), "GET", "/api/health", "").await;
    assert_eq!(status, StatusCode::OK);
    let body = golden("health_ok", status, &bytes);
    assert_eq!(body["model_versions"]["grade"]["format_version"], 1);
    assert_eq!(body["model_versions"]["grade"]["embedding_layout_version"], 1);
}

#[tokio::test]
async fn missing_weights_file_gives_503_health() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        grade_model: Some(dir.path().join("absent.bin")),
        generator_model: Some(dir.path().join("absent-gen.bin")),
        ..Default::default()
    };
    let st = Arc::new(AppState::from_config(&config).unwrap());
    assert_eq!(st.load_errors.len(), 2);
    let (status, bytes) = call(st, "GET", "/api/health", "").await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let body: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(body["status"], "degraded");
}

#[tokio::test]
async fn weights_round_trip_through_config() {
    let dir = tempfile::tempdir().unwrap();
    let st = state();
    let grade_path = dir.path().join("grade.bin");
    let gen_path = dir.path().join("gen.bin");
    st.grade.as_ref().unwrap().model.save(&grade_path).unwrap();
    st.generator.as_ref().unwrap().model.save(&gen_path).unwrap();
    let config = ServiceConfig {
        grade_model: Some(grade_path),
        generator_model: Some(gen_path),
        ..Default::default()
    };
    let loaded = Arc::new(AppState::from_config(&config).unwrap());
    let body = training_problems()[0].0.to_string();
    assert_eq!(
        call(loaded, "POST", "/api/grade", &body).await,
        call(st, "POST", "/api/grade", &body).await
    );
}

#[tokio::test]
async fn cors_preflight_allows_webapp_origin() {
    let app = router(empty_state(), &ServiceConfig::default().cors_origins);
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/api/beta")
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

#[tokio::test]
async fn unknown_route_is_structured_404() {
    let (status, bytes) = call(empty_state(), "GET", "/api/nope", "").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let body: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(body["code"], "not_found");
}
