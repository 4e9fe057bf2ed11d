//! HTTP front end over the beta solver, grade classifier and route generator.
//!
//! Models are loaded once at startup and shared read-only between requests.
//! Every error response has the shape `{code, message, details}`.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use betaboard_core::betamove::{BetaError, BetaSequence, BetaSolver, Move, SuccessParams};
use betaboard_core::board::{
    load_hold_features, validate_problem, HoldFeatureTable, Problem, ProblemRecord,
    ValidationRules,
};
use betaboard_core::deeprouteset::{
    sample_route, self_consistency_filter, FilterConfig, GenConfig, Generator,
};
use betaboard_core::embed::embed_sequence;
use betaboard_core::gradenet::GradeNet;
use betaboard_nn::weights::{WeightsFile, WeightsHeader};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub const MAX_GENERATE: usize = 20;
/// Samples drawn per requested route before giving up.
const ATTEMPTS_PER_ROUTE: usize = 200;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Load { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub features: Option<PathBuf>,
    pub grade_model: Option<PathBuf>,
    pub generator_model: Option<PathBuf>,
    pub success_params: Option<PathBuf>,
    pub cors_origins: Vec<String>,
    pub beam_width: usize,
    pub rules: ValidationRules,
    pub filter: FilterConfig,
    pub generation: GenConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            features: None,
            grade_model: None,
            generator_model: None,
            success_params: None,
            cors_origins: vec!["http://localhost:5173".into()],
            beam_width: betaboard_core::betamove::DEFAULT_BEAM_WIDTH,
            rules: ValidationRules::default(),
            filter: FilterConfig::default(),
            generation: GenConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ServiceError::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// A loaded model plus the header it came with.
#[derive(Debug)]
pub struct Loaded<M> {
    pub model: M,
    pub header: WeightsHeader,
}

/// Immutable state shared by all handlers.
#[derive(Debug)]
pub struct AppState {
    pub table: HoldFeatureTable,
    pub params: SuccessParams,
    pub rules: ValidationRules,
    pub beam_width: usize,
    pub filter: FilterConfig,
    pub generation: GenConfig,
    pub grade: Option<Loaded<GradeNet>>,
    pub generator: Option<Loaded<Generator>>,
    /// Why a configured model is missing.
    pub load_errors: Vec<String>,
}

impl AppState {
    /// State with the given parts and no models.
    pub fn new(table: HoldFeatureTable, params: SuccessParams) -> Self {
        let defaults = ServiceConfig::default();
        Self {
            table,
            params,
            rules: defaults.rules,
            beam_width: defaults.beam_width,
            filter: defaults.filter,
            generation: defaults.generation,
            grade: None,
            generator: None,
            load_errors: Vec::new(),
        }
    }

    pub fn with_grade_model(mut self, model: GradeNet) -> Self {
        let header = model.to_weights().header;
        self.grade = Some(Loaded { model, header });
        self
    }

    pub fn with_generator(mut self, model: Generator) -> Self {
        let header = model.to_weights().header;
        self.generator = Some(Loaded { model, header });
        self
    }

    /// Reads every file the config names. The feature table and success
    /// parameters must load; a missing or mismatched weights file only
    /// disables the endpoints that need it.
    pub fn from_config(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let load_err = |path: &Path, e: &dyn std::fmt::Display| ServiceError::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let table = match &config.features {
            Some(p) => load_hold_features(p).map_err(|e| load_err(p, &e))?,
            None => HoldFeatureTable::default(),
        };
        let params = match &config.success_params {
            Some(p) => SuccessParams::load(p).map_err(|e| load_err(p, &e))?,
            None => SuccessParams::default(),
        };
        config.generation.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        if config.beam_width == 0 {
            return Err(ServiceError::Config("beam_width must be positive".into()));
        }
        let mut state = Self {
            table,
            params,
            rules: config.rules,
            beam_width: config.beam_width,
            filter: config.filter.clone(),
            generation: config.generation.clone(),
            grade: None,
            generator: None,
            load_errors: Vec::new(),
        };
        if let Some(p) = &config.grade_model {
            match load_weights(p, GradeNet::from_weights) {
                Ok(l) => state.grade = Some(l),
                Err(e) => state.load_errors.push(format!("grade model {}: {e}", p.display())),
            }
        } else {
            state.load_errors.push("grade model not configured".into());
        }
        if let Some(p) = &config.generator_model {
            match load_weights(p, Generator::from_weights) {
                Ok(l) => state.generator = Some(l),
                Err(e) => state.load_errors.push(format!("generator {}: {e}", p.display())),
            }
        } else {
            state.load_errors.push("generator not configured".into());
        }
        Ok(state)
    }
}

fn load_weights<M, E: std::fmt::Display>(
    path: &Path,
    build: impl Fn(&WeightsFile) -> Result<M, E>,
) -> Result<Loaded<M>, String> {
    let file = WeightsFile::load(path).map_err(|e| e.to_string())?;
    let model = build(&file).map_err(|e| e.to_string())?;
    Ok(Loaded {
        model,
        header: file.header,
    })
}

/// Structured error response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>, details: Value) -> Self {
        Self {
            status: status.as_u16(),
            code: code.into(),
            message: message.into(),
            details,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message, Value::Null)
    }

    fn unavailable(what: &str) -> Self {
        Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "model_unavailable",
            format!("{what} is not loaded"),
            Value::Null,
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaResponse {
    pub moves: Vec<Move>,
    pub total_log_score: f64,
}

impl From<&BetaSequence> for BetaResponse {
    fn from(seq: &BetaSequence) -> Self {
        Self {
            moves: seq.moves.clone(),
            total_log_score: seq.total_log_score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeResponse {
    pub predicted_grade: String,
    pub probs: Vec<f64>,
    pub beta: BetaResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
    pub count: usize,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedItem {
    pub problem: ProblemRecord,
    pub beta: BetaResponse,
    pub predicted_grade: Option<String>,
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

/// Body to a problem that passes the configured rules.
fn parse_problem_body(state: &AppState, body: &[u8]) -> Result<Problem, ApiError> {
    let record: ProblemRecord = parse_json(body)?;
    let problem = Problem::from_record(&record).map_err(|e| {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_problem", e.to_string(), Value::Null)
    })?;
    let violations = validate_problem(&problem, &state.rules);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_problem",
            list.join("; "),
            json!(list),
        ));
    }
    Ok(problem)
}

fn solve(state: &AppState, problem: &Problem) -> Result<BetaSequence, ApiError> {
    let result = BetaSolver::new(problem, &state.table, &state.params)
        .and_then(|s| s.beam_search(state.beam_width));
    result.map_err(|e| match e {
        BetaError::InvalidProblem(v) => {
            let list: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            ApiError::new(StatusCode::BAD_REQUEST, "invalid_problem", list.join("; "), json!(list))
        }
        other => ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "search_failed",
            other.to_string(),
            Value::Null,
        ),
    })
}

pub fn beta(state: &AppState, body: &[u8]) -> Result<BetaResponse, ApiError> {
    let problem = parse_problem_body(state, body)?;
    Ok(BetaResponse::from(&solve(state, &problem)?))
}

pub fn grade(state: &AppState, body: &[u8]) -> Result<GradeResponse, ApiError> {
    let model = &state.grade.as_ref().ok_or_else(|| ApiError::unavailable("grade model"))?.model;
    let problem = parse_problem_body(state, body)?;
    let seq = solve(state, &problem)?;
    let (grade, dist) = model
        .predict(&embed_sequence(&seq, &state.table))
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), Value::Null))?;
    Ok(GradeResponse {
        predicted_grade: grade.to_string(),
        probs: dist.probs.to_vec(),
        beta: BetaResponse::from(&seq),
    })
}

pub fn generate(state: &AppState, body: &[u8]) -> Result<Vec<GeneratedItem>, ApiError> {
    let req: GenerateRequest = parse_json(body)?;
    if req.count == 0 || req.count > MAX_GENERATE {
        return Err(ApiError::bad_request(format!("count must be in 1..={MAX_GENERATE}")));
    }
    if !(req.temperature >= 0.0 && req.temperature.is_finite()) {
        return Err(ApiError::bad_request("temperature must be a nonnegative number"));
    }
    let generator = &state
        .generator
        .as_ref()
        .ok_or_else(|| ApiError::unavailable("generator"))?
        .model;
    let cfg = GenConfig {
        temperature: req.temperature,
        seed: req.seed,
        ..state.generation.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let mut out = Vec::with_capacity(req.count);
    let budget = req.count * ATTEMPTS_PER_ROUTE;
    for _ in 0..budget {
        if out.len() == req.count {
            break;
        }
        let Ok(route) = sample_route(generator, &cfg, &state.table, &state.params, &[], &mut rng)
        else {
            continue;
        };
        if !validate_problem(&route.problem, &state.rules).is_empty() {
            continue;
        }
        let verdict = self_consistency_filter(
            &route.problem,
            &route.beta,
            &state.table,
            &state.params,
            &state.filter,
        );
        if !verdict.accepted {
            continue;
        }
        let mut problem = route.problem.clone();
        problem.id = Some(format!("gen-{}-{}", req.seed, out.len()));
        let predicted_grade = match &state.grade {
            Some(g) => g
                .model
                .predict(&embed_sequence(&route.beta, &state.table))
                .ok()
                .map(|(grade, _)| grade.to_string()),
            None => None,
        };
        out.push(GeneratedItem {
            problem: problem.to_record(),
            beta: BetaResponse::from(&route.beta),
            predicted_grade,
        });
    }
    if out.len() < req.count {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "generation_failed",
            format!("only {} of {} routes passed the filter after {budget} samples", out.len(), req.count),
            Value::Null,
        ));
    }
    Ok(out)
}

/// `(status, body)` of the health check.
pub fn health(state: &AppState) -> (StatusCode, Value) {
    let version = |h: &WeightsHeader| {
        json!({
            "format_version": h.format_version,
            "embedding_layout_version": h.embedding_layout_version,
            "kind": h.architecture.get("kind").cloned().unwrap_or(Value::Null),
        })
    };
    let ready = state.grade.is_some() && state.generator.is_some();
    let body = json!({
        "status": if ready { "ok" } else { "degraded" },
        "model_versions": {
            "grade": state.grade.as_ref().map(|l| version(&l.header)),
            "generator": state.generator.as_ref().map(|l| version(&l.header)),
        },
        "errors": state.load_errors,
    });
    let status = if ready { StatusCode::OK } else { StatusCode::SERVICE_UNAVAILABLE };
    (status, body)
}

type Shared = Arc<AppState>;

/// Runs a CPU-bound handler off the async workers.
async fn blocking<T, F>(state: Shared, body: Bytes, f: F) -> Response
where
    T: Serialize + Send + 'static,
    F: FnOnce(&AppState, &[u8]) -> Result<T, ApiError> + Send + 'static,
{
    let joined = tokio::task::spawn_blocking(move || f(&state, &body)).await;
    match joined {
        Ok(Ok(value)) => Json(value).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), Value::Null)
            .into_response(),
    }
}

async fn beta_handler(State(state): State<Shared>, body: Bytes) -> Response {
    blocking(state, body, beta).await
}

async fn grade_handler(State(state): State<Shared>, body: Bytes) -> Response {
    blocking(state, body, grade).await
}

async fn generate_handler(State(state): State<Shared>, body: Bytes) -> Response {
    blocking(state, body, generate).await
}

async fn health_handler(State(state): State<Shared>) -> Response {
    let (status, body) = health(&state);
    (status, Json(body)).into_response()
}

async fn fallback() -> Response {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint", Value::Null).into_response()
}

pub fn cors_layer(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    if origins.iter().any(|o| o == "*") {
        return layer.allow_origin(Any);
    }
    let list: Vec<HeaderValue> = origins.iter().filter_map(|o| o.parse().ok()).collect();
    layer.allow_origin(AllowOrigin::list(list))
}

pub fn router(state: Arc<AppState>, cors_origins: &[String]) -> Router {
    Router::new()
        .route("/api/beta", post(beta_handler))
        .route("/api/grade", post(grade_handler))
        .route("/api/generate", post(generate_handler))
        .route("/api/health", get(health_handler))
        .fallback(fallback)
        .layer(cors_layer(cors_origins))
        .with_state(state)
}

/// Binds and serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let state = Arc::new(AppState::from_config(&config)?);
    for e in &state.load_errors {
        eprintln!("warning: {e}");
    }
    let addr: SocketAddr = config
        .bind
        .parse()
        .map_err(|e| ServiceError::Config(format!("bind address {}: {e}", config.bind)))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, &config.cors_origins)).await?;
    Ok(())
}
