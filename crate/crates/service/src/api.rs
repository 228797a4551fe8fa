use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;

use llmconf_core::generator::emit_launch;
use llmconf_core::model::ModelSpec;
use llmconf_core::search::{run_search, CandidateSpace, ParetoPoint, SearchInputs, SearchOptions, SpaceOverrides};
use llmconf_core::serving_modes::WorkloadSpec;
use llmconf_core::Error;

use crate::Catalog;

pub const API_PREFIX: &str = "/api/v1";

/// Model addressed by catalog name or given inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Id(String),
    Inline(Box<ModelSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    pub db: String,
    pub model: ModelRef,
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub space: SpaceOverrides,
    /// Drop wall-clock timing so identical requests give identical bytes.
    #[serde(default)]
    pub omit_timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    /// A frontier or best entry from an earlier search response, unmodified.
    pub entry: ParetoPoint,
    /// Model name written into the launch file; the report's `model`.
    pub model: String,
    pub backend: String,
    #[serde(default)]
    pub version: Option<String>,
}

/// Error response: status plus `{"error": ..., "path": ...}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub path: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            path: None,
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::TooManyCandidates { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            Error::UnknownBackend { .. } => StatusCode::NOT_FOUND,
            Error::Io { .. } | Error::MissingKey { .. } | Error::OutOfBounds { .. } | Error::Unsupported(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = match self.path {
            Some(p) => json!({ "error": self.message, "path": p }),
            None => json!({ "error": self.message }),
        };
        (self.status, axum::Json(body)).into_response()
    }
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| ApiError {
        status: StatusCode::BAD_REQUEST,
        message: e.inner().to_string(),
        path: Some(e.path().to_string()),
    })
}

fn json_body(status: StatusCode, text: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], text).into_response()
}

async fn search(State(cat): State<Arc<Catalog>>, body: Bytes) -> Result<Response, ApiError> {
    let req: SearchRequest = parse(&body)?;
    let db = cat
        .databases
        .get(&req.db)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown database {}", req.db)))?;
    let model = match req.model {
        ModelRef::Id(id) => cat
            .models
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown model {id}")))?,
        ModelRef::Inline(m) => *m,
    };
    req.workload.validate()?;
    let space = req.space.apply(CandidateSpace::for_workload(&req.workload));
    let opts = SearchOptions {
        jobs: None,
        max_candidates: cat.max_candidates,
        omit_timing: req.omit_timing,
    };
    let workload = req.workload;
    let report = tokio::task::spawn_blocking(move || {
        let inputs = SearchInputs {
            db: &db,
            model: &model,
            workload: &workload,
            space: &space,
        };
        run_search(inputs, &opts)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let status = if report.best.is_empty() {
        StatusCode::UNPROCESSABLE_ENTITY
    } else {
        StatusCode::OK
    };
    Ok(json_body(status, report.to_json()))
}

#[derive(Serialize)]
struct DbMeta<'a> {
    id: &'a str,
    hardware: &'a str,
    backend: &'a str,
    backend_version: &'a str,
    grids: usize,
    records: usize,
}

#[derive(Serialize)]
struct ModelMeta<'a> {
    name: &'a str,
    moe: bool,
    param_count: u64,
}

#[derive(Serialize)]
struct BackendMeta<'a> {
    backend: &'a str,
    version: &'a str,
}

async fn meta(State(cat): State<Arc<Catalog>>) -> Response {
    let databases: Vec<DbMeta> = cat
        .databases
        .iter()
        .map(|(id, db)| DbMeta {
            id,
            hardware: &db.hardware().name,
            backend: db.backend(),
            backend_version: &db.header().backend_version,
            grids: db.grid_count(),
            records: db.records().len(),
        })
        .collect();
    let mut hardware: Vec<&str> = cat.databases.values().map(|d| d.hardware().name.as_str()).collect();
    hardware.sort_unstable();
    hardware.dedup();
    let models: Vec<ModelMeta> = cat
        .models
        .values()
        .map(|m| ModelMeta {
            name: &m.name,
            moe: m.is_moe(),
            param_count: m.param_count,
        })
        .collect();
    let backends: Vec<BackendMeta> = cat
        .backends
        .profiles()
        .map(|p| BackendMeta {
            backend: &p.backend,
            version: &p.version,
        })
        .collect();
    let body = json!({
        "databases": databases,
        "models": models,
        "hardware": hardware,
        "backends": backends,
        "max_candidates": cat.max_candidates,
    });
    axum::Json(body).into_response()
}

async fn generate(State(cat): State<Arc<Catalog>>, body: Bytes) -> Result<Response, ApiError> {
    let req: GenerateRequest = parse(&body)?;
    let profile = cat.backends.get(&req.backend, req.version.as_deref())?;
    let plan = emit_launch(&req.entry, &req.model, profile)?;
    Ok(([(header::CONTENT_TYPE, "application/yaml")], plan.to_yaml()).into_response())
}

fn cors(origin: Option<&str>) -> CorsLayer {
    let allow = match origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(v) => AllowOrigin::exact(v),
        None => AllowOrigin::any(),
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE])
}

pub fn router(catalog: Arc<Catalog>) -> Router {
    let api = Router::new()
        .route("/search", post(search))
        .route("/meta", get(meta))
        .route("/generate", post(generate));
    let mut app = Router::new().nest(API_PREFIX, api);
    if let Some(dir) = &catalog.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.layer(cors(catalog.cors_origin.as_deref())).with_state(catalog)
}
