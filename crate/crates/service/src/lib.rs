//! Read-only HTTP API over one loaded result container.
//!
//! All state is immutable after load and shared between requests. The
//! neighbor index some detectors need is built on first use.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use qi2_core::analysis::{
    detect_homogeneous, detect_ood, detect_outliers, detect_simple_subsets, select_region,
    DetectionReport, DetectorConfig,
};
use qi2_core::container::Results;
use qi2_core::dataset::{Dataset, Embedding2D};
use qi2_core::error::Error as CoreError;
use qi2_core::export::thumbnail_png;
use qi2_core::knn::{build_index, NeighborIndex};
use qi2_core::metrics::Metrics;

pub const DEFAULT_PORT: u16 = 8472;
pub const DEFAULT_SELECT_LIMIT: usize = 100_000;
pub const DETECTORS: [&str; 4] = ["outliers", "homogeneous", "ood", "simple-subsets"];

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Maximum number of ids returned by one selection.
    pub select_limit: usize,
    /// Directory holding the built UI bundle, served at `/`.
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            select_limit: DEFAULT_SELECT_LIMIT,
            ui_dir: None,
        }
    }
}

/// A container together with the dataset it was computed from.
pub struct Session {
    results: Results,
    dataset: Dataset,
    embedding: Option<Embedding2D>,
    index: OnceLock<Result<NeighborIndex, String>>,
}

impl Session {
    pub fn new(results: Results, dataset: Dataset, embedding: Option<Embedding2D>) -> qi2_core::error::Result<Self> {
        let fp = dataset.fingerprint();
        if fp != results.header.dataset_fingerprint {
            return Err(CoreError::FingerprintMismatch {
                stored: results.header.dataset_fingerprint.clone(),
                actual: fp,
            });
        }
        if let Some(e) = &embedding {
            if e.len() != dataset.len() {
                return Err(CoreError::DimensionMismatch {
                    expected: dataset.len(),
                    actual: e.len(),
                });
            }
        }
        Ok(Self {
            results,
            dataset,
            embedding,
            index: OnceLock::new(),
        })
    }

    /// Supplies a prebuilt index instead of building one on demand.
    pub fn with_index(self, index: NeighborIndex) -> Self {
        let _ = self.index.set(Ok(index));
        self
    }

    pub fn results(&self) -> &Results {
        &self.results
    }

    fn index(&self) -> Result<&NeighborIndex, ApiError> {
        self.index
            .get_or_init(|| {
                let h = &self.results.header;
                build_index(&self.dataset, h.metrics.input, h.k_max).map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.clone()))
    }

    pub fn detect(&self, name: &str, config: &DetectorConfig) -> Result<DetectionReport, ApiError> {
        let m = &self.results.matrix;
        let labels = self.dataset.labels();
        let r = match name {
            "homogeneous" => detect_homogeneous(m, config),
            "simple-subsets" => detect_simple_subsets(m, config),
            "ood" => detect_ood(m, labels, self.index()?, config),
            "outliers" => detect_outliers(m, labels, self.index()?, config),
            _ => return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown detector '{name}'"))),
        };
        r.map_err(ApiError::from)
    }
}

#[derive(Clone)]
pub struct AppState {
    session: Option<Arc<Session>>,
    config: Arc<ServiceConfig>,
}

impl AppState {
    /// A service with nothing loaded; data endpoints answer 503.
    pub fn empty(config: ServiceConfig) -> Self {
        Self {
            session: None,
            config: Arc::new(config),
        }
    }

    pub fn loaded(session: Session, config: ServiceConfig) -> Self {
        Self {
            session: Some(Arc::new(session)),
            config: Arc::new(config),
        }
    }

    fn session(&self) -> Result<&Session, ApiError> {
        self.session
            .as_deref()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no container loaded"))
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match e {
            CoreError::Config(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    let ui = state.config.ui_dir.clone();
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/meta", get(meta))
        .route("/api/shlqi2", get(shlqi2))
        .route("/api/select", post(select))
        .route("/api/point/{id}", get(point))
        .route("/api/detect/{name}", get(detect))
        .with_state(state);
    match ui {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder)),
    }
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn placeholder() -> Html<&'static str> {
    Html(
        "<!doctype html><title>qi2</title><p>No UI bundle configured. API under <code>/api/</code>: \
         meta, shlqi2, select, point/{id}, detect/{name}.</p>",
    )
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Meta {
    pub n: usize,
    pub k_max: usize,
    pub bins: usize,
    pub bin_min: f64,
    pub bin_width: f64,
    pub gamma: f64,
    pub metrics: Metrics,
    pub has_labels: bool,
    pub has_embedding: bool,
    pub global_qi2r: Option<f64>,
    pub detector_defaults: DetectorConfig,
}

async fn meta(State(st): State<AppState>) -> ApiResult<Json<Meta>> {
    let s = st.session()?;
    let h = &s.results.header;
    Ok(Json(Meta {
        n: h.n,
        k_max: h.k_max,
        bins: h.bins,
        bin_min: h.bin_min,
        bin_width: h.bin_width,
        gamma: h.gamma,
        metrics: h.metrics,
        has_labels: s.dataset.labels().is_some(),
        has_embedding: s.embedding.is_some(),
        global_qi2r: h.global_qi2r,
        detector_defaults: h.detector_defaults.clone(),
    }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridQuery {
    k_min: Option<usize>,
    k_max: Option<usize>,
    bin_lo: Option<usize>,
    bin_hi: Option<usize>,
    gamma: Option<f64>,
}

#[derive(Clone, Copy, PartialEq)]
enum Encoding {
    Raw,
    Json,
}

/// First acceptable media type in header order; a missing header means raw.
fn negotiate(headers: &HeaderMap) -> ApiResult<Encoding> {
    let Some(accept) = headers.get(header::ACCEPT) else {
        return Ok(Encoding::Raw);
    };
    let accept = accept
        .to_str()
        .map_err(|_| ApiError::new(StatusCode::NOT_ACCEPTABLE, "unreadable accept header"))?;
    for item in accept.split(',') {
        match item.split(';').next().unwrap_or("").trim() {
            "application/octet-stream" | "*/*" | "application/*" => return Ok(Encoding::Raw),
            "application/json" => return Ok(Encoding::Json),
            _ => {}
        }
    }
    Err(ApiError::new(
        StatusCode::NOT_ACCEPTABLE,
        "supported: application/octet-stream, application/json",
    ))
}

async fn shlqi2(
    State(st): State<AppState>,
    headers: HeaderMap,
    q: Result<Query<GridQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let enc = negotiate(&headers)?;
    let s = st.session()?;
    let Query(q) = q.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let regamma;
    let grid = match q.gamma {
        Some(g) => {
            regamma = s.results.grid.regamma(g)?;
            &regamma
        }
        None => &s.results.grid,
    };
    let (k_lo, k_hi) = (q.k_min.unwrap_or(1), q.k_max.unwrap_or(grid.k_max));
    let (b_lo, b_hi) = (q.bin_lo.unwrap_or(0), q.bin_hi.unwrap_or(grid.bins().saturating_sub(1)));
    if k_lo == 0 || k_lo > k_hi || k_hi > grid.k_max || b_lo > b_hi || b_hi >= grid.bins() {
        return Err(ApiError::bad_request(format!(
            "window k=[{k_lo}, {k_hi}] bins=[{b_lo}, {b_hi}] outside 1..={} x 0..{}",
            grid.k_max,
            grid.bins()
        )));
    }
    let (rows, cols) = (b_hi - b_lo + 1, k_hi - k_lo + 1);
    let mut bytes = Vec::with_capacity(rows * cols * 8);
    for b in b_lo..=b_hi {
        for k in k_lo..=k_hi {
            bytes.extend_from_slice(&grid.value(b, k).to_le_bytes());
        }
    }
    Ok(match enc {
        Encoding::Raw => Response::builder()
            .header(header::CONTENT_TYPE, "application/octet-stream")
            .header("x-grid-rows", rows)
            .header("x-grid-cols", cols)
            .header("x-grid-k-min", k_lo)
            .header("x-grid-bin-lo", b_lo)
            .body(Body::from(bytes))
            .expect("static headers"),
        Encoding::Json => Json(json!({
            "rows": rows,
            "cols": cols,
            "k_min": k_lo,
            "bin_lo": b_lo,
            "dtype": "float64-le",
            "data": B64.encode(bytes),
        }))
        .into_response(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectRequest {
    pub k_min: usize,
    pub k_max: usize,
    pub v_min: f64,
    /// Absent or null means unbounded.
    #[serde(default)]
    pub v_max: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SelectResponse {
    pub ids: Vec<usize>,
    pub count: usize,
    pub truncated: bool,
}

async fn select(
    State(st): State<AppState>,
    body: Result<Json<SelectRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<SelectResponse>> {
    let s = st.session()?;
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let v_max = req.v_max.unwrap_or(f64::INFINITY);
    let mut ids = select_region(&s.results.matrix, (req.k_min, req.k_max), (req.v_min, v_max))?;
    let count = ids.len();
    let truncated = count > st.config.select_limit;
    ids.truncate(st.config.select_limit);
    Ok(Json(SelectResponse { ids, count, truncated }))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PointResponse {
    pub id: usize,
    pub label: Option<String>,
    /// Base64 PNG, only for image datasets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_preview: Option<String>,
    pub input_values: Vec<f64>,
    pub output_values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_xy: Option<[f64; 2]>,
    pub trajectory: Vec<(usize, f64)>,
}

async fn point(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<PointResponse>> {
    let s = st.session()?;
    let ds = &s.dataset;
    let id = id
        .parse::<usize>()
        .ok()
        .filter(|&i| i < ds.len())
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no point '{id}'")))?;
    let input = ds.input(id);
    let input_preview = match ds.image_shape() {
        Some((r, c)) => Some(B64.encode(thumbnail_png(input, r, c)?)),
        None => None,
    };
    Ok(Json(PointResponse {
        id,
        label: ds.labels().map(|l| l.name(id).to_string()),
        input_preview,
        input_values: input.to_vec(),
        output_values: ds.output(id).to_vec(),
        embedding_xy: s.embedding.as_ref().map(|e| e.coords[id]),
        trajectory: s.results.matrix.trajectory(id),
    }))
}

/// Detector thresholds from the query string: `config` may hold a whole
/// JSON object, other keys set single fields with JSON values (bare words
/// are taken as strings). Everything starts from the container defaults.
pub fn config_from_query(defaults: &DetectorConfig, query: &HashMap<String, String>) -> Result<DetectorConfig, String> {
    let mut obj = match serde_json::to_value(defaults).map_err(|e| e.to_string())? {
        Value::Object(m) => m,
        _ => unreachable!("config serializes to an object"),
    };
    if let Some(raw) = query.get("config") {
        match serde_json::from_str::<Value>(raw).map_err(|e| format!("config: {e}"))? {
            Value::Object(m) => obj.extend(m),
            _ => return Err("config must be a JSON object".into()),
        }
    }
    for (key, raw) in query.iter().filter(|(k, _)| k.as_str() != "config") {
        let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
        obj.insert(key.clone(), v);
    }
    let cfg: DetectorConfig = serde_json::from_value(Value::Object(obj)).map_err(|e| e.to_string())?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

async fn detect(
    State(st): State<AppState>,
    Path(name): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> ApiResult<Json<DetectionReport>> {
    let s = st.session()?;
    if !DETECTORS.contains(&name.as_str()) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown detector '{name}'")));
    }
    let cfg = config_from_query(&s.results.header.detector_defaults, &query).map_err(ApiError::bad_request)?;
    let s = Arc::clone(st.session.as_ref().expect("checked"));
    let report = tokio::task::spawn_blocking(move || s.detect(&name, &cfg))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(report))
}
