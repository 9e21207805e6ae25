//! Read-only JSON HTTP API over a trained bundle and its assessments.
//!
//! Endpoints:
//! - `GET /api/municipalities?year=&state=&level=`: filtered assessment summaries
//! - `GET /api/metrics`: the bundle's evaluation report
//! - `POST /api/whatif`: hypothetical assessment for one municipality-year
//!
//! State is loaded once and shared immutably between requests.

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use edurisk::intervention::{whatif_response, InterventionDelta, InterventionError, WhatifResponse, RESPONSE_VERSION};
use edurisk::models::EvalReport;
use edurisk::risk::{assess, RiskError, VulnerabilityAssessment};
use edurisk::{Level, MunicipalityYear, RiskModelBundle};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("assessment failed: {0}")]
    Assess(#[from] RiskError),
    #[error("duplicate row for municipality {code}, year {year}")]
    DuplicateRow { code: u32, year: i32 },
}

/// Bundle, assessed rows and their precomputed assessments.
#[derive(Debug)]
pub struct ServiceState {
    bundle: RiskModelBundle,
    rows: Vec<MunicipalityYear>,
    assessments: Vec<VulnerabilityAssessment>,
    index: HashMap<(u32, i32), usize>,
}

impl ServiceState {
    /// Assesses `rows` with `bundle`; rows are kept sorted by code then year.
    pub fn load(bundle: RiskModelBundle, mut rows: Vec<MunicipalityYear>) -> Result<Self, LoadError> {
        rows.sort_by_key(|r| (r.code, r.year));
        let mut index = HashMap::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            if index.insert((r.code, r.year), i).is_some() {
                return Err(LoadError::DuplicateRow { code: r.code, year: r.year });
            }
        }
        let assessments = assess(&bundle, &rows)?;
        Ok(ServiceState { bundle, rows, assessments, index })
    }

    pub fn bundle(&self) -> &RiskModelBundle {
        &self.bundle
    }

    pub fn rows(&self) -> &[MunicipalityYear] {
        &self.rows
    }

    pub fn assessments(&self) -> &[VulnerabilityAssessment] {
        &self.assessments
    }
}

/// Error body `{"error": ..., "detail": ...}` with its status code.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    error: &'static str,
    detail: String,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    detail: &'a str,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, detail: impl Into<String>) -> Self {
        ApiError { status, error, detail: detail.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.error, detail: &self.detail })).into_response()
    }
}

/// One municipality-year: covariables plus its assessment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MunicipalitySummary {
    pub v: u32,
    #[serde(flatten)]
    pub row: MunicipalityYear,
    pub total_risk: u8,
    pub level: Level,
    pub votes: edurisk::risk::ModelTriple<bool>,
    pub model_scores: edurisk::risk::ModelTriple<f64>,
}

#[derive(Debug, Default)]
pub struct Filters {
    pub year: Option<i32>,
    pub state: Option<u32>,
    pub level: Option<Level>,
}

impl Filters {
    pub fn parse(params: &HashMap<String, String>) -> Result<Self, ApiError> {
        let bad = |name: &str, v: &str| {
            ApiError::new(StatusCode::BAD_REQUEST, "invalid_filter", format!("invalid value `{v}` for `{name}`"))
        };
        let mut f = Filters::default();
        if let Some(v) = params.get("year") {
            f.year = Some(v.trim().parse().map_err(|_| bad("year", v))?);
        }
        if let Some(v) = params.get("state") {
            f.state = Some(v.trim().parse().map_err(|_| bad("state", v))?);
        }
        if let Some(v) = params.get("level") {
            f.level = Some(v.parse().map_err(|_| bad("level", v))?);
        }
        Ok(f)
    }

    fn matches(&self, r: &MunicipalityYear, a: &VulnerabilityAssessment) -> bool {
        self.year.is_none_or(|y| r.year == y)
            && self.state.is_none_or(|s| r.state_code == s)
            && self.level.is_none_or(|l| a.level == l)
    }
}

/// Summaries matching `filters`, sorted by code then year.
pub fn municipalities(state: &ServiceState, filters: &Filters) -> Vec<MunicipalitySummary> {
    state
        .rows
        .iter()
        .zip(&state.assessments)
        .filter(|(r, a)| filters.matches(r, a))
        .map(|(r, a)| MunicipalitySummary {
            v: RESPONSE_VERSION,
            row: r.clone(),
            total_risk: a.total_risk,
            level: a.level,
            votes: a.votes,
            model_scores: a.model_scores,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsResponse {
    pub v: u32,
    #[serde(flatten)]
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatifRequest {
    pub code: u32,
    pub year: i32,
    #[serde(default)]
    pub d_internet: f64,
    #[serde(default)]
    pub d_computer: f64,
    /// Additional subscriptions.
    #[serde(default, alias = "d_connectivity_subscribers")]
    pub d_connectivity: f64,
}

impl WhatifRequest {
    pub fn delta(&self) -> InterventionDelta {
        InterventionDelta {
            d_internet: self.d_internet,
            d_computer: self.d_computer,
            d_connectivity_subscribers: self.d_connectivity,
        }
    }
}

pub fn whatif(state: &ServiceState, req: &WhatifRequest) -> Result<WhatifResponse, ApiError> {
    let &i = state.index.get(&(req.code, req.year)).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no municipality {} in year {}", req.code, req.year),
        )
    })?;
    whatif_response(&state.bundle, &state.rows[i], &req.delta()).map_err(|e| match e {
        InterventionError::NegativeDelta { .. } | InterventionError::NonFiniteDelta(_) => {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_delta", e.to_string())
        }
        other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
    })
}

type Shared = Arc<ServiceState>;

async fn get_municipalities(
    State(state): State<Shared>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Json<Vec<MunicipalitySummary>>, ApiError> {
    let filters = Filters::parse(&params)?;
    Ok(Json(municipalities(&state, &filters)))
}

async fn get_metrics(State(state): State<Shared>) -> Result<Json<MetricsResponse>, ApiError> {
    let report = state.bundle.eval.clone().ok_or_else(|| {
        ApiError::new(StatusCode::NOT_FOUND, "no_metrics", "the loaded bundle carries no evaluation report")
    })?;
    Ok(Json(MetricsResponse { v: RESPONSE_VERSION, report }))
}

async fn post_whatif(
    State(state): State<Shared>,
    body: Result<Json<WhatifRequest>, JsonRejection>,
) -> Result<Json<WhatifResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_body", e.body_text()))?;
    Ok(Json(whatif(&state, &req)?))
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

/// Router over `state`. With `cors_origin`, cross-origin GET and POST are
/// allowed from that origin.
pub fn router(state: Arc<ServiceState>, cors_origin: Option<&str>) -> Result<Router, String> {
    let mut app = Router::new()
        .route("/api/municipalities", get(get_municipalities))
        .route("/api/metrics", get(get_metrics))
        .route("/api/whatif", post(post_whatif))
        .fallback(fallback)
        .with_state(state);
    if let Some(origin) = cors_origin {
        let origin = HeaderValue::from_str(origin).map_err(|e| format!("invalid CORS origin `{origin}`: {e}"))?;
        app = app.layer(
            CorsLayer::new()
                .allow_origin(origin)
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([axum::http::header::CONTENT_TYPE]),
        );
    }
    Ok(app)
}

/// Serves `app` on `listener` until the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app).await
}
