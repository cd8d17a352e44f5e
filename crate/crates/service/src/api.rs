use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use holter_core::domain::{parse_bundle_json, subgroup_key, ArrhythmiaTable, BundleLoader, DomainError, PatientBundle, SubgroupKey};
use holter_core::eval::{
    aggregate, build_questionnaire, heatmap_json, parse_ratings_csv, subgroup_csv, AggregationContext, Dimension, IngestReport,
    Questionnaire, Rating, RatingSet, RejectedRow, SealedAliasMap, StdKind,
};
use holter_core::report::{apply_edit, render, set_status, EditTarget, ItemEdit, RenderFormat, Report, ReportError, ReviewStatus};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::jobs::{Job, JobRunner, JOBS, REPORTS};
use crate::store::{StoreError, StoreRecord};

pub const OPENAPI: &str = include_str!("openapi.json");
const IDEMPOTENCY: &str = "idempotency";
const RATINGS: &str = "ratings";
const QUESTIONNAIRES: &str = "questionnaires";
const ALIASES: &str = "aliases";

#[derive(Clone)]
pub struct AppState {
    pub runner: Arc<JobRunner>,
    pub auth_token: Option<String>,
}

/// JSON error body shared by every endpoint.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": code, "message": message.into() }),
        }
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        self.body[key] = value;
        self
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::InvalidKey(k) => ApiError::not_found(&format!("`{k}`")),
            StoreError::Conflict { current, .. } => {
                ApiError::new(StatusCode::CONFLICT, "revision_conflict", e.to_string()).with("current_revision", json!(current))
            }
            other => {
                tracing::error!(error = %other, "store failure");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string())
            }
        }
    }
}

fn body_bytes(body: Result<Bytes, BytesRejection>) -> Result<Bytes, ApiError> {
    body.map_err(|r| {
        let status = r.status();
        if status == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(status, "payload_too_large", r.body_text())
        } else {
            ApiError::new(status, "bad_request", r.body_text())
        }
    })
}

pub fn router(state: AppState, max_body_bytes: usize) -> Router {
    let v1 = Router::new()
        .route("/v1/jobs", post(submit_job))
        .route("/v1/jobs/{id}", get(get_job))
        .route("/v1/reports/{id}", get(get_report))
        .route("/v1/reports/{id}/review", post(review_report))
        .route("/v1/ratings", post(post_ratings))
        .route("/v1/analytics/subgroups", get(subgroups))
        .route("/v1/questionnaires", post(create_questionnaire))
        .route("/v1/questionnaires/{patient_id}", get(get_questionnaire))
        .route("/v1/images", post(post_image))
        .route("/v1/images/{hash}", get(get_image))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_auth));
    Router::new()
        .merge(v1)
        .route("/v1/openapi.json", get(openapi))
        .route("/healthz", get(|| async { Json(json!({ "status": "ok" })) }))
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(state)
}

async fn require_auth(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.auth_token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token").into_response();
        }
    }
    next.run(req).await
}

async fn openapi() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/json")], OPENAPI)
}

fn new_job_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

/// `/a/0/b` for a field path written `a[0].b`.
fn field_pointer(field: &str) -> String {
    if field.starts_with('/') {
        return field.to_string();
    }
    let mut out = String::new();
    for part in field.split(['.', '[']) {
        out.push('/');
        out.push_str(part.trim_end_matches(']'));
    }
    out
}

fn domain_error(e: DomainError) -> ApiError {
    let pointer = match &e {
        DomainError::Schema { pointer, .. } => pointer.clone(),
        DomainError::Value { field, .. } => field_pointer(field),
        _ => String::new(),
    };
    ApiError::new(StatusCode::BAD_REQUEST, "schema", e.to_string()).with("pointer", json!(pointer))
}

#[derive(Deserialize)]
struct SubmitQuery {
    config: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct IdempotencyRecord {
    job_id: String,
}

async fn submit_job(
    State(state): State<AppState>,
    Query(q): Query<SubmitQuery>,
    headers: HeaderMap,
    body: Result<Bytes, BytesRejection>,
) -> Result<Response, ApiError> {
    let body = body_bytes(body)?;
    let config_id = q.config.unwrap_or_else(|| "default".into());
    if !state.runner.has_config(&config_id) {
        return Err(ApiError::bad_request(format!("unknown config `{config_id}`")));
    }
    let bundle = parse_bundle_json(&body, &BundleLoader::default()).map_err(domain_error)?;
    let store = state.runner.store();
    let mut job_id = new_job_id();
    if let Some(key) = headers.get("idempotency-key") {
        let key_id = hex::encode(Sha256::digest(key.as_bytes()));
        match store.put(IDEMPOTENCY, &key_id, None, &IdempotencyRecord { job_id: job_id.clone() }) {
            Ok(_) => {}
            Err(StoreError::Conflict { .. }) => {
                let rec = store
                    .get::<IdempotencyRecord>(IDEMPOTENCY, &key_id)?
                    .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "retry", "idempotency record in flux"))?;
                job_id = rec.document.job_id;
                // A crash between claiming the key and writing the job
                // leaves the key without a job; finish the submission.
                if store.get::<Value>(JOBS, &job_id)?.is_none() {
                    state.runner.submit(&job_id, &bundle, &config_id)?;
                }
                return Ok(accepted(&job_id));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let job = loop {
        match state.runner.submit(&job_id, &bundle, &config_id) {
            Ok(j) => break j,
            Err(StoreError::Conflict { .. }) => job_id = new_job_id(),
            Err(e) => return Err(e.into()),
        }
    };
    Ok(accepted(&job.job_id))
}

fn accepted(job_id: &str) -> Response {
    (
        StatusCode::ACCEPTED,
        [(header::LOCATION, format!("/v1/jobs/{job_id}"))],
        Json(json!({ "job_id": job_id })),
    )
        .into_response()
}

#[derive(Serialize)]
struct JobView {
    #[serde(flatten)]
    job: Job,
    revision: u64,
}

fn load_job(state: &AppState, id: &str) -> Result<StoreRecord<Job>, ApiError> {
    state.runner.store().get::<Job>(JOBS, id)?.ok_or_else(|| ApiError::not_found("job"))
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<JobView>, ApiError> {
    let rec = load_job(&state, &id)?;
    Ok(Json(JobView {
        job: rec.document,
        revision: rec.revision,
    }))
}

fn etag(revision: u64) -> HeaderValue {
    HeaderValue::from_str(&format!("\"{revision}\"")).expect("ascii")
}

fn negotiate(headers: &HeaderMap) -> RenderFormat {
    let accept = headers.get(header::ACCEPT).and_then(|v| v.to_str().ok()).unwrap_or("");
    if accept.contains("text/html") {
        RenderFormat::Html
    } else if accept.contains("text/plain") {
        RenderFormat::Text
    } else {
        RenderFormat::Json
    }
}

fn report_response(report: &Report, revision: u64, format: RenderFormat) -> Response {
    let content_type = match format {
        RenderFormat::Json => "application/json",
        RenderFormat::Text => "text/plain; charset=utf-8",
        RenderFormat::Html => "text/html; charset=utf-8",
    };
    let mut resp = render(report, format).into_response();
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static(content_type));
    h.insert(header::ETAG, etag(revision));
    h.insert("x-revision", HeaderValue::from(revision));
    resp
}

/// The report of a finished job. Reports of jobs still in flight are never
/// served, even when a previous attempt wrote one.
fn load_report(state: &AppState, id: &str) -> Result<StoreRecord<Report>, ApiError> {
    let job = load_job(state, id)?.document;
    let not_ready = || {
        ApiError::new(StatusCode::CONFLICT, "not_ready", format!("job is {}", job.state)).with("state", json!(job.state))
    };
    if !job.state.is_terminal() || job.report_ref.is_none() {
        return Err(not_ready());
    }
    state.runner.store().get::<Report>(REPORTS, id)?.ok_or_else(not_ready)
}

async fn get_report(State(state): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> Result<Response, ApiError> {
    let rec = load_report(&state, &id)?;
    Ok(report_response(&rec.document, rec.revision, negotiate(&headers)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EditRequest {
    target: EditTarget,
    old_text: String,
    new_text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReviewRequest {
    revision: u64,
    reviewer_id: String,
    #[serde(default)]
    edits: Vec<EditRequest>,
    #[serde(default)]
    status: Option<ReviewStatus>,
}

fn review_error(e: ReportError) -> ApiError {
    match e {
        ReportError::OldTextMismatch { .. } | ReportError::UnknownItem { .. } => {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "edit_rejected", e.to_string())
        }
        _ => ApiError::new(StatusCode::BAD_REQUEST, "illegal_transition", e.to_string()),
    }
}

async fn review_report(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Bytes, BytesRejection>,
) -> Result<Response, ApiError> {
    let body = body_bytes(body)?;
    let req: ReviewRequest = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    if req.reviewer_id.trim().is_empty() {
        return Err(ApiError::bad_request("reviewer_id is empty"));
    }
    let current = load_report(&state, &id)?;
    if current.revision != req.revision {
        return Err(ApiError::new(StatusCode::CONFLICT, "revision_conflict", "the report changed since it was fetched")
            .with("current_revision", json!(current.revision)));
    }
    let runner = &state.runner;
    let job = load_job(&state, &id)?.document;
    let parser = runner
        .pipeline(&job.config_id)
        .map(|p| p.parser().clone())
        .unwrap_or_else(holter_core::prompt::ItemParser::builtin);
    let mut report = current.document;
    let at = holter_core::pipeline::format_time(chrono::Utc::now());
    for e in req.edits {
        let edit = ItemEdit {
            target: e.target,
            old_text: e.old_text,
            new_text: e.new_text,
            editor_id: req.reviewer_id.clone(),
            timestamp: at.clone(),
        };
        apply_edit(&mut report, edit, &parser).map_err(review_error)?;
    }
    if let Some(to) = req.status {
        set_status(&mut report, to, &req.reviewer_id, &at).map_err(review_error)?;
    }
    let revision = runner.store().put(REPORTS, &id, Some(req.revision), &report)?;
    Ok(report_response(&report, revision, negotiate(&headers)))
}

fn load_ratings(state: &AppState) -> Result<Vec<Rating>, ApiError> {
    Ok(state
        .runner
        .store()
        .get::<Vec<Rating>>(RATINGS, "all")?
        .map(|r| r.document)
        .unwrap_or_default())
}

async fn post_ratings(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Result<Bytes, BytesRejection>,
) -> Result<Response, ApiError> {
    let body = body_bytes(body)?;
    let is_csv = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("text/csv"));
    let (rows, malformed): (Vec<(usize, Rating)>, Vec<RejectedRow>) = if is_csv {
        parse_ratings_csv(&body)
    } else {
        let items: Vec<Value> = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("expected a JSON array of ratings: {e}")))?;
        let mut rows = Vec::new();
        let mut bad = Vec::new();
        for (i, item) in items.into_iter().enumerate() {
            let parsed = serde_json::from_value::<Rating>(item)
                .map_err(|e| e.to_string())
                .and_then(|r| r.validate().map(|_| r).map_err(|e| e.to_string()));
            match parsed {
                Ok(r) => rows.push((i + 1, r)),
                Err(reason) => bad.push(RejectedRow { line: i + 1, reason }),
            }
        }
        (rows, bad)
    };
    if !malformed.is_empty() {
        let report = IngestReport {
            accepted: 0,
            rejected: malformed,
        };
        return Ok((StatusCode::BAD_REQUEST, Json(report)).into_response());
    }
    let mut report = IngestReport::default();
    state
        .runner
        .store()
        .update::<Vec<Rating>, (), _>(RATINGS, "all", |existing| {
            let mut set = RatingSet::new();
            for r in existing.unwrap_or_default() {
                let _ = set.insert(r);
            }
            report = set.insert_lines(rows);
            Ok(set.ratings().to_vec())
        })?
        .ok();
    Ok(Json(report).into_response())
}

#[derive(Deserialize)]
struct SubgroupQuery {
    group_by: String,
    #[serde(default)]
    std: Option<String>,
    #[serde(default)]
    format: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct AliasRecord {
    sealed: SealedAliasMap,
    subgroup: SubgroupKey,
}

fn aggregation_context(state: &AppState) -> Result<AggregationContext, ApiError> {
    let store = state.runner.store();
    let mut ctx = AggregationContext::default();
    for patient in store.list(ALIASES)? {
        if let Some(rec) = store.get::<AliasRecord>(ALIASES, &patient)? {
            let a = rec.document;
            ctx.alias_maps.insert(a.sealed.patient_id.clone(), a.sealed.aliases);
            ctx.subgroups.insert(a.sealed.patient_id, a.subgroup);
        }
    }
    Ok(ctx)
}

async fn subgroups(State(state): State<AppState>, Query(q): Query<SubgroupQuery>) -> Result<Response, ApiError> {
    let dims = q
        .group_by
        .split(',')
        .map(|s| s.trim().parse::<Dimension>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(ApiError::bad_request)?;
    if dims.is_empty() {
        return Err(ApiError::bad_request("group_by is empty"));
    }
    let std_kind = match q.std.as_deref() {
        None | Some("population") => StdKind::Population,
        Some("sample") => StdKind::Sample,
        Some(other) => return Err(ApiError::bad_request(format!("unknown std `{other}`"))),
    };
    let ratings = load_ratings(&state)?;
    let ctx = aggregation_context(&state)?;
    let rows = aggregate(&ratings, &dims, &ctx, std_kind);
    match q.format.as_deref() {
        None | Some("json") => Ok(Json(json!({ "group_by": dims, "rows": rows })).into_response()),
        Some("csv") => Ok(([(header::CONTENT_TYPE, "text/csv")], subgroup_csv(&rows, &dims)).into_response()),
        Some("heatmap") if dims.len() == 2 => Ok(Json(heatmap_json(&rows, dims[0], dims[1])).into_response()),
        Some("heatmap") => Err(ApiError::bad_request("heatmap needs exactly two group_by dimensions")),
        Some(other) => Err(ApiError::bad_request(format!("unknown format `{other}`"))),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QuestionnaireRequest {
    seed: u64,
    /// Model label to job id; every job must be a finished report of the
    /// same patient.
    reports: BTreeMap<String, String>,
}

async fn create_questionnaire(
    State(state): State<AppState>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Response, ApiError> {
    let body = body_bytes(body)?;
    let req: QuestionnaireRequest = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let mut reports = BTreeMap::new();
    let mut first_job = None;
    for (model, job_id) in &req.reports {
        reports.insert(model.clone(), load_report(&state, job_id)?.document);
        first_job.get_or_insert(job_id.clone());
    }
    let (questionnaire, sealed) =
        build_questionnaire(&reports, req.seed).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "questionnaire", e.to_string()))?;
    let store = state.runner.store();
    let job_id = first_job.expect("build_questionnaire rejects empty input");
    let bundle = store
        .get::<PatientBundle>(crate::jobs::BUNDLES, &job_id)?
        .ok_or_else(|| ApiError::not_found("bundle"))?
        .document;
    let bands = state
        .runner
        .pipeline(&load_job(&state, &job_id)?.document.config_id)
        .map(|p| p.age_bands())
        .unwrap_or_default();
    let subgroup = subgroup_key(&bundle, &ArrhythmiaTable::builtin(), &bands).map_err(domain_error)?;
    let patient = questionnaire.patient_id.clone();
    store.update::<AliasRecord, (), _>(ALIASES, &patient, |_| Ok(AliasRecord { sealed, subgroup }))?.ok();
    store.update::<Questionnaire, (), _>(QUESTIONNAIRES, &patient, |_| Ok(questionnaire.clone()))?.ok();
    Ok((StatusCode::CREATED, Json(questionnaire)).into_response())
}

async fn get_questionnaire(State(state): State<AppState>, Path(patient): Path<String>) -> Result<Json<Questionnaire>, ApiError> {
    state
        .runner
        .store()
        .get::<Questionnaire>(QUESTIONNAIRES, &patient)?
        .map(|r| Json(r.document))
        .ok_or_else(|| ApiError::not_found("questionnaire"))
}

fn sniff(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        "image/png"
    } else if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        "image/jpeg"
    } else {
        "application/octet-stream"
    }
}

async fn post_image(State(state): State<AppState>, body: Result<Bytes, BytesRejection>) -> Result<Response, ApiError> {
    let body = body_bytes(body)?;
    if body.is_empty() {
        return Err(ApiError::bad_request("empty image"));
    }
    let hex = state.runner.store().put_blob("images", &body)?;
    Ok((StatusCode::CREATED, Json(json!({ "hash": format!("sha256:{hex}"), "url": format!("/v1/images/{hex}") }))).into_response())
}

async fn get_image(State(state): State<AppState>, Path(hash): Path<String>) -> Result<Response, ApiError> {
    let hex = hash.trim_start_matches("sha256:");
    let bytes = state
        .runner
        .store()
        .get_blob("images", hex)?
        .ok_or_else(|| ApiError::not_found("image"))?;
    Ok(([(header::CONTENT_TYPE, sniff(&bytes))], bytes).into_response())
}
