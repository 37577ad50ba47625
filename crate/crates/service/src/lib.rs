//! HTTP API over the moderated draft workflow.
//!
//! Every error response is `{"code": .., "message": ..}` with a status that
//! follows the error kind; mutations carry the draft version they were based
//! on as `expected_version`.

use std::net::SocketAddr;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use edukg::hitl::{ConceptQuery, HitlError, HitlService};
use edukg::layout::{extract_slides, GlyphDocument};
use edukg::model::{MaterialId, PipelineMode};
use serde::Deserialize;
use serde_json::json;

pub const DEFAULT_SLIDE_K: usize = 5;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code,
            message: message.into(),
        }
    }
}

impl From<HitlError> for ApiError {
    fn from(e: HitlError) -> Self {
        let status = match &e {
            HitlError::UnknownMaterial(_)
            | HitlError::UnknownDraft(_)
            | HitlError::UnknownConcept(_)
            | HitlError::NotPublished(_) => StatusCode::NOT_FOUND,
            HitlError::DuplicateMaterial(_)
            | HitlError::ConflictActiveDraft { .. }
            | HitlError::NotReady(_)
            | HitlError::VersionConflict { .. }
            | HitlError::DraftImmutable => StatusCode::CONFLICT,
            HitlError::Unresolvable(_) | HitlError::BadSlideIndex { .. } | HitlError::PipelineFailed(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            HitlError::Service(_) => StatusCode::BAD_GATEWAY,
            HitlError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            code: e.code(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

/// Runs a blocking service call off the async workers.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, HitlError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "INTERNAL",
            message: e.to_string(),
        })?
        .map_err(ApiError::from)
}

pub fn router(service: HitlService) -> Router {
    Router::new()
        .route("/materials", post(create_material))
        .route("/materials/:id/drafts", post(create_draft))
        .route("/materials/:id/edukg", get(material_edukg))
        .route("/materials/:id/slides/:n/edukg", get(slide_edukg))
        .route("/drafts/:id", get(get_draft))
        .route("/drafts/:id/concepts", get(list_concepts).post(add_concept))
        .route("/drafts/:id/concepts/:uri", delete(remove_concept))
        .route("/drafts/:id/finalize", post(finalize))
        .with_state(service)
}

pub async fn serve(addr: SocketAddr, service: HitlService) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service)).await
}

/// Body: a glyph document (JSON lines).
async fn create_material(State(service): State<HitlService>, body: String) -> ApiResult {
    let doc = GlyphDocument::parse(&body).map_err(|e| ApiError::bad_request("BAD_DOCUMENT", e.to_string()))?;
    let material = extract_slides(&doc).map_err(|e| ApiError::bad_request("BAD_DOCUMENT", e.to_string()))?;
    let slides = material.num_slides();
    let title = material.title().to_string();
    let id = blocking(move || service.ingest(material)).await?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "material_id": id.0, "title": title, "slides": slides })),
    )
        .into_response())
}

#[derive(Deserialize)]
struct ModeQuery {
    mode: Option<String>,
}

async fn create_draft(
    State(service): State<HitlService>,
    Path(id): Path<String>,
    Query(q): Query<ModeQuery>,
) -> ApiResult {
    let mode: PipelineMode = match q.mode.as_deref() {
        None => PipelineMode::BottomUp,
        Some(m) => m.parse().map_err(|e: String| ApiError::bad_request("BAD_MODE", e))?,
    };
    let view = blocking(move || {
        let draft = service.create_draft(&MaterialId::new(id), mode)?;
        service.get_draft(&draft)
    })
    .await?;
    Ok((StatusCode::ACCEPTED, Json(view)).into_response())
}

async fn get_draft(State(service): State<HitlService>, Path(id): Path<String>) -> ApiResult {
    let view = blocking(move || service.get_draft(&id)).await?;
    Ok(Json(view).into_response())
}

async fn list_concepts(State(service): State<HitlService>, Path(id): Path<String>) -> ApiResult {
    let (version, concepts) = blocking(move || {
        let concepts = service.list_concepts(&id)?;
        Ok((service.get_draft(&id)?.version, concepts))
    })
    .await?;
    Ok(Json(json!({ "version": version, "concepts": concepts })).into_response())
}

#[derive(Deserialize)]
struct VersionQuery {
    expected_version: Option<u64>,
}

fn require_version(v: Option<u64>) -> Result<u64, ApiError> {
    v.ok_or_else(|| ApiError::bad_request("MISSING_VERSION", "expected_version is required"))
}

async fn remove_concept(
    State(service): State<HitlService>,
    Path((id, uri)): Path<(String, String)>,
    Query(q): Query<VersionQuery>,
) -> ApiResult {
    let expected = require_version(q.expected_version)?;
    let version = blocking(move || service.remove_concept(&id, &uri, expected)).await?;
    Ok(Json(json!({ "version": version })).into_response())
}

#[derive(Deserialize)]
struct AddConceptBody {
    /// A resource uri or free text to link.
    query: String,
    #[serde(default)]
    slides: Vec<usize>,
    expected_version: Option<u64>,
}

async fn add_concept(
    State(service): State<HitlService>,
    Path(id): Path<String>,
    Json(body): Json<AddConceptBody>,
) -> ApiResult {
    let expected = require_version(body.expected_version)?;
    let query = ConceptQuery::parse(&body.query);
    let version = blocking(move || service.add_concept(&id, &query, &body.slides, expected)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "version": version }))).into_response())
}

#[derive(Deserialize)]
struct FinalizeBody {
    expected_version: Option<u64>,
}

async fn finalize(
    State(service): State<HitlService>,
    Path(id): Path<String>,
    Json(body): Json<FinalizeBody>,
) -> ApiResult {
    let expected = require_version(body.expected_version)?;
    let publication = blocking(move || service.finalize(&id, expected)).await?;
    Ok(Json(publication).into_response())
}

async fn material_edukg(State(service): State<HitlService>, Path(id): Path<String>) -> ApiResult {
    let graph = blocking(move || service.published_graph(&MaterialId::new(id))).await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], graph.to_document()).into_response())
}

#[derive(Deserialize)]
struct KQuery {
    k: Option<usize>,
}

async fn slide_edukg(
    State(service): State<HitlService>,
    Path((id, n)): Path<(String, usize)>,
    Query(q): Query<KQuery>,
) -> ApiResult {
    let k = q.k.unwrap_or(DEFAULT_SLIDE_K);
    let material = id.clone();
    let concepts = blocking(move || service.slide_concepts(&MaterialId::new(id), n, k)).await?;
    Ok(Json(json!({ "material_id": material, "slide": n, "k": k, "concepts": concepts })).into_response())
}
