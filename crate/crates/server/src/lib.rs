//! HTTP service: slice viewing, synthesis previews and reader-study sessions.
//!
//! Data directory layout:
//!
//! ```text
//! scans/<id>.nii[.gz]     CT volumes
//! livers/<id>.nii[.gz]    liver labels, needed for previews
//! bundles/<name>.json     reader-study answer keys
//! sessions/<id>.jsonl     session logs (written by the server)
//! ```

pub mod error;
pub mod render;
pub mod session;
pub mod state;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

pub use error::{ApiError, ApiResult};
pub use state::{AppState, BundleKey, PreviewRequest, ServerConfig};

use render::{render_slice, SliceQuery};
use session::{Judgment, SessionScan};

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/config", get(get_config))
        .route("/scans", get(list_scans))
        .route("/scans/{id}/slice", get(scan_slice))
        .route("/preview", post(create_preview))
        .route("/previews/{id}", get(get_preview))
        .route("/previews/{id}/slice", get(preview_slice))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/judge", post(judge))
        .route("/sessions/{id}/close", post(close_session))
        .route("/sessions/{id}/report", get(report))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await
}

/// JSON body parsing with 400 on any malformed input.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn get_config(State(st): State<Shared>) -> Json<Value> {
    Json(json!({ "config": st.config.gen }))
}

async fn list_scans(State(st): State<Shared>) -> Json<Value> {
    Json(json!({ "scans": st.scans() }))
}

async fn scan_slice(State(st): State<Shared>, Path(id): Path<String>, Query(q): Query<SliceQuery>) -> ApiResult<Response> {
    st.scan(&id)?;
    let bytes = blocking(move || {
        let v = st.volumes(&id)?;
        render_slice(&v.0, v.1.as_ref(), &q)
    })
    .await?;
    Ok(png(bytes))
}

fn preview_body(id: &str, p: &state::Preview) -> Value {
    json!({
        "preview_id": id,
        "slice_url": format!("/previews/{id}/slice"),
        "dims": p.ct.dims(),
        "provenance": p.provenance,
    })
}

async fn create_preview(State(st): State<Shared>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: PreviewRequest = parse_body(&body)?;
    for (i, t) in req.tumors.iter().enumerate() {
        t.validate().map_err(|e| ApiError::BadRequest(format!("tumor {i}: {e}")))?;
    }
    st.scan(&req.scan_id)?;
    let (id, p) = blocking(move || st.run_preview(req)).await?;
    Ok(Json(preview_body(&id, &p)))
}

async fn get_preview(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let p = blocking({
        let id = id.clone();
        move || st.preview(&id)
    })
    .await?;
    Ok(Json(preview_body(&id, &p)))
}

async fn preview_slice(State(st): State<Shared>, Path(id): Path<String>, Query(q): Query<SliceQuery>) -> ApiResult<Response> {
    let bytes = blocking(move || {
        let p = st.preview(&id)?;
        render_slice(&p.ct, Some(&p.labels), &q)
    })
    .await?;
    Ok(png(bytes))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    #[serde(default)]
    bundle: Option<String>,
    #[serde(default)]
    scans: Option<Vec<SessionScan>>,
}

async fn create_session(State(st): State<Shared>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: CreateSession = parse_body(&body)?;
    let scans = match (req.bundle, req.scans) {
        (Some(name), None) => st.bundle(&name)?,
        (None, Some(scans)) => scans,
        _ => return Err(ApiError::BadRequest("give exactly one of `bundle` or `scans`".into())),
    };
    let session = st.create_session(scans)?;
    let view = session.lock().unwrap().view();
    Ok((StatusCode::CREATED, Json(json!(view))))
}

async fn get_session(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let session = st.session(&id)?;
    let view = session.lock().unwrap().view();
    Ok(Json(json!(view)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JudgeRequest {
    scan_id: String,
    judgment: Judgment,
}

async fn judge(State(st): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let session = st.session(&id)?;
    let req: JudgeRequest = parse_body(&body)?;
    let mut s = session.lock().unwrap();
    s.judge(&req.scan_id, req.judgment)?;
    Ok(Json(json!(s.view())))
}

async fn close_session(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let session = st.session(&id)?;
    let mut s = session.lock().unwrap();
    s.close()?;
    Ok(Json(json!(s.view())))
}

async fn report(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let session = st.session(&id)?;
    let r = session.lock().unwrap().report()?;
    Ok(Json(json!(r)))
}
