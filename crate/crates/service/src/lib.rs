//! HTTP sessions for interactive segmentation.
//!
//! A session holds one uploaded image and its precomputed feature pyramid.
//! Scribble batches accumulate, and every accepted batch reruns the solver,
//! warm-started from the previous solution, and bumps the session revision.
//! Updates within a session are serialized; sessions run in parallel.

mod error;

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::header::{CONTENT_TYPE, ETAG, IF_MATCH, LOCATION};
use axum::http::{HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use lsm_core::data_terms::Scribbles;
use lsm_core::driver::{run_interactive, SolverConfig};
use lsm_core::io::{decode_mask_png, decode_png, encode_mask_png, png_dimensions, Polylines};
use lsm_core::pyramid::{build_pyramid, FeaturePyramid};
use lsm_core::synthetic::iou;
use lsm_core::Grid;
use serde::Serialize;
use tokio::sync::Mutex;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use error::ApiError;

pub const DEFAULT_PORT: u16 = 7430;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_width: usize,
    pub max_height: usize,
    pub max_body_bytes: usize,
    pub solver: SolverConfig,
    /// Origins allowed by CORS; empty disables the CORS layer.
    pub allow_origins: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_width: 1024,
            max_height: 1024,
            max_body_bytes: 64 << 20,
            solver: SolverConfig::default(),
            allow_origins: Vec::new(),
        }
    }
}

struct Session {
    width: usize,
    height: usize,
    pyramid: Arc<FeaturePyramid>,
    /// Accumulated scribble pixels, sorted and free of duplicates so the
    /// solver input depends only on the set of pixels.
    scribbles: Scribbles,
    last_solution: Option<Grid>,
    mask_png: Option<Vec<u8>>,
    revision: u64,
    ground_truth: Option<Grid>,
    deleted: bool,
}

type SessionHandle = Arc<Mutex<Session>>;

struct AppState {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, SessionHandle>>,
}

impl AppState {
    fn session(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.sessions
            .read()
            .expect("session map lock poisoned")
            .get(id)
            .cloned()
            .ok_or(ApiError::NotFound)
    }
}

/// Router with every endpoint; CORS is applied when origins are configured.
pub fn app(config: ServiceConfig) -> Result<Router, ApiError> {
    let cors = cors_layer(&config.allow_origins)?;
    let limit = config.max_body_bytes;
    let state = Arc::new(AppState {
        config,
        sessions: RwLock::new(HashMap::new()),
    });
    let router = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info).delete(delete_session))
        .route("/sessions/{id}/scribbles", post(add_scribbles))
        .route("/sessions/{id}/mask", get(get_mask))
        .route("/sessions/{id}/ground-truth", put(put_ground_truth))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state);
    Ok(match cors {
        Some(layer) => router.layer(layer),
        None => router,
    })
}

fn cors_layer(origins: &[String]) -> Result<Option<CorsLayer>, ApiError> {
    if origins.is_empty() {
        return Ok(None);
    }
    let values = origins
        .iter()
        .map(|o| HeaderValue::from_str(o).map_err(|_| ApiError::BadRequest(format!("invalid origin {o:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(
        CorsLayer::new()
            .allow_origin(AllowOrigin::list(values))
            .allow_methods([Method::GET, Method::POST, Method::PUT, Method::DELETE])
            .allow_headers([CONTENT_TYPE, IF_MATCH])
            .expose_headers([ETAG, LOCATION]),
    ))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Worker(e.to_string()))?
}

fn etag(revision: u64) -> HeaderValue {
    HeaderValue::from_str(&format!("\"{revision}\"")).expect("digits are a valid header")
}

#[derive(Serialize)]
struct Created {
    session_id: String,
    width: usize,
    height: usize,
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let (width, height) =
        png_dimensions(&body).map_err(|e| ApiError::BadRequest(format!("not a PNG image: {e}")))?;
    let cfg = &app.config;
    if width > cfg.max_width || height > cfg.max_height {
        return Err(ApiError::TooLarge {
            width,
            height,
            max_width: cfg.max_width,
            max_height: cfg.max_height,
        });
    }
    let pyramid_cfg = cfg.solver.pyramid.clone();
    let pyramid = blocking(move || {
        let image = decode_png(&body).map_err(|e| ApiError::BadRequest(format!("undecodable PNG: {e}")))?;
        build_pyramid(&image, &pyramid_cfg).map_err(|e| ApiError::BadRequest(format!("unusable image: {e}")))
    })
    .await?;

    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session {
        width,
        height,
        pyramid: Arc::new(pyramid),
        scribbles: Scribbles::default(),
        last_solution: None,
        mask_png: None,
        revision: 0,
        ground_truth: None,
        deleted: false,
    };
    app.sessions
        .write()
        .expect("session map lock poisoned")
        .insert(id.clone(), Arc::new(Mutex::new(session)));
    let location = HeaderValue::from_str(&format!("/sessions/{id}")).expect("hex id is a valid header");
    Ok((
        StatusCode::CREATED,
        [(LOCATION, location)],
        Json(Created { session_id: id, width, height }),
    )
        .into_response())
}

#[derive(Serialize)]
struct Info {
    width: usize,
    height: usize,
    revision: u64,
    has_mask: bool,
    has_ground_truth: bool,
}

async fn session_info(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Info>, ApiError> {
    let handle = app.session(&id)?;
    let s = handle.lock().await;
    if s.deleted {
        return Err(ApiError::NotFound);
    }
    Ok(Json(Info {
        width: s.width,
        height: s.height,
        revision: s.revision,
        has_mask: s.mask_png.is_some(),
        has_ground_truth: s.ground_truth.is_some(),
    }))
}

async fn delete_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let handle = app
        .sessions
        .write()
        .expect("session map lock poisoned")
        .remove(&id)
        .ok_or(ApiError::NotFound)?;
    // requests already holding the handle see the flag once they get the lock
    handle.lock().await.deleted = true;
    Ok(StatusCode::NO_CONTENT)
}

/// Parses `If-Match: 3` or `If-Match: "3"`.
fn expected_revision(headers: &HeaderMap) -> Result<Option<u64>, ApiError> {
    let Some(value) = headers.get(IF_MATCH) else {
        return Ok(None);
    };
    let text = value
        .to_str()
        .map_err(|_| ApiError::BadRequest("If-Match is not ASCII".into()))?
        .trim()
        .trim_start_matches("W/")
        .trim_matches('"');
    text.parse()
        .map(Some)
        .map_err(|_| ApiError::BadRequest(format!("If-Match must be a revision number, got {text:?}")))
}

fn merge(into: &mut Vec<(usize, usize)>, added: &[(usize, usize)]) {
    into.extend_from_slice(added);
    into.sort_unstable();
    into.dedup();
}

#[derive(Serialize)]
struct MaskResponse {
    mask: String,
    revision: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    iou_estimate: Option<f64>,
}

async fn add_scribbles(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(batch): Json<Polylines>,
) -> Result<Response, ApiError> {
    let handle = app.session(&id)?;
    let mut s = handle.lock().await;
    if s.deleted {
        return Err(ApiError::NotFound);
    }
    if let Some(expected) = expected_revision(&headers)? {
        if expected != s.revision {
            return Err(ApiError::Conflict(format!(
                "If-Match revision {expected} does not match current revision {}",
                s.revision
            )));
        }
    }
    if batch.is_empty() || batch.foreground.iter().chain(&batch.background).any(Vec::is_empty) {
        return Err(ApiError::Unprocessable("scribble batch contains no points".into()));
    }
    let added = batch
        .rasterize(s.width, s.height)
        .map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    let mut scribbles = s.scribbles.clone();
    merge(&mut scribbles.foreground, &added.foreground);
    merge(&mut scribbles.background, &added.background);
    if scribbles.foreground.is_empty() || scribbles.background.is_empty() {
        return Err(ApiError::Unprocessable(
            "at least one foreground and one background scribble are required".into(),
        ));
    }

    let pyramid = Arc::clone(&s.pyramid);
    let initial = s.last_solution.clone();
    let size = (s.width, s.height);
    let cfg = app.config.solver.clone();
    let solve_input = scribbles.clone();
    let (solution, mask) = blocking(move || {
        let result = run_interactive(&pyramid, &solve_input, size, &cfg, initial.as_ref())?;
        let mask = result.mask()?;
        Ok((result.solution, mask))
    })
    .await?;
    let png = encode_mask_png(&mask)?;
    let iou_estimate = match &s.ground_truth {
        Some(gt) => Some(iou(&mask, gt)?),
        None => None,
    };

    s.scribbles = scribbles;
    s.last_solution = Some(solution);
    s.revision += 1;
    let body = MaskResponse {
        mask: BASE64.encode(&png),
        revision: s.revision,
        iou_estimate,
    };
    s.mask_png = Some(png);
    Ok(([(ETAG, etag(s.revision))], Json(body)).into_response())
}

async fn get_mask(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let handle = app.session(&id)?;
    let s = handle.lock().await;
    if s.deleted {
        return Err(ApiError::NotFound);
    }
    let png = s
        .mask_png
        .clone()
        .ok_or_else(|| ApiError::Conflict("no mask yet: add scribbles first".into()))?;
    Ok((
        [(CONTENT_TYPE, HeaderValue::from_static("image/png")), (ETAG, etag(s.revision))],
        png,
    )
        .into_response())
}

/// Registers a reference mask so scribble responses carry an IoU estimate.
async fn put_ground_truth(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<StatusCode, ApiError> {
    let handle = app.session(&id)?;
    let mut s = handle.lock().await;
    if s.deleted {
        return Err(ApiError::NotFound);
    }
    let mask = decode_mask_png(&body).map_err(|e| ApiError::BadRequest(format!("not a PNG mask: {e}")))?;
    if (mask.width(), mask.height()) != (s.width, s.height) {
        return Err(ApiError::Unprocessable(format!(
            "mask is {}x{}, session image is {}x{}",
            mask.width(),
            mask.height(),
            s.width,
            s.height
        )));
    }
    s.ground_truth = Some(mask);
    Ok(StatusCode::NO_CONTENT)
}
