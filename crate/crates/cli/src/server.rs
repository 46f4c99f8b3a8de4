//! HTTP API over one loaded image pair.
//!
//! | route | answer |
//! |---|---|
//! | `GET /patches` | patch list with rectangles and effective parameters |
//! | `GET /patch/{id}/image?layer=image\|seg` | patch crop as PNG |
//! | `POST /patch/{id}/cluster` | body: parameter overrides; reply: [`ClusterReply`] |
//! | `GET /kernel/preview?H=&sigma=&n=&n_theta=&seed=&scale=` | kernel projection PNG |
//!
//! Errors are JSON objects `{"error": "...", "field": "..."}`; parameter
//! problems are 422, unknown patches 404.

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use vesselunits::error::Error as EngineError;
use vesselunits::imageio::{encode_png, Image2D, Rect, SoftSegmentation};
use vesselunits::kernel::{min_radius, KernelParams};
use vesselunits::patches::PatchSpec;
use vesselunits::pipeline::{find_patches, run_patch_cached, ClusterParams, KernelCache, ParamOverrides, RunParams};
use vesselunits::render::kernel_preview_png;
use vesselunits::report::ClusterReply;

/// Largest path count a preview may ask for.
pub const MAX_PREVIEW_PATHS: usize = 1_000_000;
/// Largest path length a preview may ask for.
pub const MAX_PREVIEW_STEPS: usize = 100;
const MAX_PREVIEW_SCALE: usize = 16;

/// Everything the service holds: the image pair, its patches, the configured
/// parameters and the shared kernel cache.
pub struct AppState {
    pub image: Image2D,
    pub seg: SoftSegmentation,
    pub patches: Vec<PatchSpec>,
    pub params: RunParams,
    pub cache: KernelCache,
}

impl AppState {
    /// Finds the patches of `image`/`seg` once, up front.
    pub fn new(image: Image2D, seg: SoftSegmentation, params: RunParams, cache: KernelCache) -> anyhow::Result<Self> {
        let patches = find_patches(&seg)?.patches;
        Ok(Self {
            image,
            seg,
            patches,
            params,
            cache,
        })
    }

    fn patch(&self, id: usize) -> Result<&PatchSpec, ApiError> {
        self.patches
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no patch {id}")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/patches", get(list_patches))
        .route("/patch/{id}/image", get(patch_image))
        .route("/patch/{id}/cluster", post(cluster))
        .route("/kernel/preview", get(kernel_preview))
        .with_state(state)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                field: None,
            },
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let field = match &e {
            EngineError::InvalidParameter { field, .. } => Some(field.to_string()),
            _ => None,
        };
        let status = match &e {
            EngineError::InvalidParameter { .. }
            | EngineError::DegenerateHistogram
            | EngineError::TooFewPoints(_)
            | EngineError::EmptyMask => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            body: ErrorBody {
                error: e.to_string(),
                field,
            },
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PatchListing {
    pub id: usize,
    pub center: [f64; 2],
    pub size: usize,
    pub members: Vec<[usize; 2]>,
    pub rect: Option<Rect>,
    /// Parameters a cluster request without overrides would use.
    pub params: ClusterParams,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PatchList {
    pub width: usize,
    pub height: usize,
    pub patches: Vec<PatchListing>,
}

async fn list_patches(State(state): State<Arc<AppState>>) -> Json<PatchList> {
    let (w, h) = state.image.dims();
    Json(PatchList {
        width: w,
        height: h,
        patches: state
            .patches
            .iter()
            .map(|p| PatchListing {
                id: p.id,
                center: p.center,
                size: p.size,
                members: p.members.clone(),
                rect: p.rect(w, h),
                params: state.params.for_patch(p.id),
            })
            .collect(),
    })
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Layer {
    #[default]
    Image,
    Seg,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageQuery {
    #[serde(default)]
    layer: Layer,
}

async fn patch_image(
    State(state): State<Arc<AppState>>,
    Path(id): Path<usize>,
    query: Result<Query<ImageQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(query) = query?;
    let spec = state.patch(id)?;
    let (w, h) = state.image.dims();
    let rect = spec
        .rect(w, h)
        .ok_or_else(|| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("patch {id} lies outside the image")))?;
    let source = match query.layer {
        Layer::Image => &state.image,
        Layer::Seg => state.seg.image(),
    };
    let crop = source.crop(rect)?;
    Ok(png(encode_png(rect.width, rect.height, &crop.to_u8(), false)?))
}

async fn cluster(
    State(state): State<Arc<AppState>>,
    Path(id): Path<usize>,
    body: Result<Json<ParamOverrides>, JsonRejection>,
) -> Result<Json<ClusterReply>, ApiError> {
    let Json(overrides) = body?;
    let spec = state.patch(id)?.clone();
    let params = overrides.apply(&state.params.for_patch(id));
    params.validate()?;
    let reply = tokio::task::spawn_blocking(move || {
        run_patch_cached(&state.image, &state.seg, &spec, &params, &state.cache).map(|r| ClusterReply::from(&r))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(reply))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PreviewQuery {
    #[serde(rename = "H")]
    h: Option<usize>,
    sigma: Option<f64>,
    n: Option<usize>,
    n_theta: Option<usize>,
    delta_s: Option<f64>,
    seed: Option<u64>,
    scale: Option<usize>,
}

async fn kernel_preview(
    State(state): State<Arc<AppState>>,
    query: Result<Query<PreviewQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query?;
    let d = state.params.defaults;
    let h = q.h.or(d.h).unwrap_or(7);
    let delta_s = q.delta_s.unwrap_or(d.delta_s);
    let params = KernelParams {
        h,
        n_paths: q.n.unwrap_or(d.n_paths),
        sigma: q.sigma.unwrap_or(d.sigma),
        delta_s,
        n_theta: q.n_theta.unwrap_or(d.n_theta),
        grid_radius: min_radius(h, delta_s),
        seed: q.seed.unwrap_or(d.seed),
    };
    let limit = |field: &str, what: String| ApiError {
        status: StatusCode::UNPROCESSABLE_ENTITY,
        body: ErrorBody {
            error: what,
            field: Some(field.into()),
        },
    };
    if params.n_paths > MAX_PREVIEW_PATHS {
        return Err(limit("n", format!("previews use at most {MAX_PREVIEW_PATHS} paths")));
    }
    if params.h > MAX_PREVIEW_STEPS {
        return Err(limit("H", format!("previews use at most {MAX_PREVIEW_STEPS} steps")));
    }
    let scale = q.scale.unwrap_or(4);
    if !(1..=MAX_PREVIEW_SCALE).contains(&scale) {
        return Err(limit("scale", format!("scale must be in 1..={MAX_PREVIEW_SCALE}")));
    }
    params.validate()?;
    let bytes = tokio::task::spawn_blocking(move || {
        let grid = state.cache.get(params)?;
        kernel_preview_png(&grid, scale)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(png(bytes))
}
