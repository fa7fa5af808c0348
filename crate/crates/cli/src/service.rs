//! HTTP API for the latent explorer.
//!
//! | method | path                 | response                                   |
//! |--------|----------------------|--------------------------------------------|
//! | GET    | `/health`            | `{"status":"ok","checkpoint_id":...}`      |
//! | GET    | `/meta`              | latent size, regularized dims, statistics  |
//! | GET    | `/projection`        | the projection JSON                        |
//! | GET    | `/notes/{id}/latent` | `{"z":[...]}`                              |
//! | POST   | `/decode`            | WAV bytes, or `{"repr":[[...]]}` as JSON   |
//!
//! The checkpoint is loaded once and shared read-only between requests.

use std::collections::HashMap;
use std::sync::Arc;

use anyhow::anyhow;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use timbre_core::descriptors::DescriptorStats;
use timbre_core::eval::Projection;
use timbre_core::vae::{RegMode, VaeCheckpoint};
use tower_http::cors::CorsLayer;

use crate::{decode_latent, Failure};

pub const REPR_SHAPE_HEADER: &str = "x-repr-shape";

pub struct AppState {
    ckpt: VaeCheckpoint,
    checkpoint_id: String,
    projection: Projection,
    by_id: HashMap<String, usize>,
}

impl AppState {
    /// Fails if the projection was built from a different checkpoint.
    pub fn new(ckpt: VaeCheckpoint, projection: Projection) -> Result<Arc<Self>, Failure> {
        let checkpoint_id = ckpt.checkpoint_id();
        if projection.meta.checkpoint_id != checkpoint_id {
            return Err(anyhow!(
                "projection was built from checkpoint {}, not {checkpoint_id}",
                projection.meta.checkpoint_id
            )
            .into());
        }
        let dim = ckpt.config().latent_dim;
        if let Some(p) = projection.points.iter().find(|p| p.z.len() != dim) {
            return Err(anyhow!("projection point {} has {} latent values, expected {dim}", p.id, p.z.len()).into());
        }
        let by_id = projection.points.iter().enumerate().map(|(i, p)| (p.id.clone(), i)).collect();
        Ok(Arc::new(Self {
            ckpt,
            checkpoint_id,
            projection,
            by_id,
        }))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/meta", get(meta))
        .route("/projection", get(projection))
        .route("/notes/{id}/latent", get(note_latent))
        .route("/decode", post(decode))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

async fn health(State(s): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "status": "ok", "checkpoint_id": s.checkpoint_id }))
}

#[derive(Serialize)]
struct Meta<'a> {
    latent_dim: usize,
    regularized_dims: Vec<usize>,
    descriptor_stats: &'a DescriptorStats,
    families: Vec<&'a str>,
}

async fn meta(State(s): State<Arc<AppState>>) -> Json<Value> {
    let mut families: Vec<&str> = s.projection.points.iter().map(|p| p.family.as_str()).collect();
    families.sort_unstable();
    families.dedup();
    let regularized_dims = match s.ckpt.config().reg_mode {
        RegMode::LatentAttribute => vec![0, 1],
        _ => Vec::new(),
    };
    Json(
        serde_json::to_value(Meta {
            latent_dim: s.ckpt.config().latent_dim,
            regularized_dims,
            descriptor_stats: &s.ckpt.descriptor_stats,
            families,
        })
        .unwrap_or(Value::Null),
    )
}

async fn projection(State(s): State<Arc<AppState>>) -> Json<Projection> {
    Json(s.projection.clone())
}

async fn note_latent(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match s.by_id.get(&id) {
        Some(&i) => Json(json!({ "z": s.projection.points[i].z })).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown note {id}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Wav,
    Json,
}

#[derive(Debug, Deserialize)]
struct DecodeQuery {
    format: Option<Format>,
}

/// Reads `{"z": [...], "format": "wav"|"json"}` by hand so that every
/// malformed body gets the same JSON error shape.
fn parse_decode_body(body: &[u8]) -> Result<(Vec<f32>, Option<Format>), String> {
    let v: Value = serde_json::from_slice(body).map_err(|e| format!("body is not JSON: {e}"))?;
    let obj = v.as_object().ok_or("body must be a JSON object")?;
    let z = obj
        .get("z")
        .and_then(Value::as_array)
        .ok_or("body needs a \"z\" array")?
        .iter()
        .map(|x| x.as_f64().map(|f| f as f32).ok_or("\"z\" must contain only numbers"))
        .collect::<Result<Vec<f32>, _>>()?;
    let format = match obj.get("format") {
        None | Some(Value::Null) => None,
        Some(f) => Some(serde_json::from_value(f.clone()).map_err(|_| "\"format\" must be \"wav\" or \"json\"")?),
    };
    Ok((z, format))
}

async fn decode(State(s): State<Arc<AppState>>, Query(q): Query<DecodeQuery>, body: Bytes) -> Response {
    let (z, body_format) = match parse_decode_body(&body) {
        Ok(v) => v,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let format = q.format.or(body_format).unwrap_or(Format::Wav);
    let state = s.clone();
    let decoded = match tokio::task::spawn_blocking(move || decode_latent(&state.ckpt, &z)).await {
        Ok(Ok(d)) => d,
        Ok(Err(e @ Failure::MalformedLatent(_))) => return error(StatusCode::BAD_REQUEST, e.to_string()),
        Ok(Err(e)) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    let shape = HeaderValue::from_str(&format!("{}x{}", decoded.repr.frames, decoded.repr.channels()))
        .expect("ascii header");
    let mut resp = match format {
        Format::Wav => ([(header::CONTENT_TYPE, "audio/wav")], decoded.wav).into_response(),
        Format::Json => {
            let rows: Vec<&[f32]> = decoded.repr.values.chunks(decoded.repr.channels()).collect();
            Json(json!({ "repr": rows })).into_response()
        }
    };
    resp.headers_mut().insert(REPR_SHAPE_HEADER, shape);
    resp
}
