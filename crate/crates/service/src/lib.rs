//! Inference-only HTTP service over a loaded screening model and a catalog
//! of knowledge bases.
//!
//! | Method | Path          | Body                    |
//! |--------|---------------|-------------------------|
//! | GET    | `/health`     |                         |
//! | GET    | `/model/info` |                         |
//! | GET    | `/kb`         |                         |
//! | POST   | `/kb/select`  | `{"name": "..."}`       |
//! | POST   | `/predict`    | one dataset-line object |
//!
//! Every other path is served from the static UI directory when one is
//! configured. Errors are `{code, message, field?}` JSON bodies.

mod error;
mod state;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use nutrigraph::data::{parse_record, AnthroTarget};
use nutrigraph::gat::{ModelConfig, CHECKPOINT_VERSION};
use nutrigraph::predict::{predict, PredictionResult};
use nutrigraph::retrieval::RetrievalConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tower_http::services::ServeDir;

pub use error::{ApiError, ErrorBody};
pub use state::{load_files, parse_kb_spec, LoadError, ServiceState, Snapshot};

pub const SERVICE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Length of the hex prefix used for anonymized neighbor ids.
const ANON_ID_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub kb: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbInfo {
    pub name: String,
    pub size: usize,
    pub metric: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbCatalog {
    pub active: Option<String>,
    pub kbs: Vec<KbInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbSelect {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub version: String,
    pub checkpoint_version: u32,
    pub architecture: String,
    pub config: ModelConfig,
    pub num_parameters: usize,
    pub threshold: f64,
    pub alpha_reg: Vec<f64>,
    pub retrieval_enabled: bool,
    pub retrieval: RetrievalConfig,
    pub kb: Option<KbInfo>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Healthy,
    Malnourished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub target: String,
    pub unit: String,
    /// Fused value in `unit`.
    pub value: f64,
    pub gat_value: f64,
    pub retrieved_value: Option<f64>,
    /// True when at least one neighbor carried this target, so `value`
    /// includes a retrieval component.
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborView {
    pub rank: usize,
    /// Stable hash of the KB name and subject id.
    pub id: String,
    pub distance: f64,
    pub has_class_label: bool,
    pub class_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResponse {
    pub subject_id: String,
    pub gat_probability: f64,
    pub retrieved_score: Option<f64>,
    pub alpha_cls: Option<f64>,
    pub fused_probability: f64,
    pub threshold: f64,
    pub decision: Decision,
    pub measurements: Vec<Measurement>,
    pub alpha_reg: Vec<f64>,
    pub mean_distance: Option<f64>,
    pub neighbors: Vec<NeighborView>,
    pub kb: Option<String>,
    pub timing_ms: f64,
}

pub fn anonymize(kb_name: &str, subject_id: &str) -> String {
    let mut h = Sha256::new();
    h.update(kb_name.as_bytes());
    h.update([0u8]);
    h.update(subject_id.as_bytes());
    let mut id = hex::encode(h.finalize());
    id.truncate(ANON_ID_LEN);
    id
}

impl PredictionResponse {
    pub fn from_result(r: &PredictionResult, kb: Option<&str>, timing_ms: f64) -> Self {
        let measurements = AnthroTarget::ALL
            .iter()
            .map(|&t| Measurement {
                target: t.name().to_string(),
                unit: t.unit().to_string(),
                value: r.fused_reg[t.index()],
                gat_value: r.gat_reg[t.index()],
                retrieved_value: r.retrieved_reg[t.index()],
                valid: r.retrieved_reg[t.index()].is_some(),
            })
            .collect();
        let kb_name = kb.unwrap_or_default();
        PredictionResponse {
            subject_id: r.subject_id.clone(),
            gat_probability: r.gat_probability,
            retrieved_score: r.retrieved_score,
            alpha_cls: r.alpha_cls,
            fused_probability: r.fused_probability,
            threshold: r.threshold,
            decision: if r.decision == 1 {
                Decision::Malnourished
            } else {
                Decision::Healthy
            },
            measurements,
            alpha_reg: r.alpha_reg.clone(),
            mean_distance: r.mean_distance,
            neighbors: r
                .neighbors
                .iter()
                .map(|n| NeighborView {
                    rank: n.rank,
                    id: anonymize(kb_name, &n.subject_id),
                    distance: n.distance,
                    has_class_label: n.class_label.is_some(),
                    class_weight: n.class_weight,
                })
                .collect(),
            kb: r.retrieval_used.then(|| kb_name.to_string()),
            timing_ms,
        }
    }
}

type AppState = Arc<ServiceState>;

fn kb_info(name: &str, kb: &nutrigraph::kb::KnowledgeBase) -> KbInfo {
    KbInfo {
        name: name.to_string(),
        size: kb.len(),
        metric: kb.metric().to_string(),
        dim: kb.dim(),
    }
}

async fn health(State(state): State<AppState>) -> Result<Json<Health>, ApiError> {
    let snap = state.require()?;
    Ok(Json(Health {
        status: "ok".into(),
        kb: snap.active.clone(),
    }))
}

async fn model_info(State(state): State<AppState>) -> Result<Json<ModelInfo>, ApiError> {
    let snap = state.require()?;
    let m = &snap.model;
    Ok(Json(ModelInfo {
        version: SERVICE_VERSION.into(),
        checkpoint_version: CHECKPOINT_VERSION,
        architecture: m.config.arch_label(),
        config: m.config.clone(),
        num_parameters: m.params.num_parameters(),
        threshold: m.threshold,
        alpha_reg: m.alpha_reg(),
        retrieval_enabled: m.retrieval_enabled,
        retrieval: m.retrieval,
        kb: snap.active.as_deref().zip(snap.kb()).map(|(n, kb)| kb_info(n, kb)),
    }))
}

async fn list_kbs(State(state): State<AppState>) -> Result<Json<KbCatalog>, ApiError> {
    let snap = state.require()?;
    Ok(Json(KbCatalog {
        active: snap.active.clone(),
        kbs: snap.kbs.iter().map(|(n, kb)| kb_info(n, kb)).collect(),
    }))
}

fn json_rejection(rejection: JsonRejection) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, "malformed", rejection.body_text())
}

async fn select_kb(
    State(state): State<AppState>,
    body: Result<Json<KbSelect>, JsonRejection>,
) -> Result<Json<KbCatalog>, ApiError> {
    let Json(req) = body.map_err(json_rejection)?;
    let snap = state.select_kb(&req.name)?;
    log::info!("active knowledge base is now {:?}", req.name);
    Ok(Json(KbCatalog {
        active: snap.active.clone(),
        kbs: snap.kbs.iter().map(|(n, kb)| kb_info(n, kb)).collect(),
    }))
}

/// Accepts the subject either bare or wrapped as `{"subject": {...}}`.
fn unwrap_subject(body: &str) -> Result<String, ApiError> {
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed", e.to_string()))?;
    match value {
        serde_json::Value::Object(mut map) if !map.contains_key("poses") && map.contains_key("subject") => {
            Ok(map.remove("subject").expect("checked key").to_string())
        }
        serde_json::Value::Object(_) => Ok(body.to_string()),
        _ => Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "malformed",
            "request body must be a JSON object",
        )),
    }
}

async fn handle_predict(State(state): State<AppState>, body: String) -> Result<Json<PredictionResponse>, ApiError> {
    let start = Instant::now();
    let snap = state.require()?;
    let subject = unwrap_subject(&body)?;
    let record = parse_record(&subject, snap.model.config.in_dim - 1).map_err(ApiError::from_record_error)?;
    let snap2 = Arc::clone(&snap);
    let result = tokio::task::spawn_blocking(move || predict(&snap2.model, snap2.kb().map(|kb| kb.as_ref()), &record))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| match e {
            nutrigraph::Error::Dimension { .. } | nutrigraph::Error::DimensionMismatch { .. } => {
                ApiError::from_record_error(e)
            }
            other => ApiError::internal(other.to_string()),
        })?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(Json(PredictionResponse::from_result(&result, snap.active.as_deref(), ms)))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

/// Builds the application router. `static_dir` holds the built UI.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/model/info", get(model_info))
        .route("/kb", get(list_kbs))
        .route("/kb/select", post(select_kb))
        .route("/predict", post(handle_predict))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api.fallback(not_found),
    }
}

/// Serves until Ctrl-C.
pub async fn serve(state: AppState, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
