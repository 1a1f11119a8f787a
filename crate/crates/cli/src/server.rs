//! HTTP service: `GET /health`, `GET /levels`, `POST /protect`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use mamc_core::diffusion::remote::RemoteOracle;
use mamc_core::eval::{MetricReport, Protocol};
use mamc_core::protector::Checkpoint;
use mamc_core::training::{BankEntry, BankManifest, MANIFEST_FILE};
use mamc_core::{ImageTensor, OracleConfig, OracleWeights, Protector};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

pub const MAX_PAYLOAD: usize = 8 * 1024 * 1024;
pub const PREVIEW_STRENGTH: u8 = 5;
pub const PREVIEW_SEED: u64 = 0x5eed;
pub const DEFAULT_ORACLE_CONCURRENCY: usize = 2;
pub const TOKEN_ENV: &str = "MAMC_TOKEN";

/// A loaded balance bank: manifest plus one protector per available level.
pub struct Bank {
    pub manifest: BankManifest,
    pub protectors: BTreeMap<u32, Protector>,
}

impl Bank {
    /// Loads `bank.json` and every available checkpoint from `dir`.
    pub fn load(dir: &Path, oracle_hash: Option<&str>) -> anyhow::Result<Self> {
        let manifest = BankManifest::load(dir.join(MANIFEST_FILE))?;
        let mut protectors = BTreeMap::new();
        for e in &manifest.entries {
            if let BankEntry::Available { level, checkpoint, .. } = e {
                let (ckpt, report) = Checkpoint::load(dir.join(checkpoint), oracle_hash)?;
                for w in report.warnings {
                    tracing::warn!(level, "{w}");
                }
                protectors.insert(*level, ckpt.protector);
            }
        }
        Ok(Self { manifest, protectors })
    }
}

/// Where preview diffusion runs.
pub enum PreviewOracle {
    Local(Arc<OracleWeights>),
    Remote(Arc<RemoteOracle>),
}

pub struct AppState {
    pub bank: Option<Bank>,
    pub oracle: PreviewOracle,
    /// Working resolution; uploads are resized to it.
    pub resolution: usize,
    pub oracle_slots: Semaphore,
    pub token: Option<String>,
    pub timeout: Duration,
}

impl AppState {
    pub fn new(bank: Option<Bank>, oracle: PreviewOracle, resolution: usize) -> Self {
        Self {
            bank,
            oracle,
            resolution,
            oracle_slots: Semaphore::new(DEFAULT_ORACLE_CONCURRENCY),
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            timeout: Duration::from_secs(60),
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/levels", get(levels))
        .route("/protect", post(protect))
        .layer(DefaultBodyLimit::max(MAX_PAYLOAD))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

fn authorize(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    let Some(token) = &state.token else {
        return Ok(());
    };
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given == Some(token.as_str()) {
        Ok(())
    } else {
        Err(ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong bearer token"))
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "bank_loaded": state.bank.is_some(),
        "levels": state.bank.as_ref().map_or(0, |b| b.protectors.len()),
    }))
}

fn no_bank() -> ApiError {
    ApiError::new(
        StatusCode::SERVICE_UNAVAILABLE,
        "no balance bank loaded; run `mamc bank` and start the server with --bank <dir>",
    )
}

async fn levels(State(state): State<Arc<AppState>>, headers: HeaderMap) -> Result<Json<serde_json::Value>, ApiError> {
    authorize(&state, &headers)?;
    let bank = state.bank.as_ref().ok_or_else(no_bank)?;
    let mut levels = Vec::new();
    let mut unavailable = Vec::new();
    for e in &bank.manifest.entries {
        match e {
            BankEntry::Available { level, p1, p2, .. } => levels.push(json!({ "level": level, "p1": p1, "p2": p2 })),
            BankEntry::Unavailable { level, reason } => unavailable.push(json!({ "level": level, "reason": reason })),
        }
    }
    Ok(Json(json!({ "levels": levels, "unavailable": unavailable, "oracle_hash": bank.manifest.oracle_hash })))
}

#[derive(Debug, Clone, Deserialize)]
pub struct ProtectRequest {
    /// Base64-encoded PNG or JPEG.
    pub image: String,
    pub level: u32,
    #[serde(default)]
    pub preview: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub psnr: f64,
    pub rmse: f64,
    pub ssim: f64,
    pub perceptual: f64,
}

impl From<MetricReport> for ImageMetrics {
    fn from(m: MetricReport) -> Self {
        Self {
            psnr: m.psnr,
            rmse: m.rmse,
            ssim: m.ssim,
            perceptual: m.perceptual,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResponseMetrics {
    pub p1: ImageMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p2: Option<ImageMetrics>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtectResponse {
    pub level: u32,
    /// Base64 PNG.
    pub protected: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preview_input_diffused: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preview_protected_diffused: Option<String>,
    pub metrics: ResponseMetrics,
    /// `[width, height]` of the upload before resizing.
    pub original_size: [u32; 2],
    pub size: usize,
}

struct Upload {
    bytes: Vec<u8>,
    level: u32,
    preview: bool,
}

async fn read_upload(req: Request) -> Result<Upload, ApiError> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    if is_multipart {
        let mut mp = Multipart::from_request(req, &())
            .await
            .map_err(|e| ApiError::new(e.status(), e.body_text()))?;
        let (mut bytes, mut level, mut preview) = (None, None, false);
        while let Some(field) = mp
            .next_field()
            .await
            .map_err(|e| ApiError::new(e.status(), e.body_text()))?
        {
            let name = field.name().unwrap_or_default().to_string();
            let data = field.bytes().await.map_err(|e| ApiError::new(e.status(), e.body_text()))?;
            let text = || String::from_utf8_lossy(&data).trim().to_string();
            match name.as_str() {
                "image" => bytes = Some(data.to_vec()),
                "level" => {
                    level = Some(text().parse().map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "level must be an integer"))?)
                }
                "preview" => preview = matches!(text().as_str(), "true" | "1" | "on"),
                _ => {}
            }
        }
        Ok(Upload {
            bytes: bytes.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing `image` field"))?,
            level: level.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing `level` field"))?,
            preview,
        })
    } else {
        // Body-limit failures keep their 413; every other rejection is a 400.
        let Json(body) = Json::<ProtectRequest>::from_request(req, &()).await.map_err(|e| {
            let status = match e.status() {
                StatusCode::PAYLOAD_TOO_LARGE => StatusCode::PAYLOAD_TOO_LARGE,
                _ => StatusCode::BAD_REQUEST,
            };
            ApiError::new(status, e.body_text())
        })?;
        let bytes = B64
            .decode(body.image.trim())
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("image is not valid base64: {e}")))?;
        Ok(Upload {
            bytes,
            level: body.level,
            preview: body.preview,
        })
    }
}

/// Decode at `size`, protect, encode as PNG. Shared by the CLI and the service.
pub fn protect_png(protector: &Protector, bytes: &[u8], size: usize) -> mamc_core::Result<(ImageTensor, ImageTensor, Vec<u8>)> {
    let input = ImageTensor::from_encoded(bytes, size)?;
    let protected = protector.protect(&input)?;
    let png = protected.to_png_bytes();
    Ok((input, protected, png))
}

fn original_size(bytes: &[u8]) -> Option<[u32; 2]> {
    ImageTensor::encoded_dims(bytes).ok().map(|(w, h)| [w, h])
}

fn single(protocol: Protocol, a: &ImageTensor, b: &ImageTensor) -> mamc_core::Result<ImageMetrics> {
    MetricReport::compute(protocol, std::slice::from_ref(a), std::slice::from_ref(b)).map(Into::into)
}

async fn protect(State(state): State<Arc<AppState>>, req: Request) -> Result<Json<ProtectResponse>, ApiError> {
    authorize(&state, req.headers())?;
    let timeout = state.timeout;
    match tokio::time::timeout(timeout, protect_inner(state, req)).await {
        Ok(r) => r.map(Json),
        Err(_) => Err(ApiError::new(StatusCode::GATEWAY_TIMEOUT, format!("request exceeded {timeout:?}"))),
    }
}

async fn protect_inner(state: Arc<AppState>, req: Request) -> Result<ProtectResponse, ApiError> {
    let upload = read_upload(req).await?;
    let bank = state.bank.as_ref().ok_or_else(no_bank)?;
    if !bank.protectors.contains_key(&upload.level) {
        let known: Vec<String> = bank.protectors.keys().map(u32::to_string).collect();
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("level {} is not available (available: {})", upload.level, known.join(", ")),
        ));
    }
    let size = state.resolution;
    let level = upload.level;
    let st = state.clone();
    let bytes = upload.bytes;
    let (input, protected, png, dims) = tokio::task::spawn_blocking(move || {
        let protector = &st.bank.as_ref().expect("checked above").protectors[&level];
        let dims = original_size(&bytes);
        protect_png(protector, &bytes, size).map(|(i, p, png)| (i, p, png, dims))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid image: {e}")))?;

    let p1 = {
        let (a, b) = (input.clone(), protected.clone());
        tokio::task::spawn_blocking(move || single(Protocol::P1, &a, &b))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    };
    let mut response = ProtectResponse {
        level,
        protected: B64.encode(&png),
        preview_input_diffused: None,
        preview_protected_diffused: None,
        metrics: ResponseMetrics { p1, p2: None },
        original_size: dims.unwrap_or([size as u32; 2]),
        size,
    };
    if upload.preview {
        let _slot = state
            .oracle_slots
            .acquire()
            .await
            .map_err(|e| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, e.to_string()))?;
        let st = state.clone();
        let (mi, mp) = tokio::task::spawn_blocking(move || preview(&st.oracle, &input, &protected))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
            .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, format!("oracle failed: {e}")))?;
        let p2 = single(Protocol::P2, &mi, &mp).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        response.preview_input_diffused = Some(B64.encode(mi.to_png_bytes()));
        response.preview_protected_diffused = Some(B64.encode(mp.to_png_bytes()));
        response.metrics.p2 = Some(p2);
    }
    Ok(response)
}

/// Oracle outputs for `I` and `I'` at the preview strength and seed.
pub fn preview(oracle: &PreviewOracle, input: &ImageTensor, protected: &ImageTensor) -> mamc_core::Result<(ImageTensor, ImageTensor)> {
    let cfg = OracleConfig {
        strength: PREVIEW_STRENGTH,
        seed: PREVIEW_SEED,
        ..OracleConfig::default()
    };
    match oracle {
        PreviewOracle::Local(o) => Ok((o.diffuse(input, &cfg)?, o.diffuse(protected, &cfg)?)),
        PreviewOracle::Remote(r) => Ok((r.diffuse(input, &cfg)?, r.diffuse(protected, &cfg)?)),
    }
}

/// Binds and serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, addr: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
