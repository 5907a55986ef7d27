//! HTTP generation endpoint.
//!
//! An empty (or whitespace-only) prompt samples unconditionally from the
//! start tag; anything else is encoded, cut to the leading half of the
//! context window and continued. The loaded model lives behind a
//! [`ModelSlot`] so a new checkpoint can be swapped in between requests
//! without disturbing in-flight ones.
//!
//! ```text
//! POST /v1/generate   GenerateRequest  -> GenerateResponse
//! GET  /v1/health                      -> {"status":"ok","model_step":N}
//! ```

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use claimforge::sampling::{generate, SamplerConfig, Strategy};
use claimforge::segmenter::normalize_newlines;
use claimforge::{extract_claims, ExtractedClaim, NGramModel, SubwordModel, START_TAG};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CONTEXT_WINDOW: usize = 1024;
pub const MAX_SAMPLES: usize = 30;
pub const DEFAULT_MAX_TOKENS: usize = 256;

/// Keeps the leading `floor(C/2)` tokens.
pub fn truncate_prompt(prompt_ids: &[u32], context_window: usize) -> &[u32] {
    let keep = context_window / 2;
    &prompt_ids[..prompt_ids.len().min(keep)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    TopK,
    TopP,
    DynamicKp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    #[serde(default)]
    pub prompt: Option<String>,
    #[serde(default = "default_samples")]
    pub num_samples: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default = "default_strategy")]
    pub strategy: StrategyName,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub cap: Option<usize>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_samples() -> usize {
    1
}
fn default_max_tokens() -> usize {
    DEFAULT_MAX_TOKENS
}
fn default_strategy() -> StrategyName {
    StrategyName::DynamicKp
}
fn default_temperature() -> f64 {
    1.0
}

impl Default for GenerateRequest {
    fn default() -> Self {
        Self {
            prompt: None,
            num_samples: default_samples(),
            max_tokens: default_max_tokens(),
            strategy: default_strategy(),
            k: None,
            p: None,
            rho: None,
            cap: None,
            temperature: default_temperature(),
            seed: None,
        }
    }
}

impl GenerateRequest {
    /// Parses a JSON body; errors name the offending field where possible.
    pub fn from_json(body: &[u8]) -> Result<Self, RequestError> {
        let de = &mut serde_json::Deserializer::from_slice(body);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner().to_string();
            let field = unknown_field_name(&inner).or_else(|| {
                let path = e.path().to_string();
                (path != ".").then_some(path)
            });
            RequestError { field, message: inner }
        })
    }

    /// The strategy with defaults filled in; parameters of other strategies
    /// are ignored.
    pub fn resolved_strategy(&self) -> Strategy {
        match self.strategy {
            StrategyName::TopK => Strategy::TopK {
                k: self.k.unwrap_or(Strategy::DEFAULT_K),
            },
            StrategyName::TopP => Strategy::TopP {
                p: self.p.unwrap_or(Strategy::DEFAULT_P),
            },
            StrategyName::DynamicKp => Strategy::DynamicKp {
                rho: self.rho.unwrap_or(Strategy::DEFAULT_RHO),
                cap: self.cap.unwrap_or(Strategy::DEFAULT_CAP),
            },
        }
    }

    pub fn validate(&self, context_window: usize) -> Result<(), RequestError> {
        if !(1..=MAX_SAMPLES).contains(&self.num_samples) {
            return Err(RequestError::field(
                "num_samples",
                format!("must be between 1 and {MAX_SAMPLES}, got {}", self.num_samples),
            ));
        }
        if !(1..=context_window).contains(&self.max_tokens) {
            return Err(RequestError::field(
                "max_tokens",
                format!("must be between 1 and {context_window}, got {}", self.max_tokens),
            ));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(RequestError::field("temperature", "must be positive"));
        }
        match self.resolved_strategy() {
            Strategy::TopK { k } if k < 1 => Err(RequestError::field("k", "must be at least 1")),
            Strategy::TopP { p } if !(p > 0.0 && p <= 1.0) => Err(RequestError::field("p", "must be in (0, 1]")),
            Strategy::DynamicKp { rho, .. } if !(rho > 0.0 && rho <= 1.0) => {
                Err(RequestError::field("rho", "must be in (0, 1]"))
            }
            Strategy::DynamicKp { cap, .. } if cap < 1 => Err(RequestError::field("cap", "must be at least 1")),
            _ => Ok(()),
        }
    }
}

fn unknown_field_name(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_owned())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub raw_text: String,
    pub claims: Vec<ExtractedClaim>,
    /// Generated tokens, prompt excluded.
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyEcho {
    #[serde(flatten)]
    pub strategy: Strategy,
    pub temperature: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub samples: Vec<Sample>,
    pub model_step: u64,
    pub strategy_echo: StrategyEcho,
    pub effective_prompt_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("{}{message}", field.as_ref().map(|f| format!("{f}: ")).unwrap_or_default())]
pub struct RequestError {
    pub field: Option<String>,
    pub message: String,
}

impl RequestError {
    fn field(name: &str, message: impl Into<String>) -> Self {
        Self {
            field: Some(name.to_owned()),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("bad request: {0}")]
    Request(#[from] RequestError),
    #[error("no model loaded")]
    Unavailable,
    #[error("generation failed: {0}")]
    Internal(String),
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, body) = match &self {
            ServiceError::Request(e) => (
                StatusCode::BAD_REQUEST,
                serde_json::json!({ "error": e.message, "field": e.field }),
            ),
            ServiceError::Unavailable => (
                StatusCode::SERVICE_UNAVAILABLE,
                serde_json::json!({ "error": self.to_string() }),
            ),
            ServiceError::Internal(_) => (
                StatusCode::INTERNAL_SERVER_ERROR,
                serde_json::json!({ "error": self.to_string() }),
            ),
        };
        (status, Json(body)).into_response()
    }
}

/// An immutable model + coder pair.
#[derive(Debug)]
pub struct Snapshot {
    pub model: NGramModel,
    pub coder: SubwordModel,
    pub step: u64,
}

/// Samples produced from one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub samples: Vec<Sample>,
    pub effective_prompt_tokens: usize,
    /// Whether a start tag was put in front of the prompt for the model.
    pub injected_start: bool,
}

impl SampleBatch {
    /// Each sample as one line of tagged text (start tag included).
    pub fn tagged_lines(&self) -> Vec<String> {
        self.samples
            .iter()
            .map(|s| {
                let line = if self.injected_start {
                    format!("{START_TAG}{}", s.raw_text)
                } else {
                    s.raw_text.clone()
                };
                normalize_newlines(&line)
            })
            .collect()
    }
}

/// Draws `n` samples, sample `i` with seed `sampler.seed + i`, each ending
/// at the first end tag or after `max_tokens` tokens. An absent or blank
/// prompt selects unconditional mode; otherwise the encoded prompt is cut
/// to its leading `floor(context_window / 2)` tokens.
///
/// The model always sees a start tag first; an injected one is not part of
/// `raw_text`.
pub fn generate_samples(
    snapshot: &Snapshot,
    sampler: &SamplerConfig,
    prompt: Option<&str>,
    n: usize,
    max_tokens: usize,
    context_window: usize,
) -> Result<SampleBatch, ServiceError> {
    let specials = snapshot.coder.special_ids();
    let prompt_text = prompt.unwrap_or("").trim();
    let prompt_ids = if prompt_text.is_empty() {
        Vec::new()
    } else {
        snapshot.coder.encode(prompt_text)
    };
    let prompt_ids = truncate_prompt(&prompt_ids, context_window);
    let inject = prompt_ids.first() != Some(&specials.start);
    let mut context = Vec::with_capacity(prompt_ids.len() + 1);
    if inject {
        context.push(specials.start);
    }
    context.extend_from_slice(prompt_ids);

    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let cfg = sampler.with_seed(sampler.seed.wrapping_add(i as u64));
        let out = generate(&snapshot.model, &cfg, &context, max_tokens, Some(specials.end))
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let raw_text = snapshot
            .coder
            .decode(&out[usize::from(inject)..])
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let claims = if inject {
            extract_claims(&format!("{START_TAG}{raw_text}"))
        } else {
            extract_claims(&raw_text)
        };
        samples.push(Sample {
            token_count: out.len() - context.len(),
            raw_text,
            claims,
        });
    }
    Ok(SampleBatch {
        samples,
        effective_prompt_tokens: prompt_ids.len(),
        injected_start: inject,
    })
}

/// Runs one request against a snapshot. Given a seed, the response is a
/// pure function of snapshot and request.
pub fn handle_generate(
    snapshot: &Snapshot,
    context_window: usize,
    request: &GenerateRequest,
) -> Result<GenerateResponse, ServiceError> {
    request.validate(context_window)?;
    let sampler = SamplerConfig {
        strategy: request.resolved_strategy(),
        temperature: request.temperature,
        seed: request.seed.unwrap_or_else(rand::random),
    };
    let batch = generate_samples(
        snapshot,
        &sampler,
        request.prompt.as_deref(),
        request.num_samples,
        request.max_tokens,
        context_window,
    )?;
    Ok(GenerateResponse {
        samples: batch.samples,
        model_step: snapshot.step,
        strategy_echo: StrategyEcho {
            strategy: sampler.strategy,
            temperature: sampler.temperature,
            seed: sampler.seed,
        },
        effective_prompt_tokens: batch.effective_prompt_tokens,
    })
}

/// Holder for the current snapshot. Readers clone the `Arc` and drop the
/// lock immediately, so a swap never waits on generation.
#[derive(Debug, Default)]
pub struct ModelSlot(RwLock<Option<Arc<Snapshot>>>);

impl ModelSlot {
    pub fn new(snapshot: Option<Snapshot>) -> Self {
        Self(RwLock::new(snapshot.map(Arc::new)))
    }

    pub fn current(&self) -> Option<Arc<Snapshot>> {
        self.0.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Replaces the snapshot; returns the previous one.
    pub fn swap(&self, snapshot: Snapshot) -> Option<Arc<Snapshot>> {
        let mut guard = self.0.write().unwrap_or_else(|e| e.into_inner());
        guard.replace(Arc::new(snapshot))
    }
}

#[derive(Debug)]
pub struct AppState {
    pub slot: ModelSlot,
    pub context_window: usize,
}

impl AppState {
    pub fn new(snapshot: Option<Snapshot>, context_window: usize) -> Self {
        Self {
            slot: ModelSlot::new(snapshot),
            context_window,
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/generate", post(generate_handler))
        .route("/v1/health", get(health_handler))
        .with_state(state)
}

async fn generate_handler(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ServiceError> {
    let request = GenerateRequest::from_json(&body)?;
    request.validate(state.context_window)?;
    let snapshot = state.slot.current().ok_or(ServiceError::Unavailable)?;
    let window = state.context_window;
    let response = tokio::task::spawn_blocking(move || handle_generate(&snapshot, window, &request))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(Json(response).into_response())
}

async fn health_handler(State(state): State<Arc<AppState>>) -> Response {
    match state.slot.current() {
        Some(s) => Json(serde_json::json!({ "status": "ok", "model_step": s.step })).into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(serde_json::json!({ "status": "unavailable" })),
        )
            .into_response(),
    }
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
