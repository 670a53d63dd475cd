//! The Data Control Server.
//!
//! One request runs through seven stages: verify the requester, find the
//! data profile, fetch the envelope, decrypt it, match policy rules, redact,
//! and build the response. A failure at any stage yields an empty payload.
//! Decrypted bytes live only in memory for the duration of one request.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use cagecoach_core::envelope::{decrypt_blob, sha1_hex};
use cagecoach_core::policy::{match_rules, Datatype};
use cagecoach_core::redact::{PipelineRedactor, Redactor};
use serde::{Deserialize, Serialize};

use crate::fetch::{Fetcher, HttpFetcher};
use crate::state::{load_server_state, lookup_data_profile, verify_requester, ServerState, StateError, Verification};

pub const STATUS_HEADER: &str = "x-cagecoach-status";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRequest {
    #[serde(rename = "data-url")]
    pub data_url: String,
    #[serde(rename = "requester-id", default, skip_serializing_if = "Option::is_none")]
    pub requester_id: Option<String>,
    /// Base64 (standard alphabet, padded) RSA-OAEP ciphertext.
    #[serde(rename = "encrypted-phrase", default, skip_serializing_if = "Option::is_none")]
    pub encrypted_phrase: Option<String>,
}

impl AccessRequest {
    pub fn anonymous(data_url: impl Into<String>) -> Self {
        Self {
            data_url: data_url.into(),
            ..Self::default()
        }
    }

    pub fn credentialed(data_url: impl Into<String>, id: impl Into<String>, ciphertext: &[u8]) -> Self {
        Self {
            data_url: data_url.into(),
            requester_id: Some(id.into()),
            encrypted_phrase: Some(BASE64.encode(ciphertext)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessStatus {
    Ok,
    Rejected,
    NotFound,
    FetchFailed,
    RedactionFailed,
}

impl AccessStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            AccessStatus::Ok => "ok",
            AccessStatus::Rejected => "rejected",
            AccessStatus::NotFound => "not_found",
            AccessStatus::FetchFailed => "fetch_failed",
            AccessStatus::RedactionFailed => "redaction_failed",
        }
    }

    pub fn http_status(self) -> StatusCode {
        match self {
            AccessStatus::Ok => StatusCode::OK,
            AccessStatus::Rejected => StatusCode::FORBIDDEN,
            AccessStatus::NotFound => StatusCode::NOT_FOUND,
            AccessStatus::FetchFailed => StatusCode::BAD_GATEWAY,
            AccessStatus::RedactionFailed => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl std::fmt::Display for AccessStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessResponse {
    pub status: AccessStatus,
    pub content_type: String,
    pub payload: Vec<u8>,
    /// Why the request failed; never contains plaintext.
    pub reason: Option<String>,
}

impl AccessResponse {
    fn failure(status: AccessStatus, reason: impl Into<String>) -> Self {
        Self {
            status,
            content_type: "application/json".into(),
            payload: Vec::new(),
            reason: Some(reason.into()),
        }
    }
}

/// Error body returned for every non-ok status.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub status: AccessStatus,
    pub error: String,
}

/// The request pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Verify,
    Lookup,
    Fetch,
    Decrypt,
    Match,
    Redact,
    Respond,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Verify,
        Stage::Lookup,
        Stage::Fetch,
        Stage::Decrypt,
        Stage::Match,
        Stage::Redact,
        Stage::Respond,
    ];

    /// Status reported when this stage fails.
    pub fn failure_status(self) -> AccessStatus {
        match self {
            Stage::Verify => AccessStatus::Rejected,
            Stage::Lookup => AccessStatus::NotFound,
            Stage::Fetch => AccessStatus::FetchFailed,
            Stage::Decrypt | Stage::Match | Stage::Redact | Stage::Respond => AccessStatus::RedactionFailed,
        }
    }
}

/// Observes each stage before it runs; returning an error fails the
/// request at that stage.
pub trait PipelineHooks: Send + Sync {
    fn enter(&self, stage: Stage) -> Result<(), String>;
}

struct NoHooks;

impl PipelineHooks for NoHooks {
    fn enter(&self, _stage: Stage) -> Result<(), String> {
        Ok(())
    }
}

pub fn content_type_for(datatype: Datatype, payload: &[u8]) -> &'static str {
    match datatype {
        Datatype::Json => "application/json",
        Datatype::Csv => "text/csv; charset=utf-8",
        Datatype::Txt => "text/plain; charset=utf-8",
        Datatype::Image if payload.starts_with(&[0xff, 0xd8, 0xff]) => "image/jpeg",
        Datatype::Image => "image/png",
        Datatype::Unknown => "application/octet-stream",
    }
}

pub struct Dcs {
    state: RwLock<Arc<ServerState>>,
    config_dir: Option<PathBuf>,
    fetcher: Arc<dyn Fetcher>,
    redactor: Arc<dyn Redactor>,
    hooks: Arc<dyn PipelineHooks>,
}

impl Dcs {
    pub fn new(state: ServerState) -> Self {
        Self {
            state: RwLock::new(Arc::new(state)),
            config_dir: None,
            fetcher: Arc::new(HttpFetcher::default()),
            redactor: Arc::new(PipelineRedactor),
            hooks: Arc::new(NoHooks),
        }
    }

    pub fn from_config_dir(dir: impl Into<PathBuf>) -> Result<Self, StateError> {
        let dir = dir.into();
        let state = load_server_state(&dir)?;
        Ok(Self {
            config_dir: Some(dir),
            ..Self::new(state)
        })
    }

    pub fn with_fetcher(mut self, fetcher: Arc<dyn Fetcher>) -> Self {
        self.fetcher = fetcher;
        self
    }

    pub fn with_redactor(mut self, redactor: Arc<dyn Redactor>) -> Self {
        self.redactor = redactor;
        self
    }

    pub fn with_hooks(mut self, hooks: Arc<dyn PipelineHooks>) -> Self {
        self.hooks = hooks;
        self
    }

    /// Snapshot of the current configuration.
    pub fn state(&self) -> Arc<ServerState> {
        self.state.read().expect("state lock poisoned").clone()
    }

    /// Swaps in `state`. Requests already running keep their snapshot.
    pub fn replace_state(&self, state: ServerState) {
        *self.state.write().expect("state lock poisoned") = Arc::new(state);
    }

    /// Re-reads the config directory. On error the current state is kept.
    pub fn reload(&self) -> Result<(), StateError> {
        let Some(dir) = &self.config_dir else {
            return Ok(());
        };
        let state = load_server_state(dir)?;
        self.replace_state(state);
        Ok(())
    }

    fn enter(&self, stage: Stage) -> Result<(), AccessResponse> {
        self.hooks
            .enter(stage)
            .map_err(|e| AccessResponse::failure(stage.failure_status(), e))
    }

    pub async fn handle_access_request(&self, req: &AccessRequest) -> AccessResponse {
        match self.run_pipeline(req).await {
            Ok(resp) | Err(resp) => resp,
        }
    }

    async fn run_pipeline(&self, req: &AccessRequest) -> Result<AccessResponse, AccessResponse> {
        let state = self.state();

        self.enter(Stage::Verify)?;
        let verified_id = match (&req.requester_id, &req.encrypted_phrase) {
            (None, None) => None,
            (Some(id), Some(phrase)) if !id.is_empty() => {
                let ciphertext = BASE64
                    .decode(phrase)
                    .map_err(|_| AccessResponse::failure(AccessStatus::Rejected, "encrypted-phrase is not base64"))?;
                let st = state.clone();
                let who = id.clone();
                let verdict = tokio::task::spawn_blocking(move || verify_requester(&st.registry, &who, &ciphertext))
                    .await
                    .unwrap_or(Verification::Rejected);
                if verdict != Verification::Verified {
                    return Err(AccessResponse::failure(
                        AccessStatus::Rejected,
                        "requester verification failed",
                    ));
                }
                Some(id.clone())
            }
            _ => {
                return Err(AccessResponse::failure(
                    AccessStatus::Rejected,
                    "requester-id and encrypted-phrase must be given together",
                ))
            }
        };

        self.enter(Stage::Lookup)?;
        let profile = lookup_data_profile(&state.profiles, &req.data_url)
            .map_err(|e| AccessResponse::failure(AccessStatus::NotFound, e.to_string()))?
            .clone();

        self.enter(Stage::Fetch)?;
        let envelope = self
            .fetcher
            .fetch(&profile.data_url)
            .await
            .map_err(|e| AccessResponse::failure(AccessStatus::FetchFailed, format!("fetching envelope: {e}")))?;
        if let Some(expected) = &profile.data_hash_sha1 {
            if sha1_hex(&envelope) != *expected {
                return Err(AccessResponse::failure(
                    AccessStatus::FetchFailed,
                    "fetched envelope does not match the published hash",
                ));
            }
        }

        self.enter(Stage::Decrypt)?;
        let key = state
            .keys
            .get(&profile.key_id)
            .ok_or_else(|| AccessResponse::failure(AccessStatus::RedactionFailed, "decryption key unavailable"))?;
        let plaintext = decrypt_blob(key, &envelope)
            .map_err(|e| AccessResponse::failure(AccessStatus::RedactionFailed, e.to_string()))?;

        self.enter(Stage::Match)?;
        let ops = match_rules(
            &state.policy,
            &profile.item_name,
            profile.datatype,
            verified_id.as_deref(),
        );

        self.enter(Stage::Redact)?;
        let redactor = self.redactor.clone();
        let st = state.clone();
        let datatype = profile.datatype;
        let redacted = tokio::task::spawn_blocking(move || redactor.redact(&plaintext, datatype, &ops, &st.tools))
            .await
            .map_err(|_| AccessResponse::failure(AccessStatus::RedactionFailed, "redactor panicked"))?
            .map_err(|e| AccessResponse::failure(AccessStatus::RedactionFailed, e.to_string()))?;
        for w in &redacted.warnings {
            tracing::warn!(item = %profile.item_name, "{w}");
        }

        self.enter(Stage::Respond)?;
        Ok(AccessResponse {
            status: AccessStatus::Ok,
            content_type: content_type_for(datatype, &redacted.content).to_owned(),
            payload: redacted.content,
            reason: None,
        })
    }
}

impl IntoResponse for AccessResponse {
    fn into_response(self) -> Response {
        let status_value = HeaderValue::from_static(self.status.as_str());
        if self.status == AccessStatus::Ok {
            let ct = HeaderValue::from_str(&self.content_type)
                .unwrap_or_else(|_| HeaderValue::from_static("application/octet-stream"));
            return (
                StatusCode::OK,
                [
                    (header::CONTENT_TYPE, ct),
                    (header::HeaderName::from_static(STATUS_HEADER), status_value),
                ],
                self.payload,
            )
                .into_response();
        }
        let body = ErrorBody {
            status: self.status,
            error: self.reason.unwrap_or_default(),
        };
        (
            self.status.http_status(),
            [(header::HeaderName::from_static(STATUS_HEADER), status_value)],
            Json(body),
        )
            .into_response()
    }
}

async fn request_handler(State(dcs): State<Arc<Dcs>>, body: Bytes) -> Response {
    let req: AccessRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => {
            let mut resp =
                AccessResponse::failure(AccessStatus::Rejected, format!("malformed request: {e}")).into_response();
            *resp.status_mut() = StatusCode::BAD_REQUEST;
            return resp;
        }
    };
    let resp = dcs.handle_access_request(&req).await;
    if resp.status != AccessStatus::Ok {
        tracing::info!(data_url = %req.data_url, status = %resp.status, reason = ?resp.reason, "request refused");
    }
    resp.into_response()
}

async fn healthz() -> &'static str {
    "ok"
}

pub fn router(dcs: Arc<Dcs>) -> Router {
    Router::new()
        .route("/request", post(request_handler))
        .route("/healthz", get(healthz))
        .with_state(dcs)
}
