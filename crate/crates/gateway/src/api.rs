//! HTTP/JSON endpoints. Denials are results (200); only malformed input,
//! authorization and infrastructure problems produce error statuses.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use optin_core::canonical::Digest;
use optin_core::engine::{OptInEngine, VerifyInput};
use optin_core::ingest::{self, SourceFormat};
use optin_core::intent::{parse_structured_intent, Attachment};
use optin_core::registry::{ConsentDraft, EntityRecord};
use optin_core::time::{TimeRange, Timestamp};

use crate::error::ApiError;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<OptInEngine>,
    /// Required as bearer token to create rights holders, when set.
    pub admin_token: Option<String>,
}

impl AppState {
    pub fn new(engine: Arc<OptInEngine>) -> Self {
        AppState { engine, admin_token: None }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/verify", post(handle_verify))
        .route("/v1/entities", post(handle_entity_add))
        .route(
            "/v1/entities/{id}/consent",
            put(handle_consent_set).delete(handle_consent_revoke).get(handle_consent_show),
        )
        .route("/v1/rights-holders", post(handle_holder_add))
        .route("/v1/reports/{rights_holder}", get(handle_reports))
        .route("/v1/grants/{id}/disseminations", post(handle_dissemination))
        .route("/v1/ledger/verify", get(handle_ledger_verify))
        .route("/v1/ingest/{format}", post(handle_ingest))
        .with_state(state)
}

#[derive(Debug, Default, Deserialize)]
pub struct AtQuery {
    pub at: Option<i64>,
}

impl AtQuery {
    fn timestamp(&self) -> Timestamp {
        self.at.map(Timestamp).unwrap_or_else(Timestamp::now)
    }
}

fn bearer(headers: &HeaderMap) -> Result<String, ApiError> {
    let value = headers
        .get(AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .ok_or_else(|| ApiError::unauthorized("missing bearer credential"))?;
    match value.strip_prefix("Bearer ") {
        Some(secret) if !secret.trim().is_empty() => Ok(secret.trim().to_string()),
        _ => Err(ApiError::unauthorized("expected `Authorization: Bearer <secret>`")),
    }
}

fn json_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("MalformedBody", e.to_string()))
}

/// A prompt with digests of attached uploads.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptBody {
    prompt: String,
    #[serde(default)]
    attachments: Vec<Digest>,
}

/// Reads a verify body: plain text is a prompt; JSON is either
/// `{"prompt", "attachments"}` or a canonical intent document.
pub fn verify_input(headers: &HeaderMap, body: &[u8]) -> Result<VerifyInput, ApiError> {
    let text = std::str::from_utf8(body).map_err(|_| ApiError::bad_request("MalformedBody", "body is not UTF-8"))?;
    let is_json = headers
        .get(CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|ct| ct.contains("json"));
    if !is_json {
        return Ok(VerifyInput::prompt(text));
    }
    if text.trim().is_empty() {
        return Ok(VerifyInput::prompt(""));
    }
    let value: Value = json_body(body)?;
    if value.get("prompt").is_some() {
        let p: PromptBody = serde_json::from_value(value).map_err(|e| ApiError::bad_request("MalformedBody", e.to_string()))?;
        let attachments = p.attachments.into_iter().map(Attachment::from_digest).collect();
        return Ok(VerifyInput::prompt_with(p.prompt, attachments));
    }
    Ok(VerifyInput::Intent(parse_structured_intent(&value)?))
}

async fn handle_verify(
    State(state): State<AppState>,
    Query(q): Query<AtQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let input = verify_input(&headers, &body)?;
    let outcome = state.engine.verify(input, q.timestamp())?;
    Ok(Json(serde_json::to_value(outcome).expect("outcome serializes")))
}

async fn handle_entity_add(
    State(state): State<AppState>,
    Query(q): Query<AtQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let credential = bearer(&headers)?;
    let record: EntityRecord = json_body(&body)?;
    let id = state.engine.registry().register_entity(record, &credential, q.timestamp())?;
    let entity = state.engine.registry().entity(&id);
    Ok((StatusCode::CREATED, Json(json!({ "entity_id": id, "entity": entity }))))
}

async fn handle_consent_set(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<AtQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let credential = bearer(&headers)?;
    let draft: ConsentDraft = json_body(&body)?;
    let record = state.engine.registry().upsert_consent(&id, draft, &credential, q.timestamp())?;
    Ok(Json(serde_json::to_value(record).expect("record serializes")))
}

async fn handle_consent_revoke(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<AtQuery>,
    headers: HeaderMap,
) -> Result<Json<Value>, ApiError> {
    let credential = bearer(&headers)?;
    let record = state.engine.registry().revoke_consent(&id, &credential, q.timestamp())?;
    Ok(Json(serde_json::to_value(record).expect("record serializes")))
}

/// Current record (as of `at`) and full history; rights holders of the entity only.
async fn handle_consent_show(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<AtQuery>,
    headers: HeaderMap,
) -> Result<Json<Value>, ApiError> {
    let credential = bearer(&headers)?;
    let registry = state.engine.registry();
    registry.authorize_entity(&id, &credential)?;
    Ok(Json(json!({
        "entity": registry.entity(&id),
        "current": registry.lookup_consent(&id, q.timestamp()),
        "history": registry.consent_history(&id),
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HolderBody {
    rights_holder_id: String,
    display_name: String,
    #[serde(default)]
    secret: Option<String>,
}

#[derive(Debug, Serialize)]
struct HolderCreated {
    rights_holder_id: String,
    /// Shown once; only its digest is stored.
    secret: String,
}

async fn handle_holder_add(
    State(state): State<AppState>,
    Query(q): Query<AtQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    if let Some(token) = &state.admin_token {
        if bearer(&headers)? != *token {
            return Err(ApiError::unauthorized("admin token required"));
        }
    }
    let b: HolderBody = json_body(&body)?;
    let registry = state.engine.registry();
    let secret = match b.secret {
        Some(s) => {
            registry.register_rights_holder(&b.rights_holder_id, &b.display_name, &s, q.timestamp())?;
            s
        }
        None => registry.create_rights_holder(&b.rights_holder_id, &b.display_name, q.timestamp())?.1,
    };
    let created = HolderCreated { rights_holder_id: b.rights_holder_id, secret };
    Ok((StatusCode::CREATED, Json(serde_json::to_value(created).expect("serializes"))))
}

#[derive(Debug, Default, Deserialize)]
pub struct RangeQuery {
    pub from: Option<i64>,
    pub until: Option<i64>,
}

async fn handle_reports(
    State(state): State<AppState>,
    Path(holder): Path<String>,
    Query(q): Query<RangeQuery>,
    headers: HeaderMap,
) -> Result<Json<Value>, ApiError> {
    let credential = bearer(&headers)?;
    let range = TimeRange::new(q.from.map(Timestamp), q.until.map(Timestamp))
        .map_err(|e| ApiError::bad_request("InvalidRange", e.to_string()))?;
    let report = state.engine.transparency_report(&holder, &credential, range)?;
    Ok(Json(serde_json::to_value(report).expect("report serializes")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DisseminationBody {
    platform: String,
    purpose: String,
}

async fn handle_dissemination(
    State(state): State<AppState>,
    Path(grant_id): Path<String>,
    Query(q): Query<AtQuery>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let b: DisseminationBody = json_body(&body)?;
    let receipt = state.engine.register_dissemination(&grant_id, &b.platform, &b.purpose, q.timestamp())?;
    Ok(Json(serde_json::to_value(receipt).expect("receipt serializes")))
}

async fn handle_ledger_verify(State(state): State<AppState>) -> Result<Json<Value>, ApiError> {
    let report = state
        .engine
        .ledger()
        .verify_chain()
        .map_err(|e| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "LedgerUnavailable", e.to_string()))?;
    Ok(Json(serde_json::to_value(report).expect("report serializes")))
}

#[derive(Debug, Default, Deserialize)]
pub struct IngestQuery {
    pub entity_id: Option<String>,
    pub at: Option<i64>,
}

/// Parses a preference file; with `entity_id`, also stores it as a new
/// consent version for that entity (bearer credential required).
async fn handle_ingest(
    State(state): State<AppState>,
    Path(format): Path<String>,
    Query(q): Query<IngestQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let format: SourceFormat = format.parse().map_err(|m: String| ApiError::new(StatusCode::NOT_FOUND, "UnknownFormat", m))?;
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::bad_request("MalformedBody", "body is not UTF-8"))?;
    let declarations = ingest::import(format, text)?;
    let record = match &q.entity_id {
        Some(entity_id) => {
            let credential = bearer(&headers)?;
            let at = q.at.map(Timestamp).unwrap_or_else(Timestamp::now);
            Some(ingest::declarations_to_consent(state.engine.registry(), &declarations, entity_id, &credential, at)?)
        }
        None => None,
    };
    Ok(Json(json!({ "declarations": declarations, "record": record })))
}
