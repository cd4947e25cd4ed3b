use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use optin_core::engine::EngineError;
use optin_core::ingest::IngestError;
use optin_core::intent::{ComponentId, DocumentError, ParseError, Violation};
use optin_core::registry::RegistryError;

/// The error body every endpoint returns on a non-2xx status.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_path: Option<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status: status.as_u16(), code: code.to_string(), message: message.into(), field_path: None }
    }

    pub fn at(mut self, path: impl Into<String>) -> Self {
        self.field_path = Some(path.into());
        self
    }

    pub fn status(&self) -> StatusCode {
        StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
    }

    pub fn unauthorized(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", message)
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, code, message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)?;
        if let Some(p) = &self.field_path {
            write!(f, " (at {p})")?;
        }
        Ok(())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}

fn component_path(id: ComponentId) -> String {
    match id {
        ComponentId::Descriptor(i) => format!("$.descriptors[{i}]"),
        ComponentId::Transformation(i) => format!("$.transformations[{i}]"),
        ComponentId::Qualifier(i) => format!("$.qualifiers[{i}]"),
    }
}

fn violation_path(v: &Violation) -> String {
    match v {
        Violation::MissingDescriptor => "$.descriptors".to_string(),
        Violation::MissingEntityRef { component }
        | Violation::UnexpectedEntityRef { component }
        | Violation::EmptyEntityName { component }
        | Violation::MissingCategory { component }
        | Violation::MissingPayloadDigest { component }
        | Violation::UnexpectedPayloadDigest { component }
        | Violation::MissingRuleText { component }
        | Violation::AppliesToOutOfRange { component, .. }
        | Violation::EmptyQualifierKey { component }
        | Violation::UnknownVocabularyTerm { component, .. } => component_path(*component),
        Violation::DuplicateComponent { second, .. } => component_path(*second),
    }
}

fn invalid(violations: &[Violation]) -> ApiError {
    let message = serde_json::to_string(violations).unwrap_or_default();
    let err = ApiError::bad_request("InvalidRequest", message);
    match violations.first() {
        Some(v) => err.at(violation_path(v)),
        None => err,
    }
}

impl From<ParseError> for ApiError {
    fn from(e: ParseError) -> Self {
        match &e {
            ParseError::EmptyInput => ApiError::bad_request("EmptyInput", e.to_string()),
            ParseError::UnrecognizedPattern { .. } => ApiError::bad_request("UnrecognizedPattern", e.to_string()),
            ParseError::Invalid(v) => invalid(v),
        }
    }
}

impl From<DocumentError> for ApiError {
    fn from(e: DocumentError) -> Self {
        let code = match &e {
            DocumentError::SchemaViolation { .. } => "SchemaViolation",
            DocumentError::UnknownAspect { .. } => "UnknownAspect",
            DocumentError::UnknownQualifierKind { .. } => "UnknownQualifierKind",
        };
        ApiError::bad_request(code, e.to_string()).at(e.path())
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let (status, code) = match &e {
            RegistryError::AliasCollision { .. } => (StatusCode::CONFLICT, "AliasCollision"),
            RegistryError::Unauthorized => (StatusCode::UNAUTHORIZED, "Unauthorized"),
            RegistryError::DuplicateEntityId(_) => (StatusCode::CONFLICT, "DuplicateEntityId"),
            RegistryError::DuplicateRightsHolder(_) => (StatusCode::CONFLICT, "DuplicateRightsHolder"),
            RegistryError::UnknownEntity(_) => (StatusCode::NOT_FOUND, "UnknownEntity"),
            RegistryError::UnknownRightsHolder(_) => (StatusCode::NOT_FOUND, "UnknownRightsHolder"),
            RegistryError::MalformedEntity(_) => (StatusCode::UNPROCESSABLE_ENTITY, "MalformedEntity"),
            RegistryError::MalformedRule { path, .. } => {
                return ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "MalformedRule", e.to_string()).at(path.clone())
            }
            RegistryError::AlreadyRevoked(_) => (StatusCode::CONFLICT, "AlreadyRevoked"),
            RegistryError::NoConsentRecord(_) => (StatusCode::NOT_FOUND, "NoConsentRecord"),
            RegistryError::VersionConflict { .. } => (StatusCode::CONFLICT, "VersionConflict"),
            RegistryError::OutOfOrder { .. } => (StatusCode::CONFLICT, "OutOfOrder"),
            RegistryError::EmptyBatch => (StatusCode::BAD_REQUEST, "EmptyBatch"),
            RegistryError::Corrupted { .. } | RegistryError::Storage(_) | RegistryError::Ledger(_) => {
                (StatusCode::SERVICE_UNAVAILABLE, "RegistryUnavailable")
            }
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Parse(p) => p.into(),
            EngineError::InvalidRequest(v) => invalid(&v),
            EngineError::RegistryUnavailable(m) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "RegistryUnavailable", m),
            EngineError::LedgerUnavailable(l) => {
                ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "LedgerUnavailable", l.to_string())
            }
            EngineError::Registry(r) => r.into(),
            EngineError::NotGranted => ApiError::new(StatusCode::CONFLICT, "NotGranted", "verdict was not granted"),
            EngineError::UnknownGrant(id) => {
                ApiError::new(StatusCode::NOT_FOUND, "UnknownGrant", format!("unknown grant `{id}`"))
            }
        }
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        let code = match &e {
            IngestError::MalformedDocument { path, .. } => {
                return ApiError::bad_request("MalformedDocument", e.to_string()).at(path.clone())
            }
            IngestError::UnknownReservationValue { path, .. } => {
                return ApiError::bad_request("UnknownReservationValue", e.to_string()).at(path.clone())
            }
            IngestError::SyntaxError { line, .. } => {
                return ApiError::bad_request("SyntaxError", e.to_string()).at(format!("line {line}"))
            }
            IngestError::UnknownDirective { line, .. } => {
                return ApiError::bad_request("UnknownDirective", e.to_string()).at(format!("line {line}"))
            }
            IngestError::NotRepresentable { .. } => "NotRepresentable",
            IngestError::NoDirectives => "NoDirectives",
            IngestError::Registry(_) => {
                let IngestError::Registry(r) = e else { unreachable!() };
                return r.into();
            }
        };
        ApiError::bad_request(code, e.to_string())
    }
}
