//! Error types for the CLI and the HTTP layer.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use kgmem_core::evaluator::EvalError;
use kgmem_core::graph::GraphError;
use kgmem_core::provider::ProviderError;
use kgmem_core::Error;
use serde::{Deserialize, Serialize};

/// Process-level failure. Validation errors exit with 1, runtime errors with 2.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Validation(e.to_string())
    }
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub stage: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
                stage: None,
            },
        }
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match e.root() {
            Error::InsertionDisabled => (StatusCode::CONFLICT, "insertion_disabled"),
            Error::Parse { .. } => (StatusCode::BAD_GATEWAY, "provider_output"),
            Error::Provider(ProviderError::Validation(_)) => {
                (StatusCode::BAD_REQUEST, "validation")
            }
            Error::Provider(_) => (StatusCode::BAD_GATEWAY, "provider"),
            Error::Graph(GraphError::NodeNotFound(_)) => (StatusCode::NOT_FOUND, "not_found"),
            root if e.is_validation() || matches!(root, Error::Validation(_)) => {
                (StatusCode::BAD_REQUEST, "validation")
            }
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let mut err = ApiError::new(status, code, e.to_string());
        err.body.stage = e.stage().map(str::to_string);
        err
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        ApiError::bad_request("validation", e.to_string())
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        match e {
            CliError::Validation(m) => ApiError::bad_request("validation", m),
            CliError::Runtime(m) => ApiError::internal(m),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
