use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

use twinscope_core::explain::ExplainError;
use twinscope_core::features::InvalidFeature;
use twinscope_core::reconcile::ReconcileError;
use twinscope_core::rules::EvalError;
use twinscope_core::twin::TwinError;

/// Error body: `{error, field?, detail}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBody {
    pub error: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, error: &'static str, detail: impl Into<String>) -> ApiError {
        ApiError {
            status,
            body: ErrorBody {
                error,
                field: None,
                detail: detail.into(),
            },
        }
    }

    pub fn with_field(mut self, field: impl Into<String>) -> ApiError {
        self.body.field = Some(field.into());
        self
    }

    pub fn bad_request(detail: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", detail)
    }

    pub fn validation(field: impl Into<String>, detail: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", detail).with_field(field)
    }

    pub fn not_found(detail: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", detail)
    }

    pub fn conflict(detail: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::CONFLICT, "conflict", detail)
    }

    pub fn unavailable(detail: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", detail)
    }

    pub fn unauthorized() -> ApiError {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
    }

    pub fn internal(detail: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", detail)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<InvalidFeature> for ApiError {
    fn from(e: InvalidFeature) -> Self {
        ApiError::validation(e.feature.name(), e.to_string())
    }
}

impl From<TwinError> for ApiError {
    fn from(e: TwinError) -> Self {
        match e {
            TwinError::InvalidId(_) => ApiError::validation("id", e.to_string()),
            TwinError::Conflict(_) => ApiError::conflict(e.to_string()),
            TwinError::NotFound(_) => ApiError::not_found(e.to_string()),
            TwinError::Invalid(inner) => inner.into(),
            TwinError::Corrupt { .. } | TwinError::IncompleteBaseline { .. } | TwinError::Io { .. } => {
                ApiError::internal(e.to_string())
            }
        }
    }
}

impl From<ExplainError> for ApiError {
    fn from(e: ExplainError) -> Self {
        match e {
            ExplainError::InvalidInstance(inner) => inner.into(),
            ExplainError::NonFiniteProbability | ExplainError::DegenerateWeights { .. } => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "explanation", e.to_string())
            }
            _ => ApiError::internal(e.to_string()),
        }
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Ambiguous { .. } => ApiError::new(StatusCode::CONFLICT, "ambiguous_rules", e.to_string()),
            EvalError::MissingInput(f) => ApiError::validation(f.name(), e.to_string()),
        }
    }
}

impl From<ReconcileError> for ApiError {
    fn from(e: ReconcileError) -> Self {
        match e {
            ReconcileError::Conflict(_) => ApiError::conflict(e.to_string()),
            other => ApiError::internal(other.to_string()),
        }
    }
}
