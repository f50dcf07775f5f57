use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use nutrigraph::Error as CoreError;
use serde::{Deserialize, Serialize};

/// JSON error body returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
                field: None,
            },
        }
    }

    pub fn with_field(mut self, field: impl Into<String>) -> Self {
        self.body.field = Some(field.into());
        self
    }

    pub fn not_loaded() -> Self {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "not_loaded", "no model is loaded")
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    /// Maps a record parsing or validation failure to 400 or 422.
    pub fn from_record_error(err: CoreError) -> Self {
        match err {
            CoreError::Malformed { message, .. } => ApiError::new(StatusCode::BAD_REQUEST, "malformed", message),
            CoreError::InvalidRecord { source, .. } => {
                let message = match &source {
                    nutrigraph::error::RecordError::Invalid { message, .. } => message.clone(),
                    other => other.to_string(),
                };
                ApiError::new(StatusCode::BAD_REQUEST, "invalid", message).with_field(source.field())
            }
            CoreError::DimensionMismatch { source, .. } => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "dimension_mismatch", source.to_string())
                    .with_field(source.field())
            }
            CoreError::Dimension { expected, got } => ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "dimension_mismatch",
                format!("expected dimension {expected}, got {got}"),
            ),
            CoreError::Json(e) => ApiError::new(StatusCode::BAD_REQUEST, "malformed", e.to_string()),
            other => ApiError::new(StatusCode::BAD_REQUEST, "invalid", other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
