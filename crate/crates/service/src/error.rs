use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

/// Error payload: `{code, message, field?}`, plus the counts of
/// insufficient-points and insufficient-views failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub got: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub need: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>, field: Option<&str>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
                field: field.map(str::to_string),
                got: None,
                need: None,
            },
        }
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "not-found",
            format!("unknown {what} `{id}`"),
            Some(what),
        )
    }

    pub fn invalid(field: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid-input", message, Some(field))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message, None)
    }
}

impl ErrorBody {
    pub fn from_core(e: &frk_core::Error) -> Self {
        let (got, need) = match *e {
            frk_core::Error::InsufficientPoints { got, need } | frk_core::Error::InsufficientViews { got, need } => {
                (Some(got), Some(need))
            }
            _ => (None, None),
        };
        ErrorBody {
            code: e.code().into(),
            message: e.to_string(),
            field: e.field().map(str::to_string),
            got,
            need,
        }
    }
}

impl From<frk_core::Error> for ErrorBody {
    fn from(e: frk_core::Error) -> Self {
        ErrorBody::from_core(&e)
    }
}

impl From<frk_core::Error> for ApiError {
    fn from(e: frk_core::Error) -> Self {
        let status = match e {
            frk_core::Error::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError { status, body: e.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
