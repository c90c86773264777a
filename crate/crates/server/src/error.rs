use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use gapscan::Error;
use serde_json::json;

/// JSON error body `{ "error": code, "message": text }` with a status code.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(what: &str, id: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what} `{id}`"))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (status, code) = match &e {
            Error::StaleVersion { .. } => (StatusCode::CONFLICT, "stale_version"),
            Error::BudgetExhausted { .. } => (StatusCode::CONFLICT, "budget_exhausted"),
            Error::Unknown { kind: "proposal", .. } => (StatusCode::NOT_FOUND, "not_found"),
            Error::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
            Error::DimensionMismatch { .. }
            | Error::DuplicateVariable(_)
            | Error::UnknownVariable(_)
            | Error::InvalidParameter(_)
            | Error::InvalidStart(_)
            | Error::Unknown { .. }
            | Error::Parse { .. }
            | Error::Manifest(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::DegenerateVariable(_)
            | Error::DegenerateBounds(_)
            | Error::NonPositiveDistance(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            _ => (StatusCode::UNPROCESSABLE_ENTITY, "unprocessable"),
        };
        Self::new(status, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}
