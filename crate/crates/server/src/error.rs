use std::path::PathBuf;

use axum::extract::rejection::JsonRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use thiserror::Error;
use tracing::error;

use histoseek_core::api::{ErrorBody, FieldError};
use histoseek_core::ontology::ProfileError;
use histoseek_core::repository::StoreError;

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("path does not exist: {0}")]
    MissingPath(PathBuf),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(std::io::Error),
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    Invalid(FieldError),
    #[error("{1}")]
    BadBody(StatusCode, String),
    #[error("image exceeds {0} bytes")]
    TooLarge(usize),
    #[error("not found")]
    NotFound,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Internal(String),
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::BadBody(r.status(), r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, field, message) = match self {
            ApiError::Invalid(f) => (StatusCode::UNPROCESSABLE_ENTITY, f.field, f.message),
            ApiError::BadBody(status, msg) => (status, "body".to_string(), msg),
            ApiError::TooLarge(_) => (StatusCode::PAYLOAD_TOO_LARGE, "image".to_string(), self.to_string()),
            ApiError::NotFound => (StatusCode::NOT_FOUND, "id".to_string(), self.to_string()),
            ApiError::Store(_) | ApiError::Internal(_) => {
                error!(error = %self, "request failed");
                (StatusCode::INTERNAL_SERVER_ERROR, String::new(), self.to_string())
            }
        };
        (
            status,
            Json(ErrorBody {
                error: FieldError { field, message },
            }),
        )
            .into_response()
    }
}
