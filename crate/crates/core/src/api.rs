//! JSON shapes exchanged between the search service, its client and the CLI.

use base64::Engine;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::repository::DomainBounds;
use crate::search::{MatchMode, Query, QueryError, SearchResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainInfo {
    pub name: String,
    pub rel_min: i64,
    pub rel_max: i64,
}

impl From<DomainBounds> for DomainInfo {
    fn from(b: DomainBounds) -> Self {
        DomainInfo {
            name: b.domain,
            rel_min: b.rel_min,
            rel_max: b.rel_max,
        }
    }
}

/// Body of `POST /api/search`. Exactly one of `image_url` and `image_b64`
/// must be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_b64: Option<String>,
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<i64>,
    pub domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance_range: Option<[f64; 2]>,
}

pub enum ImageSource {
    Url(Url),
    Bytes(Vec<u8>),
}

impl SearchRequest {
    /// Sets `image_b64` from raw bytes and clears `image_url`.
    pub fn set_image_bytes(&mut self, bytes: &[u8]) {
        self.image_url = None;
        self.image_b64 = Some(base64::engine::general_purpose::STANDARD.encode(bytes));
    }

    pub fn query(&self) -> Result<Query, FieldError> {
        let mode: MatchMode = self.mode.parse().map_err(|e: QueryError| FieldError::new("mode", e))?;
        if self.domain.trim().is_empty() {
            return Err(FieldError::new("domain", "domain is required"));
        }
        Query::new(
            mode,
            self.tolerance,
            self.domain.clone(),
            self.relevance_range.map(|[a, b]| (a, b)),
        )
        .map_err(|e| match e {
            QueryError::InvalidRange(..) => FieldError::new("relevance_range", e),
            QueryError::UnknownMode(_) => FieldError::new("mode", e),
            _ => FieldError::new("tolerance", e),
        })
    }

    pub fn image_source(&self) -> Result<ImageSource, FieldError> {
        match (&self.image_url, &self.image_b64) {
            (Some(u), None) => Url::parse(u)
                .ok()
                .filter(|u| matches!(u.scheme(), "http" | "https"))
                .map(ImageSource::Url)
                .ok_or_else(|| FieldError::new("image_url", "image_url must be an absolute http(s) URL")),
            (None, Some(b)) => base64::engine::general_purpose::STANDARD
                .decode(b.trim())
                .map(ImageSource::Bytes)
                .map_err(|e| FieldError::new("image_b64", format!("invalid base64: {e}"))),
            (Some(_), Some(_)) => Err(FieldError::new("image", "give either image_url or image_b64, not both")),
            (None, None) => Err(FieldError::new("image", "image_url or image_b64 is required")),
        }
    }
}

/// One ranked match; the entry's signature is left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub rank: usize,
    pub id: String,
    pub image_url: String,
    pub page_url: String,
    pub domain: String,
    pub relevance: f64,
    pub similarity: f64,
    pub gap: f64,
}

impl From<&SearchResult> for SearchHit {
    fn from(r: &SearchResult) -> Self {
        SearchHit {
            rank: r.rank,
            id: r.entry.id.clone(),
            image_url: r.entry.image_url.to_string(),
            page_url: r.entry.page_url.to_string(),
            domain: r.entry.domain.clone(),
            relevance: r.entry.relevance,
            similarity: r.similarity,
            gap: r.gap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub results: Vec<SearchHit>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl ToString) -> Self {
        FieldError {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for FieldError {}

/// Error body: `{"error": {"field": ..., "message": ...}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: FieldError,
}

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("{0}")]
    Http(#[from] reqwest::Error),
    #[error("HTTP {0}")]
    Status(reqwest::StatusCode),
    #[error("body exceeds {0} bytes")]
    TooLarge(usize),
}

/// GETs `url`, refusing bodies larger than `max_bytes`.
pub async fn fetch_image(client: &reqwest::Client, url: Url, max_bytes: usize) -> Result<Vec<u8>, FetchError> {
    let mut resp = client.get(url).send().await?;
    if !resp.status().is_success() {
        return Err(FetchError::Status(resp.status()));
    }
    let mut body = Vec::new();
    while let Some(chunk) = resp.chunk().await? {
        if body.len() + chunk.len() > max_bytes {
            return Err(FetchError::TooLarge(max_bytes));
        }
        body.extend_from_slice(&chunk);
    }
    Ok(body)
}

pub fn parse_error_body(body: &str) -> Option<ErrorBody> {
    serde_json::from_str(body).ok()
}
