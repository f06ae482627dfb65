//! Thin async client for the histoseek search service.

use histoseek_core::api::{
    parse_error_body, DomainInfo, ErrorBody, FieldError, SearchHit, SearchRequest, SearchResponse,
};
use reqwest::{Response, StatusCode};
use thiserror::Error;
use url::Url;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid base URL: {0}")]
    BaseUrl(#[from] url::ParseError),
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("service rejected the request ({status}): {error}")]
    Api { status: StatusCode, error: FieldError },
    #[error("unexpected response ({status}): {body}")]
    Unexpected { status: StatusCode, body: String },
}

impl ClientError {
    /// True for 4xx responses, i.e. problems with the request itself.
    pub fn is_rejection(&self) -> bool {
        matches!(self, ClientError::Api { status, .. } | ClientError::Unexpected { status, .. } if status.is_client_error())
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: Url,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base: &str) -> Result<Self, ClientError> {
        let mut base = Url::parse(base)?;
        if !base.path().ends_with('/') {
            base.set_path(&format!("{}/", base.path()));
        }
        Ok(Client {
            base,
            http: reqwest::Client::new(),
        })
    }

    pub fn base_url(&self) -> &Url {
        &self.base
    }

    fn endpoint(&self, path: &str) -> Result<Url, ClientError> {
        Ok(self.base.join(path)?)
    }

    pub async fn domains(&self) -> Result<Vec<DomainInfo>, ClientError> {
        let resp = self.http.get(self.endpoint("api/domains")?).send().await?;
        Ok(check(resp).await?.json().await?)
    }

    pub async fn search(&self, request: &SearchRequest) -> Result<Vec<SearchHit>, ClientError> {
        let resp = self
            .http
            .post(self.endpoint("api/search")?)
            .json(request)
            .send()
            .await?;
        let body: SearchResponse = check(resp).await?.json().await?;
        Ok(body.results)
    }

    /// Cached image bytes for an entry, `None` when the service has none.
    pub async fn thumb(&self, id: &str) -> Result<Option<Vec<u8>>, ClientError> {
        let mut url = self.endpoint("api/thumb/")?;
        url.path_segments_mut().expect("http base URL").pop_if_empty().push(id);
        let resp = self.http.get(url).send().await?;
        if resp.status() == StatusCode::NOT_FOUND {
            return Ok(None);
        }
        Ok(Some(check(resp).await?.bytes().await?.to_vec()))
    }
}

async fn check(resp: Response) -> Result<Response, ClientError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let body = resp.text().await?;
    match parse_error_body(&body) {
        Some(ErrorBody { error }) => Err(ClientError::Api { status, error }),
        None => Err(ClientError::Unexpected { status, body }),
    }
}
