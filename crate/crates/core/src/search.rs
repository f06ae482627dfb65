//! Image-to-image search over a repository snapshot.
//!
//! Exact mode accepts a candidate when no gray level differs from the query
//! by more than [`EXACT_EPSILON`] percentage points, which absorbs the small
//! drift resampling introduces. Probable mode additionally accepts a
//! candidate whose histogram intersection with the query is at least
//! `100 − tolerance`, i.e. at most `tolerance` percentage points of the
//! distribution disagree.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{self, ImageError, Signature};
use crate::repository::{ImageEntry, Snapshot, StoreError};

/// Largest per-level gap, in percentage points, still counted as an exact match.
pub const EXACT_EPSILON: f64 = 0.01;

pub const MAX_TOLERANCE: u8 = 100;

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("tolerance must be an integer in [0, 100], got {0}")]
    ToleranceOutOfRange(i64),
    #[error("exact mode requires tolerance 0, got {0}")]
    ExactWithTolerance(i64),
    #[error("relevance range [{0}, {1}] is invalid")]
    InvalidRange(f64, f64),
    #[error("unknown match mode {0:?}; expected \"exact\" or \"probable\"")]
    UnknownMode(String),
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("unknown domain {0:?}")]
    UnknownDomain(String),
    #[error("query image: {0}")]
    Image(#[from] ImageError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Exact,
    Probable,
}

impl FromStr for MatchMode {
    type Err = QueryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(MatchMode::Exact),
            "probable" => Ok(MatchMode::Probable),
            other => Err(QueryError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tolerance(u8);

impl Tolerance {
    pub const ZERO: Tolerance = Tolerance(0);

    pub fn new(value: i64) -> Result<Self, QueryError> {
        u8::try_from(value)
            .ok()
            .filter(|v| *v <= MAX_TOLERANCE)
            .map(Tolerance)
            .ok_or(QueryError::ToleranceOutOfRange(value))
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

/// Validated search parameters, minus the query image itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    mode: MatchMode,
    tolerance: Tolerance,
    domain: String,
    rel_range: Option<(f64, f64)>,
}

impl Query {
    /// `tolerance: None` defaults to 0. Exact mode rejects any nonzero
    /// tolerance. A missing relevance range means the domain's full bounds.
    pub fn new(
        mode: MatchMode,
        tolerance: Option<i64>,
        domain: impl Into<String>,
        rel_range: Option<(f64, f64)>,
    ) -> Result<Self, QueryError> {
        let raw = tolerance.unwrap_or(0);
        let tolerance = Tolerance::new(raw)?;
        if mode == MatchMode::Exact && tolerance != Tolerance::ZERO {
            return Err(QueryError::ExactWithTolerance(raw));
        }
        if let Some((lo, hi)) = rel_range {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(QueryError::InvalidRange(lo, hi));
            }
        }
        Ok(Query {
            mode,
            tolerance,
            domain: domain.into(),
            rel_range,
        })
    }

    pub fn exact(domain: impl Into<String>) -> Self {
        Query::new(MatchMode::Exact, None, domain, None).expect("valid by construction")
    }

    pub fn probable(domain: impl Into<String>, tolerance: u8) -> Result<Self, QueryError> {
        Query::new(MatchMode::Probable, Some(i64::from(tolerance)), domain, None)
    }

    pub fn with_range(mut self, min: f64, max: f64) -> Result<Self, QueryError> {
        if !min.is_finite() || !max.is_finite() || min > max {
            return Err(QueryError::InvalidRange(min, max));
        }
        self.rel_range = Some((min, max));
        Ok(self)
    }

    pub fn mode(&self) -> MatchMode {
        self.mode
    }

    pub fn tolerance(&self) -> Tolerance {
        self.tolerance
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn rel_range(&self) -> Option<(f64, f64)> {
        self.rel_range
    }

    fn accepts(&self, query: &Signature, candidate: &Signature) -> bool {
        match self.mode {
            MatchMode::Exact => match_exact(query, candidate),
            MatchMode::Probable => match_probable(query, candidate, self.tolerance),
        }
    }
}

pub fn match_exact(q: &Signature, r: &Signature) -> bool {
    q.chebyshev_gap(r) <= EXACT_EPSILON
}

pub fn match_probable(q: &Signature, r: &Signature, tolerance: Tolerance) -> bool {
    match_exact(q, r) || q.intersection(r) >= 100.0 - f64::from(tolerance.get())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub entry: ImageEntry,
    pub similarity: f64,
    pub gap: f64,
    pub rank: usize,
}

/// Ranking: similarity descending, then relevance descending, then image
/// URL, page URL and id ascending.
fn rank_order(a: &SearchResult, b: &SearchResult) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| b.entry.relevance.total_cmp(&a.entry.relevance))
        .then_with(|| a.entry.image_url.as_str().cmp(b.entry.image_url.as_str()))
        .then_with(|| a.entry.page_url.as_str().cmp(b.entry.page_url.as_str()))
        .then_with(|| a.entry.id.cmp(&b.entry.id))
}

/// Matches an already computed query signature against the snapshot.
///
/// `known_domains` lists domains with a loaded profile; a domain is also
/// known when the snapshot holds entries for it.
pub fn search_signature(
    query: &Query,
    signature: &Signature,
    snapshot: &Snapshot,
    known_domains: &BTreeSet<String>,
) -> Result<Vec<SearchResult>, SearchError> {
    let bounds = snapshot.domain_bounds(&query.domain).ok();
    if bounds.is_none() && !known_domains.contains(&query.domain) {
        return Err(SearchError::UnknownDomain(query.domain.clone()));
    }
    let (min, max) = match (query.rel_range, bounds) {
        (Some(range), _) => range,
        (None, Some(b)) => (b.rel_min as f64, b.rel_max as f64),
        (None, None) => return Ok(Vec::new()),
    };

    let mut results: Vec<SearchResult> = snapshot
        .scan(&query.domain, min, max)?
        .filter(|e| query.accepts(signature, &e.signature))
        .map(|e| SearchResult {
            similarity: signature.intersection(&e.signature),
            gap: signature.chebyshev_gap(&e.signature),
            entry: e.clone(),
            rank: 0,
        })
        .collect();
    results.sort_by(rank_order);
    for (i, r) in results.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(results)
}

/// Full pipeline from encoded query image bytes.
pub fn execute_search(
    query: &Query,
    image_bytes: &[u8],
    snapshot: &Snapshot,
    known_domains: &BTreeSet<String>,
) -> Result<Vec<SearchResult>, SearchError> {
    let signature = imaging::signature_of_bytes(image_bytes)?;
    search_signature(query, &signature, snapshot, known_domains)
}
