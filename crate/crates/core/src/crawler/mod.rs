//! Ontology-gated crawling.
//!
//! Starting from the seed URLs the crawler walks pages breadth first. Every
//! fetched page is scored against a [`DomainProfile`]; only pages whose
//! relevance strictly exceeds the profile's limit have their images fetched,
//! signed and stored. Links are followed from every page, relevant or not.

pub mod html;
pub mod robots;

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{Mutex as AsyncMutex, OnceCell, OwnedMutexGuard};
use tokio::task::JoinSet;
use tokio::time::Instant;
use tracing::{debug, warn};
use url::Url;

use crate::imaging::{self, Signature};
use crate::ontology::{DomainProfile, RelevanceScore};
use crate::repository::{ImageEntry, Repository, StoreError};
use robots::RobotsRules;

pub const DEFAULT_USER_AGENT: &str = concat!("histoseek/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum CrawlError {
    #[error("at least one seed URL is required")]
    NoSeeds,
    #[error("max_pages must be at least 1")]
    ZeroPages,
    #[error("workers must be at least 1")]
    ZeroWorkers,
    #[error("seed {0:?} is not an absolute http(s) URL")]
    BadSeed(String),
    #[error("cannot read seeds file {path}: {source}")]
    SeedsFile {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("http client: {0}")]
    Client(#[from] reqwest::Error),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone)]
pub struct CrawlConfig {
    pub seeds: Vec<Url>,
    pub max_pages: usize,
    pub max_depth: u32,
    pub per_host_delay: Duration,
    pub same_host_only: bool,
    pub user_agent: String,
    pub respect_robots: bool,
    /// Concurrent page fetches. With 1 the crawl order is fully deterministic.
    pub workers: usize,
    pub max_body_bytes: usize,
    pub request_timeout: Duration,
    /// Keep a copy of every indexed image in the repository's thumbnail cache.
    pub cache_images: bool,
}

impl CrawlConfig {
    pub fn new(seeds: Vec<Url>) -> Result<Self, CrawlError> {
        let config = CrawlConfig {
            seeds,
            max_pages: 100,
            max_depth: 5,
            per_host_delay: Duration::from_millis(250),
            same_host_only: true,
            user_agent: DEFAULT_USER_AGENT.to_string(),
            respect_robots: true,
            workers: 1,
            max_body_bytes: 10 << 20,
            request_timeout: Duration::from_secs(20),
            cache_images: true,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CrawlError> {
        if self.seeds.is_empty() {
            return Err(CrawlError::NoSeeds);
        }
        if let Some(bad) = self.seeds.iter().find(|u| !is_http(u)) {
            return Err(CrawlError::BadSeed(bad.to_string()));
        }
        if self.max_pages == 0 {
            return Err(CrawlError::ZeroPages);
        }
        if self.workers == 0 {
            return Err(CrawlError::ZeroWorkers);
        }
        Ok(())
    }
}

fn is_http(u: &Url) -> bool {
    matches!(u.scheme(), "http" | "https") && u.has_host()
}

/// Parses a seeds file: one absolute URL per line, blank lines and `#`
/// comments ignored.
pub fn parse_seeds(text: &str) -> Result<Vec<Url>, CrawlError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            Url::parse(l)
                .ok()
                .filter(is_http)
                .ok_or_else(|| CrawlError::BadSeed(l.to_string()))
        })
        .collect()
}

pub fn read_seeds(path: impl AsRef<Path>) -> Result<Vec<Url>, CrawlError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CrawlError::SeedsFile {
        path: path.display().to_string(),
        source,
    })?;
    parse_seeds(&text)
}

/// Lowercased scheme and host, dot segments resolved, fragment removed.
pub fn canonicalize(url: &Url) -> Url {
    // `Url` already normalises case, default ports and dot segments on parse.
    let mut u = url.clone();
    u.set_fragment(None);
    u
}

/// Breadth-first queue that never hands out the same canonical URL twice.
#[derive(Debug, Default)]
pub struct Frontier {
    queue: VecDeque<(Url, u32)>,
    seen: HashSet<Url>,
}

impl Frontier {
    pub fn push(&mut self, url: &Url, depth: u32) -> bool {
        let canon = canonicalize(url);
        if self.seen.insert(canon.clone()) {
            self.queue.push_back((canon, depth));
            true
        } else {
            false
        }
    }

    pub fn pop(&mut self) -> Option<(Url, u32)> {
        self.queue.pop_front()
    }

    pub fn mark_seen(&mut self, url: &Url) {
        self.seen.insert(canonicalize(url));
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageRecord {
    pub url: Url,
    pub depth: u32,
    pub relevance: RelevanceScore,
    pub relevant: bool,
    pub image_refs: Vec<Url>,
    pub fetched_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlIssue {
    pub url: Url,
    pub message: String,
}

/// Outcome of a crawl. `pages_fetched` always equals
/// `pages_relevant + pages_irrelevant + pages_errored`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CrawlReport {
    pub pages_fetched: usize,
    pub pages_relevant: usize,
    pub pages_irrelevant: usize,
    pub pages_errored: usize,
    pub pages_blocked_by_robots: usize,
    pub images_indexed: usize,
    pub images_failed: usize,
    pub errors: Vec<CrawlIssue>,
    pub pages: Vec<PageRecord>,
}

#[derive(Clone)]
struct ImageData {
    signature: Signature,
    bytes: Arc<Vec<u8>>,
}

type ImageResult = Result<ImageData, String>;

enum PageOutcome {
    Blocked,
    Failed(CrawlIssue),
    Fetched {
        record: PageRecord,
        links: Vec<Url>,
        images: Vec<(Url, ImageResult)>,
    },
}

/// Serialises requests per host and spaces them by the configured delay.
struct HostGate {
    delay: Duration,
    hosts: Mutex<HashMap<String, Arc<AsyncMutex<Option<Instant>>>>>,
}

impl HostGate {
    async fn enter(&self, url: &Url) -> OwnedMutexGuard<Option<Instant>> {
        let key = url.origin().ascii_serialization();
        let slot = self
            .hosts
            .lock()
            .expect("host map poisoned")
            .entry(key)
            .or_default()
            .clone();
        let guard = slot.lock_owned().await;
        if let Some(last) = *guard {
            tokio::time::sleep_until(last + self.delay).await;
        }
        guard
    }
}

struct Fetched {
    url: Url,
    content_type: Option<String>,
    body: Vec<u8>,
}

struct Ctx {
    client: reqwest::Client,
    profile: DomainProfile,
    config: CrawlConfig,
    gate: HostGate,
    robots: Mutex<HashMap<String, Arc<OnceCell<RobotsRules>>>>,
    images: Mutex<HashMap<Url, Arc<OnceCell<ImageResult>>>>,
}

impl Ctx {
    async fn fetch(&self, url: &Url) -> Result<Fetched, String> {
        let mut slot = self.gate.enter(url).await;
        let result = self.fetch_unthrottled(url).await;
        *slot = Some(Instant::now());
        result
    }

    async fn fetch_unthrottled(&self, url: &Url) -> Result<Fetched, String> {
        let mut resp = self.client.get(url.clone()).send().await.map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("HTTP {status}"));
        }
        let content_type = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(str::to_ascii_lowercase);
        let final_url = resp.url().clone();
        let mut body = Vec::new();
        while let Some(chunk) = resp.chunk().await.map_err(|e| e.to_string())? {
            if body.len() + chunk.len() > self.config.max_body_bytes {
                return Err(format!("body exceeds {} bytes", self.config.max_body_bytes));
            }
            body.extend_from_slice(&chunk);
        }
        Ok(Fetched {
            url: final_url,
            content_type,
            body,
        })
    }

    async fn allowed(&self, url: &Url) -> bool {
        if !self.config.respect_robots {
            return true;
        }
        let origin = url.origin().ascii_serialization();
        let cell = self
            .robots
            .lock()
            .expect("robots map poisoned")
            .entry(origin)
            .or_default()
            .clone();
        let rules = cell
            .get_or_init(|| async {
                let Ok(robots_url) = url.join("/robots.txt") else {
                    return RobotsRules::allow_all();
                };
                match self.fetch(&robots_url).await {
                    Ok(f) => RobotsRules::parse(&String::from_utf8_lossy(&f.body), &self.config.user_agent),
                    Err(_) => RobotsRules::allow_all(),
                }
            })
            .await;
        let mut path = url.path().to_string();
        if let Some(q) = url.query() {
            path.push('?');
            path.push_str(q);
        }
        rules.is_allowed(&path)
    }

    /// Fetches and signs an image once per crawl, however many pages use it.
    async fn image(&self, url: &Url) -> ImageResult {
        let cell = self
            .images
            .lock()
            .expect("image map poisoned")
            .entry(url.clone())
            .or_default()
            .clone();
        cell.get_or_init(|| async {
            if !self.allowed(url).await {
                return Err("disallowed by robots.txt".to_string());
            }
            let fetched = self.fetch(url).await?;
            let bytes = Arc::new(fetched.body);
            let for_decode = bytes.clone();
            let signature = tokio::task::spawn_blocking(move || imaging::signature_of_bytes(&for_decode))
                .await
                .map_err(|e| e.to_string())?
                .map_err(|e| e.to_string())?;
            Ok(ImageData { signature, bytes })
        })
        .await
        .clone()
    }

    async fn visit(self: Arc<Self>, url: Url, depth: u32) -> PageOutcome {
        if !self.allowed(&url).await {
            return PageOutcome::Blocked;
        }
        let fetched = match self.fetch(&url).await {
            Ok(f) => f,
            Err(message) => return PageOutcome::Failed(CrawlIssue { url, message }),
        };
        let fetched_at = Utc::now();
        let is_html = fetched.content_type.as_deref().is_none_or(|ct| ct.contains("html"));
        if !is_html {
            debug!(url = %fetched.url, "skipping non-HTML page");
            let relevance = self.profile.score_text("");
            return PageOutcome::Fetched {
                record: PageRecord {
                    url: fetched.url,
                    depth,
                    relevance,
                    relevant: false,
                    image_refs: Vec::new(),
                    fetched_at,
                },
                links: Vec::new(),
                images: Vec::new(),
            };
        }

        let (text, links, image_refs) = {
            let doc = html::Page::parse(&String::from_utf8_lossy(&fetched.body));
            (doc.text(), doc.links(&fetched.url), doc.image_refs(&fetched.url))
        };
        let relevance = self.profile.score_text(&text);
        let relevant = self.profile.is_relevant(&relevance);

        let mut images = Vec::new();
        if relevant {
            for img in &image_refs {
                images.push((img.clone(), self.image(img).await));
            }
        }
        PageOutcome::Fetched {
            record: PageRecord {
                url: fetched.url,
                depth,
                relevance,
                relevant,
                image_refs,
                fetched_at,
            },
            links,
            images,
        }
    }
}

/// Crawls from the configured seeds, storing signatures of every image on
/// a relevant page into `repo`. Network and decode failures are recorded
/// in the report; only repository write failures abort the crawl.
pub async fn crawl(
    config: &CrawlConfig,
    profile: &DomainProfile,
    repo: &Repository,
) -> Result<CrawlReport, CrawlError> {
    config.validate()?;
    let client = reqwest::Client::builder()
        .user_agent(config.user_agent.clone())
        .timeout(config.request_timeout)
        .build()?;
    let ctx = Arc::new(Ctx {
        client,
        profile: profile.clone(),
        config: config.clone(),
        gate: HostGate {
            delay: config.per_host_delay,
            hosts: Mutex::default(),
        },
        robots: Mutex::default(),
        images: Mutex::default(),
    });
    let seed_hosts: HashSet<String> = config.seeds.iter().map(|u| u.origin().ascii_serialization()).collect();

    let mut frontier = Frontier::default();
    for seed in &config.seeds {
        frontier.push(seed, 0);
    }

    let mut report = CrawlReport::default();
    let mut launched = 0usize;
    let mut in_flight = JoinSet::new();
    loop {
        while in_flight.len() < config.workers && launched < config.max_pages {
            let Some((url, depth)) = frontier.pop() else { break };
            launched += 1;
            in_flight.spawn(ctx.clone().visit(url, depth));
        }
        let Some(joined) = in_flight.join_next().await else {
            break;
        };
        match joined.expect("crawl task panicked") {
            PageOutcome::Blocked => {
                launched -= 1;
                report.pages_blocked_by_robots += 1;
            }
            PageOutcome::Failed(issue) => {
                warn!(url = %issue.url, error = %issue.message, "page fetch failed");
                report.pages_fetched += 1;
                report.pages_errored += 1;
                report.errors.push(issue);
            }
            PageOutcome::Fetched { record, links, images } => {
                report.pages_fetched += 1;
                frontier.mark_seen(&record.url);
                if record.relevant {
                    report.pages_relevant += 1;
                } else {
                    report.pages_irrelevant += 1;
                }
                for (image_url, result) in images {
                    match result {
                        Ok(data) => {
                            let mut entry = ImageEntry::new(
                                image_url,
                                record.url.clone(),
                                profile.name(),
                                record.relevance.value,
                                data.signature,
                            );
                            if config.cache_images {
                                entry.content_sha256 = Some(repo.cache_image(&data.bytes)?);
                            }
                            repo.insert(entry)?;
                            report.images_indexed += 1;
                        }
                        Err(message) => {
                            report.images_failed += 1;
                            report.errors.push(CrawlIssue {
                                url: image_url,
                                message,
                            });
                        }
                    }
                }
                let next_depth = record.depth + 1;
                if next_depth <= config.max_depth {
                    for link in &links {
                        if config.same_host_only && !seed_hosts.contains(&link.origin().ascii_serialization()) {
                            continue;
                        }
                        frontier.push(link, next_depth);
                    }
                }
                report.pages.push(record);
            }
        }
    }
    repo.sync()?;
    Ok(report)
}
