//! Domain-specific image search: ontology-gated crawling, grayscale
//! histogram signatures, a JSON-Lines image repository and tolerance-based
//! image-to-image matching.

pub mod api;
pub mod crawler;
pub mod imaging;
pub mod ontology;
pub mod repository;
pub mod search;

pub use crawler::{crawl, CrawlConfig, CrawlReport};
pub use imaging::{signature_of_bytes, GrayImage, Histogram, Signature};
pub use ontology::{DomainProfile, OntologyTerm, RelevanceScore};
pub use repository::{DomainBounds, ImageEntry, Repository, Snapshot, SnapshotReader};
pub use search::{execute_search, MatchMode, Query, SearchResult};
