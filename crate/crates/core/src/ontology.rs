//! Domain ontologies and page relevance scoring.
//!
//! A [`DomainProfile`] carries a weight table (ontology term → weight in
//! `[0, 1]`), a synonym table, and the relevance limit a page must exceed to
//! be considered part of the domain. Page text is scored by counting term
//! occurrences (synonyms count toward their canonical term) and summing
//! `count × weight`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("failed to read profile {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed profile document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("profile name must be nonempty")]
    EmptyName,
    #[error("relevance limit must be a finite nonnegative number, got {0}")]
    BadLimit(f64),
    #[error("weight of term {term:?} is {weight}, outside [0, 1]")]
    WeightOutOfRange { term: String, weight: f64 },
    #[error("phrase {0:?} is not a lowercase, single-spaced sequence of words")]
    BadPhrase(String),
    #[error("duplicate canonical term {0:?}")]
    DuplicateTerm(String),
    #[error("synonym {synonym:?} of {term:?} collides with another term or synonym")]
    DuplicateSynonym { term: String, synonym: String },
    #[error("profile {0:?} is defined more than once")]
    DuplicateProfile(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum RelevanceError {
    #[error("term {0:?} is not part of the profile")]
    UnknownTerm(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OntologyTerm {
    pub term: String,
    pub weight: f64,
    #[serde(default)]
    pub synonyms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile", into = "RawProfile")]
pub struct DomainProfile {
    name: String,
    relevance_limit: f64,
    terms: Vec<OntologyTerm>,
    /// Token sequence of every term and synonym → index into `terms`.
    #[serde(skip)]
    phrases: HashMap<Vec<String>, usize>,
    #[serde(skip)]
    longest_phrase: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    name: String,
    relevance_limit: f64,
    terms: Vec<OntologyTerm>,
}

impl TryFrom<RawProfile> for DomainProfile {
    type Error = ProfileError;

    fn try_from(raw: RawProfile) -> Result<Self, Self::Error> {
        DomainProfile::new(raw.name, raw.relevance_limit, raw.terms)
    }
}

impl From<DomainProfile> for RawProfile {
    fn from(p: DomainProfile) -> Self {
        RawProfile {
            name: p.name,
            relevance_limit: p.relevance_limit,
            terms: p.terms,
        }
    }
}

impl DomainProfile {
    pub fn new(name: impl Into<String>, relevance_limit: f64, terms: Vec<OntologyTerm>) -> Result<Self, ProfileError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(ProfileError::EmptyName);
        }
        if !relevance_limit.is_finite() || relevance_limit < 0.0 {
            return Err(ProfileError::BadLimit(relevance_limit));
        }

        let mut phrases = HashMap::new();
        let mut longest_phrase = 0;
        // Canonical terms first so a synonym colliding with a later term is
        // reported as a synonym problem.
        for (idx, t) in terms.iter().enumerate() {
            if !(0.0..=1.0).contains(&t.weight) {
                return Err(ProfileError::WeightOutOfRange {
                    term: t.term.clone(),
                    weight: t.weight,
                });
            }
            let tokens = phrase_tokens(&t.term)?;
            longest_phrase = longest_phrase.max(tokens.len());
            if phrases.insert(tokens, idx).is_some() {
                return Err(ProfileError::DuplicateTerm(t.term.clone()));
            }
        }
        for (idx, t) in terms.iter().enumerate() {
            for syn in &t.synonyms {
                let tokens = phrase_tokens(syn)?;
                longest_phrase = longest_phrase.max(tokens.len());
                if phrases.insert(tokens, idx).is_some() {
                    return Err(ProfileError::DuplicateSynonym {
                        term: t.term.clone(),
                        synonym: syn.clone(),
                    });
                }
            }
        }

        Ok(DomainProfile {
            name,
            relevance_limit,
            terms,
            phrases,
            longest_phrase,
        })
    }

    pub fn from_json(doc: &str) -> Result<Self, ProfileError> {
        let raw: RawProfile = serde_json::from_str(doc)?;
        raw.try_into()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProfileError> {
        let path = path.as_ref();
        let doc = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&doc)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn relevance_limit(&self) -> f64 {
        self.relevance_limit
    }

    pub fn terms(&self) -> &[OntologyTerm] {
        &self.terms
    }

    pub fn weight(&self, term: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.term == term).map(|t| t.weight)
    }

    /// Counts occurrences of every canonical term in `text`, folding synonym
    /// hits into their canonical term.
    ///
    /// Matching is over lowercase word tokens. At each position the longest
    /// known phrase wins and its tokens are consumed, so "associate professor"
    /// never also counts a separate "professor" term.
    pub fn count_occurrences(&self, text: &str) -> TermCounts {
        let mut counts: TermCounts = self.terms.iter().map(|t| (t.term.clone(), 0)).collect();
        if self.longest_phrase == 0 {
            return counts;
        }
        let tokens = tokenize(text);
        let mut pos = 0;
        while pos < tokens.len() {
            let max_len = self.longest_phrase.min(tokens.len() - pos);
            let hit = (1..=max_len)
                .rev()
                .find_map(|len| self.phrases.get(&tokens[pos..pos + len]).map(|&idx| (idx, len)));
            match hit {
                Some((idx, len)) => {
                    *counts.get_mut(&self.terms[idx].term).expect("term present") += 1;
                    pos += len;
                }
                None => pos += 1,
            }
        }
        counts
    }

    /// Sums `count × weight` over the profile's terms.
    pub fn relevance(&self, counts: &TermCounts) -> Result<RelevanceScore, RelevanceError> {
        if let Some(unknown) = counts.keys().find(|k| self.weight(k).is_none()) {
            return Err(RelevanceError::UnknownTerm(unknown.clone()));
        }
        let mut value = 0.0;
        let mut per_term = BTreeMap::new();
        for t in &self.terms {
            let count = counts.get(&t.term).copied().unwrap_or(0);
            let contribution = count as f64 * t.weight;
            value += contribution;
            per_term.insert(t.term.clone(), TermRelevance { count, contribution });
        }
        Ok(RelevanceScore { value, per_term })
    }

    /// Counts and scores in one step.
    pub fn score_text(&self, text: &str) -> RelevanceScore {
        self.relevance(&self.count_occurrences(text))
            .expect("counts produced by this profile only carry its own terms")
    }

    /// Strictly greater than the relevance limit.
    pub fn is_relevant(&self, score: &RelevanceScore) -> bool {
        score.value > self.relevance_limit
    }
}

/// Loads every `*.json` profile in `dir`, sorted by name. Two files
/// defining the same profile name are an error.
pub fn load_profiles_dir(dir: impl AsRef<Path>) -> Result<Vec<DomainProfile>, ProfileError> {
    let dir = dir.as_ref();
    let io = |source| ProfileError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut profiles = Vec::new();
    for item in std::fs::read_dir(dir).map_err(io)? {
        let path = item.map_err(io)?.path();
        if path.extension().is_some_and(|e| e == "json") {
            profiles.push(DomainProfile::load(&path)?);
        }
    }
    profiles.sort_by(|a, b| a.name.cmp(&b.name));
    if let Some(w) = profiles.windows(2).find(|w| w[0].name == w[1].name) {
        return Err(ProfileError::DuplicateProfile(w[0].name.clone()));
    }
    Ok(profiles)
}

pub type TermCounts = BTreeMap<String, u64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermRelevance {
    pub count: u64,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceScore {
    pub value: f64,
    pub per_term: BTreeMap<String, TermRelevance>,
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn phrase_tokens(phrase: &str) -> Result<Vec<String>, ProfileError> {
    let tokens = tokenize(phrase);
    if tokens.is_empty() || tokens.join(" ") != phrase {
        return Err(ProfileError::BadPhrase(phrase.to_string()));
    }
    Ok(tokens)
}
