//! Keyphrase candidates, extraction budgets and the reference ranker.
//!
//! Candidates are word n-grams that neither start nor end with a stopword.
//! The reference ranker scores each candidate by the cosine between its
//! embedding and the embedding of the whole text.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Keyphrase, KeyphraseOrigin, PipelineConfig, PipelineMode};
use crate::weighting::{cosine, embed_texts, EmbedError, Embedder};

pub const DEFAULT_MAX_NGRAM: usize = 4;

#[derive(Debug, Error, Clone)]
pub enum KeyphraseError {
    #[error("material must have at least one slide")]
    NoSlides,
    #[error("keyphrase budget must be at least 1")]
    ZeroBudget,
    #[error(transparent)]
    Embedding(#[from] EmbedError),
}

/// Per-call extraction budget: `15 × num_slides` for the whole material in
/// top-down mode, `15` per slide in bottom-up mode.
pub fn keyphrase_budget(num_slides: usize, mode: PipelineMode) -> Result<usize, KeyphraseError> {
    budget_for(&PipelineConfig::default(), num_slides, mode)
}

pub fn budget_for(config: &PipelineConfig, num_slides: usize, mode: PipelineMode) -> Result<usize, KeyphraseError> {
    if num_slides == 0 {
        return Err(KeyphraseError::NoSlides);
    }
    Ok(match mode {
        PipelineMode::TopDown => config.material_budget_factor * num_slides,
        PipelineMode::BottomUp => config.per_slide_budget,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePhrase {
    pub surface: String,
    /// Token offsets `[start, end)` of the first occurrence.
    pub token_span: (usize, usize),
    pub score: f64,
}

impl CandidatePhrase {
    pub fn token_len(&self) -> usize {
        self.token_span.1 - self.token_span.0
    }
}

const STOPWORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "after",
    "again",
    "against",
    "all",
    "also",
    "am",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "doing",
    "down",
    "during",
    "each",
    "either",
    "else",
    "etc",
    "even",
    "every",
    "few",
    "for",
    "from",
    "further",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "however",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "itself",
    "just",
    "least",
    "less",
    "may",
    "me",
    "might",
    "more",
    "most",
    "much",
    "must",
    "my",
    "myself",
    "neither",
    "no",
    "nor",
    "not",
    "now",
    "of",
    "off",
    "on",
    "once",
    "one",
    "only",
    "or",
    "other",
    "our",
    "ours",
    "ourselves",
    "out",
    "over",
    "own",
    "per",
    "same",
    "shall",
    "she",
    "should",
    "so",
    "some",
    "such",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "though",
    "through",
    "thus",
    "to",
    "too",
    "under",
    "until",
    "up",
    "upon",
    "us",
    "very",
    "via",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "whether",
    "which",
    "while",
    "who",
    "whom",
    "whose",
    "why",
    "will",
    "with",
    "within",
    "without",
    "would",
    "yet",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

fn soft_separator(c: char) -> bool {
    matches!(c, ' ' | '\t' | '-' | '\'' | '\u{2019}' | '/')
}

/// Lowercased alphanumeric tokens split into segments. Phrases never cross
/// a segment boundary (line break or sentence punctuation).
fn segments(text: &str) -> Vec<Vec<String>> {
    let mut segs: Vec<Vec<String>> = vec![Vec::new()];
    let mut token = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            token.extend(c.to_lowercase());
            continue;
        }
        if !token.is_empty() {
            segs.last_mut().expect("segment").push(std::mem::take(&mut token));
        }
        if !soft_separator(c) && !segs.last().expect("segment").is_empty() {
            segs.push(Vec::new());
        }
    }
    if !token.is_empty() {
        segs.last_mut().expect("segment").push(token);
    }
    segs.retain(|s| !s.is_empty());
    segs
}

pub fn generate_candidates(text: &str) -> Vec<CandidatePhrase> {
    generate_candidates_with(text, DEFAULT_MAX_NGRAM)
}

pub fn generate_candidates_with(text: &str, max_ngram: usize) -> Vec<CandidatePhrase> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut offset = 0;
    for seg in segments(text) {
        for start in 0..seg.len() {
            for len in 1..=max_ngram.min(seg.len() - start) {
                let gram = &seg[start..start + len];
                if is_stopword(&gram[0]) || is_stopword(&gram[len - 1]) {
                    continue;
                }
                if gram.iter().any(|t| t.chars().all(|c| c.is_numeric())) {
                    continue;
                }
                let surface = gram.join(" ");
                if seen.insert(surface.clone()) {
                    out.push(CandidatePhrase {
                        surface,
                        token_span: (offset + start, offset + start + len),
                        score: 0.0,
                    });
                }
            }
        }
        offset += seg.len();
    }
    out
}

/// Scores candidates against the whole text and keeps the best `budget`.
/// Ties go to the longer phrase, then to the lexicographically smaller one.
pub fn rank_keyphrases(text: &str, budget: usize, embedder: &dyn Embedder) -> Result<Vec<Keyphrase>, KeyphraseError> {
    EmbeddingRanker::new(embedder).rank(text, budget, KeyphraseOrigin::Material)
}

pub trait KeyphraseRanker: Send + Sync {
    fn rank(&self, text: &str, budget: usize, origin: KeyphraseOrigin) -> Result<Vec<Keyphrase>, KeyphraseError>;
}

/// Reference ranker: candidate-vs-document embedding similarity.
pub struct EmbeddingRanker<E> {
    embedder: E,
    max_ngram: usize,
}

impl<E: Embedder> EmbeddingRanker<E> {
    pub fn new(embedder: E) -> Self {
        Self {
            embedder,
            max_ngram: DEFAULT_MAX_NGRAM,
        }
    }

    pub fn with_max_ngram(mut self, max_ngram: usize) -> Self {
        self.max_ngram = max_ngram.max(1);
        self
    }

    pub fn score_candidates(&self, text: &str) -> Result<Vec<CandidatePhrase>, KeyphraseError> {
        let mut candidates = generate_candidates_with(text, self.max_ngram);
        if candidates.is_empty() {
            return Ok(candidates);
        }
        let mut texts: Vec<&str> = Vec::with_capacity(candidates.len() + 1);
        texts.push(text);
        texts.extend(candidates.iter().map(|c| c.surface.as_str()));
        let vectors = embed_texts(&self.embedder, &texts)?;
        let doc = &vectors[0];
        for (cand, v) in candidates.iter_mut().zip(&vectors[1..]) {
            cand.score = cosine(v, doc)?;
        }
        candidates.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(b.token_len().cmp(&a.token_len()))
                .then_with(|| a.surface.cmp(&b.surface))
        });
        Ok(candidates)
    }
}

impl<E: Embedder> KeyphraseRanker for EmbeddingRanker<E> {
    fn rank(&self, text: &str, budget: usize, origin: KeyphraseOrigin) -> Result<Vec<Keyphrase>, KeyphraseError> {
        if budget == 0 {
            return Err(KeyphraseError::ZeroBudget);
        }
        Ok(self
            .score_candidates(text)?
            .into_iter()
            .take(budget)
            .map(|c| Keyphrase {
                surface: c.surface,
                score: c.score,
                origin,
            })
            .collect())
    }
}
