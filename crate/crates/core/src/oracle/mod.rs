//! Post-hoc sentence reconstruction.
//!
//! A [`ReconOracle`] receives the decoder output and returns a repaired
//! sentence. Three strategies exist: `plain` repair, `prompted` repair that
//! also carries a domain summary and in-context (corrupted, corrected) pairs,
//! and `adaptive`, the repair role paired with importance-aware allocation
//! (it uses the plain prompt).
//!
//! Implementations: [`BigramOracle`] and [`RewritingOracle`] run offline and
//! are deterministic; [`LlmOracle`] talks to a chat-completion endpoint with an
//! on-disk cache; [`ServiceOracle`] speaks the `/v1/reconstruct` route.

mod bigram;
mod llm;
mod service;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::dataset::Sentence;

pub use bigram::{BigramOracle, BigramTable, RewritingOracle};
pub use llm::{LlmConfig, LlmOracle};
pub use service::{to_wire, ServiceOracle};

pub const FIX_INSTRUCTION: &str = "Fix the errors in this sentence: ";
pub const SUMMARY_PREFIX: &str = "The following sentences come from a domain about: ";
pub const EXAMPLES_HEADER: &str =
    "Examples of received sentences with transmission errors and their corrections:";
pub const CORRUPTED_PREFIX: &str = "corrupted: ";
pub const CORRECTED_PREFIX: &str = "corrected: ";

/// Number of in-context pairs used by the prompted strategy.
pub const DEFAULT_PROMPT_EXAMPLES: usize = 4;
/// Number of keywords in a domain summary.
pub const DEFAULT_SUMMARY_WORDS: usize = 8;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid reconstruction request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited; gave up after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("oracle timed out")]
    Timeout,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("response cache: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Plain,
    Prompted,
    Adaptive,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Plain => "plain",
            Strategy::Prompted => "prompted",
            Strategy::Adaptive => "adaptive",
        }
    }

    /// Strategy name on the wire. The adaptive variant repairs like plain.
    pub fn wire_name(self) -> &'static str {
        match self {
            Strategy::Prompted => "prompted",
            _ => "plain",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(Strategy::Plain),
            "prompted" => Ok(Strategy::Prompted),
            "adaptive" => Ok(Strategy::Adaptive),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExamplePair {
    pub corrupted: Sentence,
    pub corrected: Sentence,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconRequest {
    pub sentence: Sentence,
    pub strategy: Strategy,
    pub summary: Option<String>,
    pub examples: Vec<ExamplePair>,
}

impl ReconRequest {
    pub fn plain(sentence: Sentence) -> Self {
        Self {
            sentence,
            strategy: Strategy::Plain,
            summary: None,
            examples: Vec::new(),
        }
    }

    pub fn prompted(sentence: Sentence, summary: String, examples: Vec<ExamplePair>) -> Self {
        Self {
            sentence,
            strategy: Strategy::Prompted,
            summary: Some(summary),
            examples,
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if self.strategy == Strategy::Prompted {
            if self.summary.as_deref().is_none_or(str::is_empty) {
                return Err(OracleError::InvalidRequest(
                    "prompted strategy requires a summary".into(),
                ));
            }
            if self.examples.is_empty() {
                return Err(OracleError::InvalidRequest(
                    "prompted strategy requires at least one example pair".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResponse {
    pub sentence: Sentence,
    pub oracle_id: String,
    pub latency: Duration,
    /// Set when the oracle could not produce a usable answer and echoed its input.
    pub flagged: bool,
}

pub trait ReconOracle: Send + Sync {
    fn id(&self) -> &str;
    fn repair(&self, req: &ReconRequest) -> Result<ReconResponse, OracleError>;
}

/// Renders the text sent to a language model.
pub fn build_prompt(req: &ReconRequest) -> Result<String, OracleError> {
    req.validate()?;
    let instruction = format!("{FIX_INSTRUCTION}{}", req.sentence.text());
    if req.strategy != Strategy::Prompted {
        return Ok(instruction);
    }
    let mut lines = vec![
        format!(
            "{SUMMARY_PREFIX}{}",
            req.summary.as_deref().unwrap_or_default()
        ),
        EXAMPLES_HEADER.to_owned(),
    ];
    for ex in &req.examples {
        lines.push(format!(
            "{CORRUPTED_PREFIX}{}\n{CORRECTED_PREFIX}{}",
            ex.corrupted.text(),
            ex.corrected.text()
        ));
    }
    lines.push(instruction);
    Ok(lines.join("\n"))
}

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "again", "all", "also", "am", "an", "and", "any", "are", "as", "at",
    "be", "because", "been", "before", "being", "between", "both", "but", "by", "can", "could",
    "did", "do", "does", "doing", "during", "each", "for", "from", "further", "had", "has", "have",
    "having", "he", "her", "here", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its",
    "just", "let", "me", "more", "most", "must", "my", "no", "nor", "not", "now", "of", "on",
    "once", "only", "or", "other", "our", "out", "over", "own", "same", "she", "should", "so",
    "some", "such", "than", "that", "the", "their", "them", "then", "there", "these", "they",
    "this", "those", "through", "to", "too", "under", "until", "up", "very", "was", "we", "were",
    "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would",
    "you", "your",
];

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}

/// The `k_words` most frequent non-stopword tokens (ties lexicographic), space separated.
pub fn summarize(examples: &[Sentence], k_words: usize) -> String {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in examples {
        for t in &s.tokens {
            if !is_stopword(t) && t.chars().any(char::is_alphabetic) {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked
        .into_iter()
        .take(k_words)
        .map(|(w, _)| w)
        .collect::<Vec<_>>()
        .join(" ")
}
