//! Sentence error rate, sentence-level BLEU, and per-(method, SNR) aggregation.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::dataset::Sentence;

pub const MAX_NGRAM: usize = 4;
pub const CSV_HEADER: &str = "snr_db,method,n,ser,bleu,seed";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot aggregate an empty batch")]
    EmptyBatch,
    #[error("batch mixes results from different (snr, method, seed) cells")]
    HeterogeneousBatch,
    #[error("bad results row {line}: {reason}")]
    BadRow { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Transmission/reconstruction pipeline variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Semantic coding only.
    Sc,
    /// Oracle repairs the decoder output.
    ScGpt,
    /// Oracle repair with a domain summary and in-context error examples.
    ScGptPrompt,
    /// Importance-aware allocation plus oracle repair.
    ScGptAdaptive,
    /// Ablation: random slot permutation plus oracle repair.
    ScGptRandom,
}

impl Method {
    pub const PAPER_METHODS: [Method; 4] = [
        Method::Sc,
        Method::ScGpt,
        Method::ScGptPrompt,
        Method::ScGptAdaptive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sc => "sc",
            Method::ScGpt => "sc_gpt",
            Method::ScGptPrompt => "sc_gpt_prompt",
            Method::ScGptAdaptive => "sc_gpt_adaptive",
            Method::ScGptRandom => "sc_gpt_random",
        }
    }

    pub fn uses_oracle(self) -> bool {
        self != Method::Sc
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "sc" => Ok(Method::Sc),
            "sc_gpt" => Ok(Method::ScGpt),
            "sc_gpt_prompt" => Ok(Method::ScGptPrompt),
            "sc_gpt_adaptive" => Ok(Method::ScGptAdaptive),
            "sc_gpt_random" => Ok(Method::ScGptRandom),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

/// 0 when the token sequences match exactly, 1 otherwise.
pub fn sentence_error(reference: &Sentence, hypothesis: &Sentence) -> u8 {
    u8::from(!reference.same_words(hypothesis))
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and the hypothesis n-gram total.
fn modified_precision(reference: &[String], hypothesis: &[String], n: usize) -> (usize, usize) {
    let refs = ngram_counts(reference, n);
    let hyps = ngram_counts(hypothesis, n);
    let matched = hyps
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, hypothesis.len().saturating_sub(n - 1))
}

/// Sentence BLEU: uniform geometric mean of 1..4-gram modified precisions
/// (add-one smoothing for n >= 2) times the brevity penalty.
pub fn bleu(reference: &Sentence, hypothesis: &Sentence) -> f64 {
    bleu_tokens(&reference.tokens, &hypothesis.tokens)
}

pub fn bleu_tokens(reference: &[String], hypothesis: &[String]) -> f64 {
    if reference.is_empty() || hypothesis.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_NGRAM {
        let (matched, total) = modified_precision(reference, hypothesis, n);
        let p = if n == 1 {
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    let ratio = reference.len() as f64 / hypothesis.len() as f64;
    let bp = (1.0 - ratio).exp().min(1.0);
    bp * (log_sum / MAX_NGRAM as f64).exp()
}

/// Outcome of one test sentence in one (method, SNR) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SentenceResult {
    pub snr_db: f64,
    pub method: Method,
    pub seed: u64,
    pub error: u8,
    pub bleu: f64,
}

/// Aggregated metrics of one (method, SNR) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub snr_db: f64,
    pub method: Method,
    pub n_sentences: usize,
    pub ser: f64,
    pub bleu: f64,
    pub seed: u64,
}

impl EvalRow {
    /// Binomial standard error of the SER estimate.
    pub fn ser_stderr(&self) -> f64 {
        (self.ser * (1.0 - self.ser) / self.n_sentences as f64).sqrt()
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{}",
            fmt_snr(self.snr_db),
            self.method,
            self.n_sentences,
            self.ser,
            self.bleu,
            self.seed
        )
    }
}

/// Shortest decimal rendering that round-trips (`10`, `2.5`, `inf`).
pub fn fmt_snr(snr_db: f64) -> String {
    if snr_db.is_infinite() {
        "inf".into()
    } else {
        format!("{snr_db}")
    }
}

pub fn aggregate(results: &[SentenceResult]) -> Result<EvalRow, MetricsError> {
    let first = results.first().ok_or(MetricsError::EmptyBatch)?;
    if results.iter().any(|r| {
        r.snr_db.to_bits() != first.snr_db.to_bits()
            || r.method != first.method
            || r.seed != first.seed
    }) {
        return Err(MetricsError::HeterogeneousBatch);
    }
    let n = results.len() as f64;
    Ok(EvalRow {
        snr_db: first.snr_db,
        method: first.method,
        n_sentences: results.len(),
        ser: results.iter().map(|r| f64::from(r.error)).sum::<f64>() / n,
        bleu: results.iter().map(|r| r.bleu).sum::<f64>() / n,
        seed: first.seed,
    })
}

pub fn write_csv<W: Write>(mut out: W, rows: &[EvalRow]) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.to_csv_line())?;
    }
    out.flush()
}

pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<EvalRow>, MetricsError> {
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != CSV_HEADER {
                return Err(MetricsError::BadRow {
                    line: 1,
                    reason: format!("expected header {CSV_HEADER:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| MetricsError::BadRow {
            line: i + 1,
            reason,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, got {}", f.len())));
        }
        rows.push(EvalRow {
            snr_db: f[0].parse().map_err(|e| bad(format!("snr_db: {e}")))?,
            method: f[1].parse().map_err(bad)?,
            n_sentences: f[2].parse().map_err(|e| bad(format!("n: {e}")))?,
            ser: f[3].parse().map_err(|e| bad(format!("ser: {e}")))?,
            bleu: f[4].parse().map_err(|e| bad(format!("bleu: {e}")))?,
            seed: f[5].parse().map_err(|e| bad(format!("seed: {e}")))?,
        });
    }
    Ok(rows)
}

/// Paired comparison of per-sentence values `a[i] - b[i]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedComparison {
    pub n: usize,
    pub mean_diff: f64,
    pub stderr: f64,
    /// One-sided p-value for the alternative `mean(a) < mean(b)`.
    pub p_less: f64,
}

pub fn paired_comparison(a: &[f64], b: &[f64]) -> PairedComparison {
    assert_eq!(a.len(), b.len(), "paired samples must align");
    let n = a.len();
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let stderr = (var / n as f64).sqrt();
    let p_less = if stderr > 0.0 {
        Normal::standard().cdf(mean / stderr)
    } else if mean < 0.0 {
        0.0
    } else {
        1.0
    };
    PairedComparison {
        n,
        mean_diff: mean,
        stderr,
        p_less,
    }
}
