//! Corpus ingestion: normalization, length filtering, vocabulary and splits.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Shortest accepted sentence, in words.
pub const MIN_WORDS: usize = 4;
/// Longest accepted sentence, in words.
pub const MAX_WORDS: usize = 30;

pub const PAD_INDEX: u32 = 0;
pub const UNK_INDEX: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
/// Token rendered for reserved or out-of-range indices.
pub const UNK_TOKEN: &str = "unk";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("corpus has {available} sentences, need {required}")]
    InsufficientCorpus { available: usize, required: usize },
    #[error("malformed {what} at line {line}: {content:?}")]
    Malformed {
        what: &'static str,
        line: usize,
        content: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Why a raw line was excluded from the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    Empty,
    TooShort,
    TooLong,
}

/// A normalized, length-filtered sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub source_id: usize,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, source_id: usize) -> Self {
        Self { tokens, source_id }
    }

    /// Builds a sentence from whitespace separated words without normalizing.
    pub fn from_words(text: &str, source_id: usize) -> Self {
        Self::new(
            text.split_whitespace().map(str::to_owned).collect(),
            source_id,
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Exact token-sequence equality, ignoring provenance.
    pub fn same_words(&self, other: &Sentence) -> bool {
        self.tokens == other.tokens
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

/// Lowercases, strips punctuation (digits survive) and tokenizes on whitespace.
pub fn tokenize(raw_line: &str) -> Vec<String> {
    let cleaned: String = raw_line
        .chars()
        .flat_map(char::to_lowercase)
        .filter_map(|c| match c {
            // Apostrophes join ("don't" -> "dont") rather than split.
            '\'' | '\u{2019}' => None,
            c if c.is_alphanumeric() => Some(c),
            _ => Some(' '),
        })
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Normalizes one corpus line and applies the 4..=30 word bound.
pub fn normalize(raw_line: &str, source_id: usize) -> Result<Sentence, Rejection> {
    let tokens = tokenize(raw_line);
    match tokens.len() {
        0 => Err(Rejection::Empty),
        n if n < MIN_WORDS => Err(Rejection::TooShort),
        n if n > MAX_WORDS => Err(Rejection::TooLong),
        _ => Ok(Sentence::new(tokens, source_id)),
    }
}

/// Reads a newline-delimited corpus. Rejected lines are skipped; `source_id`
/// is the zero-based line index in the file.
pub fn load_corpus(path: &Path) -> Result<Vec<Sentence>, DatasetError> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        if let Ok(s) = normalize(&line?, idx) {
            out.push(s);
        }
    }
    Ok(out)
}

/// Word to index mapping with `0 = PAD` and `1 = UNK` reserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn reserved() -> Self {
        let words = vec![PAD_TOKEN.to_owned(), UNK_TOKEN.to_owned()];
        let index = HashMap::new();
        Self { words, index }
    }

    /// Builds from an explicit ordered word list; the first word gets index 2.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self::reserved();
        for w in words {
            let w = w.into();
            if v.index.contains_key(&w) {
                continue;
            }
            v.index.insert(w.clone(), v.words.len() as u32);
            v.words.push(w);
        }
        v
    }

    /// Total number of indices including the two reserved entries.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 2
    }

    /// Index for `word`, `UNK_INDEX` when out of vocabulary.
    pub fn index_of(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_INDEX)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Word for `index`; reserved and out-of-range indices render as `unk`.
    pub fn word(&self, index: u32) -> &str {
        match self.words.get(index as usize) {
            Some(w) if index >= 2 => w,
            _ => UNK_TOKEN,
        }
    }

    /// Non-reserved words in index order.
    pub fn words(&self) -> impl Iterator<Item = (&str, u32)> {
        self.words
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, w)| (w.as_str(), i as u32))
    }

    /// Writes `word<TAB>index` lines, reserved entries included.
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        for (i, w) in self.words.iter().enumerate() {
            writeln!(f, "{w}\t{i}")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path)?;
        let mut ordered = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let malformed = || DatasetError::Malformed {
                what: "vocabulary entry",
                line: line_no + 1,
                content: line.to_owned(),
            };
            let (word, idx) = line.split_once('\t').ok_or_else(malformed)?;
            let idx: usize = idx.trim().parse().map_err(|_| malformed())?;
            if idx != line_no {
                return Err(malformed());
            }
            ordered.push(word.to_owned());
        }
        if ordered.len() < 2 {
            return Err(DatasetError::Malformed {
                what: "vocabulary (missing reserved entries)",
                line: ordered.len() + 1,
                content: String::new(),
            });
        }
        Ok(Self::from_words(ordered.into_iter().skip(2)))
    }
}

/// Ranks training words by descending frequency (ties lexicographic) and
/// keeps the first `max_size`.
pub fn build_vocab(train: &[Sentence], max_size: usize) -> Vocabulary {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in train {
        for t in &s.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_words(ranked.into_iter().take(max_size).map(|(w, _)| w))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<Sentence>,
    pub test: Vec<Sentence>,
    pub seed: u64,
}

impl CorpusSplit {
    /// Writes the split as two files of source line indices.
    pub fn save(&self, train_path: &Path, test_path: &Path) -> Result<(), DatasetError> {
        write_ids(train_path, &self.train)?;
        write_ids(test_path, &self.test)?;
        Ok(())
    }

    /// Rebuilds a split from saved line indices against a loaded corpus.
    pub fn load(
        corpus: &[Sentence],
        train_path: &Path,
        test_path: &Path,
        seed: u64,
    ) -> Result<Self, DatasetError> {
        let by_id: HashMap<usize, &Sentence> = corpus.iter().map(|s| (s.source_id, s)).collect();
        let read = |path: &Path| -> Result<Vec<Sentence>, DatasetError> {
            let text = fs::read_to_string(path)?;
            text.lines()
                .enumerate()
                .map(|(n, line)| {
                    let malformed = || DatasetError::Malformed {
                        what: "split index",
                        line: n + 1,
                        content: line.to_owned(),
                    };
                    let id: usize = line.trim().parse().map_err(|_| malformed())?;
                    by_id.get(&id).map(|s| (*s).clone()).ok_or_else(malformed)
                })
                .collect()
        };
        Ok(Self {
            train: read(train_path)?,
            test: read(test_path)?,
            seed,
        })
    }
}

fn write_ids(path: &Path, sentences: &[Sentence]) -> Result<(), DatasetError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for s in sentences {
        writeln!(f, "{}", s.source_id)?;
    }
    f.flush()?;
    Ok(())
}

/// Seeded shuffle, then the first `n_train` go to train and the next `n_test` to test.
pub fn split(
    corpus: &[Sentence],
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<CorpusSplit, DatasetError> {
    let required = n_train + n_test;
    if corpus.len() < required {
        return Err(DatasetError::InsufficientCorpus {
            available: corpus.len(),
            required,
        });
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |range: std::ops::Range<usize>| -> Vec<Sentence> {
        order[range].iter().map(|&i| corpus[i].clone()).collect()
    };
    Ok(CorpusSplit {
        train: pick(0..n_train),
        test: pick(n_train..required),
        seed,
    })
}
