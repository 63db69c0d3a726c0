//! Offline, deterministic oracles driven by training-split bigram counts.

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use crate::dataset::{Sentence, UNK_TOKEN};

use super::{OracleError, ReconOracle, ReconRequest, ReconResponse, Strategy};

const BOS: u32 = 0;
const EOS: u32 = 1;

/// Bigram counts over training sentences, with sentence-boundary markers.
#[derive(Debug, Clone, Default)]
pub struct BigramTable {
    ids: HashMap<String, u32>,
    words: Vec<String>,
    successors: Vec<HashMap<u32, u32>>,
}

impl BigramTable {
    pub fn from_sentences(train: &[Sentence]) -> Self {
        let mut t = Self {
            ids: HashMap::new(),
            words: vec!["<s>".into(), "</s>".into()],
            successors: vec![HashMap::new(), HashMap::new()],
        };
        for s in train {
            let mut prev = BOS;
            for tok in &s.tokens {
                let id = t.intern(tok);
                *t.successors[prev as usize].entry(id).or_default() += 1;
                prev = id;
            }
            *t.successors[prev as usize].entry(EOS).or_default() += 1;
        }
        t
    }

    fn intern(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.ids.get(word) {
            return id;
        }
        let id = self.words.len() as u32;
        self.ids.insert(word.to_owned(), id);
        self.words.push(word.to_owned());
        self.successors.push(HashMap::new());
        id
    }

    fn id(&self, word: &str) -> Option<u32> {
        self.ids.get(word).copied()
    }

    fn count_ids(&self, a: Option<u32>, b: Option<u32>) -> u32 {
        match (a, b) {
            (Some(a), Some(b)) => self.successors[a as usize].get(&b).copied().unwrap_or(0),
            _ => 0,
        }
    }

    /// Training count of `a` followed by `b`; `None` stands for a sentence boundary.
    pub fn count(&self, a: Option<&str>, b: Option<&str>) -> u32 {
        let a = a.map_or(Some(BOS), |w| self.id(w));
        let b = b.map_or(Some(EOS), |w| self.id(w));
        self.count_ids(a, b)
    }

    /// Words `w` with `count(prev, w) > 0` and `count(w, next) > 0`, sorted.
    pub fn bridges(&self, prev: Option<&str>, next: Option<&str>) -> Vec<&str> {
        let Some(p) = prev.map_or(Some(BOS), |w| self.id(w)) else {
            return Vec::new();
        };
        let Some(n) = next.map_or(Some(EOS), |w| self.id(w)) else {
            return Vec::new();
        };
        let mut out: Vec<&str> = self.successors[p as usize]
            .keys()
            .filter(|&&w| w != EOS && self.successors[w as usize].contains_key(&n))
            .map(|&w| self.words[w as usize].as_str())
            .collect();
        out.sort_unstable();
        out
    }

    /// Most frequent successor of `prev` (ties lexicographic), excluding the end marker.
    pub fn best_successor(&self, prev: Option<&str>) -> Option<&str> {
        let p = prev.map_or(Some(BOS), |w| self.id(w))?;
        self.successors[p as usize]
            .iter()
            .filter(|(&w, _)| w != EOS)
            .map(|(&w, &c)| (self.words[w as usize].as_str(), c))
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(w, _)| w)
    }

    /// Number of unattested adjacent pairs, boundaries included.
    pub fn unattested_bigrams(&self, tokens: &[String]) -> usize {
        let mut n = 0;
        let mut prev = None;
        for t in tokens {
            if self.count(prev, Some(t)) == 0 {
                n += 1;
            }
            prev = Some(t.as_str());
        }
        if self.count(prev, None) == 0 {
            n += 1;
        }
        n
    }

    /// Reference-free error heuristic: any `unk` token or unattested bigram.
    pub fn is_suspect(&self, s: &Sentence) -> bool {
        s.tokens.iter().any(|t| t == UNK_TOKEN) || self.unattested_bigrams(&s.tokens) > 0
    }
}

/// Bigram-bridge corrector.
///
/// Scanning left to right, a word whose incoming bigram was never seen in
/// training is replaced when exactly one word bridges its (already repaired)
/// left neighbour and its original right neighbour. Sentences whose bigrams
/// are all attested come back unchanged.
///
/// For the prompted strategy an ambiguous bridge is resolved when exactly one
/// candidate appears in the domain summary.
#[derive(Debug, Clone)]
pub struct BigramOracle {
    table: BigramTable,
    id: String,
}

impl BigramOracle {
    pub fn new(train: &[Sentence]) -> Self {
        Self::from_table(BigramTable::from_sentences(train))
    }

    pub fn from_table(table: BigramTable) -> Self {
        Self {
            table,
            id: "mock-bigram".into(),
        }
    }

    pub fn table(&self) -> &BigramTable {
        &self.table
    }

    pub fn repair_tokens(&self, tokens: &[String], summary: Option<&HashSet<&str>>) -> Vec<String> {
        let mut out = tokens.to_vec();
        for i in 0..tokens.len() {
            let prev = if i == 0 {
                None
            } else {
                Some(out[i - 1].as_str())
            };
            if self.table.count(prev, Some(&out[i])) > 0 {
                continue;
            }
            let next = tokens.get(i + 1).map(String::as_str);
            let candidates = self.table.bridges(prev, next);
            let pick = match candidates.as_slice() {
                [only] => Some(*only),
                many if many.len() > 1 => summary.and_then(|keys| {
                    let mut hits = many.iter().filter(|w| keys.contains(**w));
                    match (hits.next(), hits.next()) {
                        (Some(w), None) => Some(*w),
                        _ => None,
                    }
                }),
                _ => None,
            };
            if let Some(w) = pick {
                out[i] = w.to_owned();
            }
        }
        out
    }

    fn repair_request(&self, req: &ReconRequest) -> Vec<String> {
        let keys: Option<HashSet<&str>> = match req.strategy {
            Strategy::Prompted => req
                .summary
                .as_deref()
                .map(|s| s.split_whitespace().collect()),
            _ => None,
        };
        self.repair_tokens(&req.sentence.tokens, keys.as_ref())
    }
}

impl ReconOracle for BigramOracle {
    fn id(&self) -> &str {
        &self.id
    }

    fn repair(&self, req: &ReconRequest) -> Result<ReconResponse, OracleError> {
        req.validate()?;
        let start = Instant::now();
        let tokens = self.repair_request(req);
        Ok(ReconResponse {
            sentence: Sentence::new(tokens, req.sentence.source_id),
            oracle_id: self.id.clone(),
            latency: start.elapsed(),
            flagged: false,
        })
    }
}

/// Adversarial variant that rewrites heavily damaged sentences.
///
/// When a plain or adaptive request has at least `rewrite_threshold`
/// unattested bigrams, the sentence is condensed: every `unk` and every word
/// attested with neither of its received neighbours is dropped, and the
/// remainder gets bridge repair. A sentence left with nothing becomes the
/// most frequent opening word. Lighter damage, and every prompted request,
/// gets ordinary bridge repair.
#[derive(Debug, Clone)]
pub struct RewritingOracle {
    inner: BigramOracle,
    rewrite_threshold: usize,
    id: String,
}

impl RewritingOracle {
    /// Six unattested bigrams: roughly three isolated word errors.
    pub const DEFAULT_THRESHOLD: usize = 6;

    pub fn new(train: &[Sentence], rewrite_threshold: usize) -> Self {
        Self::from_table(BigramTable::from_sentences(train), rewrite_threshold)
    }

    pub fn from_table(table: BigramTable, rewrite_threshold: usize) -> Self {
        Self {
            inner: BigramOracle::from_table(table),
            rewrite_threshold: rewrite_threshold.max(1),
            id: "mock-rewriting".into(),
        }
    }

    pub fn table(&self) -> &BigramTable {
        self.inner.table()
    }

    fn rewrite(&self, tokens: &[String]) -> Vec<String> {
        let table = self.inner.table();
        let kept: Vec<String> = tokens
            .iter()
            .enumerate()
            .filter(|&(i, t)| {
                let prev = i.checked_sub(1).map(|j| tokens[j].as_str());
                let next = tokens.get(i + 1).map(String::as_str);
                t != UNK_TOKEN && (table.count(prev, Some(t)) > 0 || table.count(Some(t), next) > 0)
            })
            .map(|(_, t)| t.clone())
            .collect();
        if kept.is_empty() {
            return vec![table.best_successor(None).unwrap_or(UNK_TOKEN).to_owned()];
        }
        self.inner.repair_tokens(&kept, None)
    }
}

impl ReconOracle for RewritingOracle {
    fn id(&self) -> &str {
        &self.id
    }

    fn repair(&self, req: &ReconRequest) -> Result<ReconResponse, OracleError> {
        req.validate()?;
        let start = Instant::now();
        let tokens = &req.sentence.tokens;
        let damaged = self.inner.table().unattested_bigrams(tokens) >= self.rewrite_threshold;
        let out = if damaged && req.strategy != Strategy::Prompted {
            self.rewrite(tokens)
        } else {
            self.inner.repair_request(req)
        };
        Ok(ReconResponse {
            sentence: Sentence::new(out, req.sentence.source_id),
            oracle_id: self.id.clone(),
            latency: start.elapsed(),
            flagged: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ExamplePair;

    fn s(t: &str) -> Sentence {
        Sentence::from_words(t, 0)
    }

    fn toy_corpus() -> Vec<Sentence> {
        [
            "the council of ministers met today",
            "the council of europe met today",
            "we support the commission proposal",
            "we support the council position",
            "first and foremost we thank the rapporteur",
            "the rapporteur has done excellent work",
            "this report deserves our support today",
            "the commission proposal is welcome",
            "our group will vote in favour",
            "the house will vote tomorrow",
        ]
        .iter()
        .map(|t| s(t))
        .collect()
    }

    /// Enumerates every word in the toy vocabulary as a bridge candidate.
    fn brute_bridges(corpus: &[Sentence], prev: &str, next: &str) -> Vec<String> {
        let mut seen = HashSet::new();
        let has = |a: &str, b: &str| {
            corpus
                .iter()
                .any(|s| s.tokens.windows(2).any(|w| w[0] == a && w[1] == b))
        };
        let mut out: Vec<String> = corpus
            .iter()
            .flat_map(|s| s.tokens.iter())
            .filter(|w| seen.insert(w.as_str()))
            .filter(|w| has(prev, w) && has(w, next))
            .cloned()
            .collect();
        out.sort();
        out
    }

    #[test]
    fn bridges_match_enumeration() {
        let corpus = toy_corpus();
        let t = BigramTable::from_sentences(&corpus);
        for (p, n) in [
            ("and", "we"),
            ("the", "of"),
            ("we", "the"),
            ("will", "in"),
            ("of", "met"),
        ] {
            let got: Vec<String> = t
                .bridges(Some(p), Some(n))
                .into_iter()
                .map(String::from)
                .collect();
            assert_eq!(got, brute_bridges(&corpus, p, n), "{p} _ {n}");
        }
    }

    #[test]
    fn repairs_unique_bridge() {
        let o = BigramOracle::new(&toy_corpus());
        // and _ we: only "foremost" bridges.
        let out = o
            .repair(&ReconRequest::plain(s(
                "first and crucial we thank the rapporteur",
            )))
            .unwrap();
        assert_eq!(
            out.sentence.text(),
            "first and foremost we thank the rapporteur"
        );
    }

    #[test]
    fn ambiguous_bridge_left_alone() {
        let o = BigramOracle::new(&toy_corpus());
        // of _ met: "ministers" and "europe" both bridge.
        let input = s("the council of unk met today");
        let out = o.repair(&ReconRequest::plain(input.clone())).unwrap();
        assert_eq!(out.sentence.tokens, input.tokens);
    }

    #[test]
    fn summary_breaks_ties_for_prompted() {
        let o = BigramOracle::new(&toy_corpus());
        let pair = ExamplePair {
            corrupted: s("we support the unk position"),
            corrected: s("we support the council position"),
        };
        let req = ReconRequest::prompted(
            s("the council of unk met today"),
            "ministers report".into(),
            vec![pair],
        );
        let out = o.repair(&req).unwrap();
        assert_eq!(out.sentence.text(), "the council of ministers met today");
    }

    #[test]
    fn clean_text_is_fixed_point() {
        let corpus = toy_corpus();
        let o = BigramOracle::new(&corpus);
        for c in &corpus {
            let out = o.repair(&ReconRequest::plain(c.clone())).unwrap();
            assert_eq!(out.sentence.tokens, c.tokens);
            assert!(!o.table().is_suspect(c));
        }
    }

    #[test]
    fn suspect_heuristic() {
        let t = BigramTable::from_sentences(&toy_corpus());
        assert!(t.is_suspect(&s("the council of unk met today")));
        assert!(t.is_suspect(&s("the council of ministers today met")));
        assert_eq!(
            t.unattested_bigrams(&s("the council of ministers met today").tokens),
            0
        );
        assert_eq!(
            t.unattested_bigrams(&s("the council of xyz met today").tokens),
            2
        );
    }

    #[test]
    fn rewriter_rewrites_only_heavy_damage() {
        let corpus = toy_corpus();
        let o = RewritingOracle::new(&corpus, 3);
        let light = o
            .repair(&ReconRequest::plain(s(
                "first and crucial we thank the rapporteur",
            )))
            .unwrap();
        assert_eq!(
            light.sentence.text(),
            "first and foremost we thank the rapporteur"
        );
        let heavy = s("the council xyz ministers qqq today");
        let out = o.repair(&ReconRequest::plain(heavy.clone())).unwrap();
        // "ministers" has neither received neighbour attested, so it goes too;
        // the bridge pass then ends "the council" the only attested way.
        assert_eq!(out.sentence.text(), "the council position");
        let wiped = o
            .repair(&ReconRequest::plain(s("unk unk unk unk")))
            .unwrap();
        // "the" opens four of the ten toy sentences.
        assert_eq!(wiped.sentence.text(), "the");
        let pair = ExamplePair {
            corrupted: s("a b"),
            corrected: s("a c"),
        };
        let prompted = ReconRequest::prompted(heavy.clone(), "council".into(), vec![pair]);
        let plain_bridge = BigramOracle::new(&corpus).repair(&prompted).unwrap();
        assert_eq!(o.repair(&prompted).unwrap().sentence, plain_bridge.sentence);
        assert_eq!(
            plain_bridge.sentence.text(),
            "the council of ministers met today"
        );
    }
}
