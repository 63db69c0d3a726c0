//! Importance-aware transmission.
//!
//! 1. Perturb-and-repair labeling: one feature of a training sentence is
//!    replaced by random bits, the sentence is decoded and handed to a
//!    reconstruction oracle. If the oracle restores the exact source the
//!    feature is unimportant (label 0), otherwise important (label 1).
//! 2. A small classifier learns those labels from the clean sentence, so the
//!    transmitter can score features without calling the oracle.
//! 3. [`make_plan`] puts the highest-scoring features on the strongest
//!    subcarriers.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::codec::{FeatureFrame, SemanticCodec};
use crate::dataset::{Sentence, Vocabulary, PAD_INDEX};
use crate::oracle::{ReconOracle, ReconRequest};
use crate::phy::{DATA_SLOTS, N_SUBCARRIERS};
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum ImportanceError {
    #[error("feature index {index} out of range for frame of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("training labels contain a single class")]
    DegenerateLabels,
    #[error("{needed} symbols exceed the {available} available slots")]
    CapacityExceeded { needed: usize, available: usize },
    #[error("scores ({scores}) and feature count ({features}) disagree")]
    ScoreCount { scores: usize, features: usize },
    #[error("bad model file: {0}")]
    BadModel(String),
    #[error("malformed label table at line {line}: {content:?}")]
    BadLabels { line: usize, content: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Mapping from data-symbol index (in transmit order) to OFDM data slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationPlan {
    slots: Vec<usize>,
    /// Data slots from best to worst gain, when built by [`make_plan`].
    pub slot_ranking: Option<Vec<usize>>,
    /// Feature indices from most to least important, when built by [`make_plan`].
    pub feature_ranking: Option<Vec<usize>>,
}

impl AllocationPlan {
    /// Row-major placement.
    pub fn identity() -> Self {
        Self::from_slots((0..DATA_SLOTS).collect())
    }

    pub fn from_slots(slots: Vec<usize>) -> Self {
        Self {
            slots,
            slot_ranking: None,
            feature_ranking: None,
        }
    }

    /// Uniformly random permutation of the data slots.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut slots: Vec<usize> = (0..DATA_SLOTS).collect();
        slots.shuffle(rng);
        Self::from_slots(slots)
    }

    pub fn slots(&self) -> &[usize] {
        &self.slots
    }

    /// True when the plan is a bijection over all data slots.
    pub fn is_valid(&self) -> bool {
        if self.slots.len() != DATA_SLOTS {
            return false;
        }
        let mut seen = [false; DATA_SLOTS];
        for &s in &self.slots {
            if s >= DATA_SLOTS || seen[s] {
                return false;
            }
            seen[s] = true;
        }
        true
    }
}

/// Per-slot gains from per-subcarrier gains (every data row sees the same channel).
pub fn slot_gains(per_subcarrier: &[f64]) -> Vec<f64> {
    (0..DATA_SLOTS)
        .map(|s| per_subcarrier[s % N_SUBCARRIERS])
        .collect()
}

/// Sorted construction: features by descending score, slots by descending
/// gain (both ties to the lower index); the i-th feature gets the i-th group
/// of `symbols_per_feature` slots and padding takes what is left.
pub fn make_plan(
    scores: &[f64],
    gains: &[f64],
    n_features: usize,
    symbols_per_feature: usize,
) -> Result<AllocationPlan, ImportanceError> {
    if scores.len() != n_features {
        return Err(ImportanceError::ScoreCount {
            scores: scores.len(),
            features: n_features,
        });
    }
    let needed = n_features * symbols_per_feature;
    if needed > DATA_SLOTS || gains.len() != DATA_SLOTS {
        return Err(ImportanceError::CapacityExceeded {
            needed: needed.max(gains.len()),
            available: DATA_SLOTS,
        });
    }
    let mut slot_rank: Vec<usize> = (0..DATA_SLOTS).collect();
    slot_rank.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));
    let mut feature_rank: Vec<usize> = (0..n_features).collect();
    feature_rank.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut slots = vec![usize::MAX; DATA_SLOTS];
    for (pos, &f) in feature_rank.iter().enumerate() {
        for t in 0..symbols_per_feature {
            slots[f * symbols_per_feature + t] = slot_rank[pos * symbols_per_feature + t];
        }
    }
    slots[needed..].copy_from_slice(&slot_rank[needed..]);
    Ok(AllocationPlan {
        slots,
        slot_ranking: Some(slot_rank),
        feature_ranking: Some(feature_rank),
    })
}

/// Replaces feature `index` with uniformly random bits.
pub fn disrupt<R: Rng + ?Sized>(
    frame: &FeatureFrame,
    index: usize,
    rng: &mut R,
) -> Result<FeatureFrame, ImportanceError> {
    if index >= frame.len() {
        return Err(ImportanceError::IndexOutOfRange {
            index,
            len: frame.len(),
        });
    }
    let mut out = frame.clone();
    out.set(index, rng.random::<u32>());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportanceRecord {
    pub sentence_id: usize,
    pub feature_index: usize,
    /// 0 = repairable, 1 = important.
    pub label: u8,
    pub oracle_output: Sentence,
}

#[derive(Debug, Default)]
pub struct LabelRun {
    pub records: Vec<ImportanceRecord>,
    /// `(sentence_id, pass, reason)` for every oracle failure.
    pub failures: Vec<(usize, usize, String)>,
}

/// Perturb-and-repair labeling over `passes` sweeps of `train`. Each
/// sentence draws its feature and disruption from its own derived seed, so
/// the result does not depend on scheduling.
pub fn label_corpus(
    train: &[Sentence],
    codec: &dyn SemanticCodec,
    oracle: &dyn ReconOracle,
    seed: u64,
    passes: usize,
) -> LabelRun {
    let jobs: Vec<(usize, &Sentence)> = (0..passes)
        .flat_map(|p| train.iter().map(move |s| (p, s)))
        .collect();
    let outcomes: Vec<Result<ImportanceRecord, (usize, usize, String)>> = jobs
        .par_iter()
        .map(|&(pass, s)| {
            let fail = |e: String| (s.source_id, pass, e);
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &[pass as u64, s.source_id as u64]));
            let frame = codec.encode(s).map_err(|e| fail(e.to_string()))?;
            let index = rng.random_range(0..frame.len());
            let damaged = disrupt(&frame, index, &mut rng).map_err(|e| fail(e.to_string()))?;
            let mut received = codec.decode(&damaged).map_err(|e| fail(e.to_string()))?;
            received.source_id = s.source_id;
            let resp = oracle
                .repair(&ReconRequest::plain(received))
                .map_err(|e| fail(e.to_string()))?;
            Ok(ImportanceRecord {
                sentence_id: s.source_id,
                feature_index: index,
                label: u8::from(!resp.sentence.same_words(s)),
                oracle_output: resp.sentence,
            })
        })
        .collect();
    let mut run = LabelRun::default();
    for o in outcomes {
        match o {
            Ok(r) => run.records.push(r),
            Err(f) => {
                log::warn!("oracle failure on sentence {} (pass {}): {}", f.0, f.1, f.2);
                run.failures.push(f);
            }
        }
    }
    run
}

pub fn save_labels(path: &Path, records: &[ImportanceRecord]) -> Result<(), ImportanceError> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "sentence_id\tfeature_index\tlabel")?;
    for r in records {
        writeln!(f, "{}\t{}\t{}", r.sentence_id, r.feature_index, r.label)?;
    }
    f.flush()?;
    Ok(())
}

/// Reads `(sentence_id, feature_index, label)` rows.
pub fn load_labels(path: &Path) -> Result<Vec<(usize, usize, u8)>, ImportanceError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = || ImportanceError::BadLabels {
            line: i + 1,
            content: line.clone(),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(bad());
        }
        let label: u8 = cols[2].parse().map_err(|_| bad())?;
        if label > 1 {
            return Err(bad());
        }
        out.push((
            cols[0].parse().map_err(|_| bad())?,
            cols[1].parse().map_err(|_| bad())?,
            label,
        ));
    }
    Ok(out)
}

/// One supervised example: a sentence as vocabulary indices, the feature
/// position, and its label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub words: Vec<u32>,
    pub feature_index: usize,
    pub label: u8,
}

/// Joins label rows with their sentences. Rows whose sentence is unknown or
/// whose index is out of range are dropped.
pub fn training_examples(
    labels: &[(usize, usize, u8)],
    sentences: &[Sentence],
    vocab: &Vocabulary,
) -> Vec<TrainingExample> {
    let by_id: HashMap<usize, Vec<u32>> = sentences
        .iter()
        .map(|s| (s.source_id, word_ids(s, vocab)))
        .collect();
    labels
        .iter()
        .filter_map(|&(id, idx, label)| {
            let words = by_id.get(&id)?;
            (idx < words.len()).then(|| TrainingExample {
                words: words.clone(),
                feature_index: idx,
                label,
            })
        })
        .collect()
}

pub fn word_ids(s: &Sentence, vocab: &Vocabulary) -> Vec<u32> {
    s.tokens.iter().map(|t| vocab.index_of(t)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub embedding_dim: usize,
    pub window: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 1e-4,
            batch_size: 16,
            embedding_dim: 16,
            window: 2,
            seed: 0,
        }
    }
}

/// Windowed-context scorer.
///
/// For feature `i` the embeddings of words `i-w ..= i+w` (PAD outside the
/// sentence) each pass through an offset-specific `E x E` matrix; the sum
/// plus a bias goes through `tanh`, then a dot product and a sigmoid give the
/// importance score. All parameters live in one flat vector:
/// `[embeddings | context weights | hidden bias | output weights | output bias]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    vocab_size: usize,
    dim: usize,
    window: usize,
    params: Vec<f64>,
}

struct Activations {
    ids: Vec<usize>,
    hidden: Vec<f64>,
    score: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ClassifierModel {
    pub fn new<R: Rng + ?Sized>(vocab_size: usize, dim: usize, window: usize, rng: &mut R) -> Self {
        let mut m = Self {
            vocab_size,
            dim,
            window,
            params: vec![0.0; Self::param_count(vocab_size, dim, window)],
        };
        let ctx_scale = 1.0 / ((2 * window + 1) as f64 * dim as f64).sqrt();
        let out_scale = 1.0 / (dim as f64).sqrt();
        let (e0, c0, b0, o0) = (m.embed_off(), m.ctx_off(), m.hbias_off(), m.out_off());
        for p in &mut m.params[e0..c0] {
            *p = rng.sample::<f64, _>(StandardNormal) * 0.5;
        }
        for p in &mut m.params[c0..b0] {
            *p = rng.sample::<f64, _>(StandardNormal) * ctx_scale;
        }
        for p in &mut m.params[o0..o0 + dim] {
            *p = rng.sample::<f64, _>(StandardNormal) * out_scale;
        }
        m
    }

    fn param_count(vocab_size: usize, dim: usize, window: usize) -> usize {
        vocab_size * dim + (2 * window + 1) * dim * dim + dim + dim + 1
    }

    fn embed_off(&self) -> usize {
        0
    }
    fn ctx_off(&self) -> usize {
        self.vocab_size * self.dim
    }
    fn hbias_off(&self) -> usize {
        self.ctx_off() + (2 * self.window + 1) * self.dim * self.dim
    }
    fn out_off(&self) -> usize {
        self.hbias_off() + self.dim
    }
    fn obias_off(&self) -> usize {
        self.out_off() + self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn context_ids(&self, words: &[u32], index: usize) -> Vec<usize> {
        let w = self.window as isize;
        (-w..=w)
            .map(|o| {
                let pos = index as isize + o;
                if pos < 0 || pos as usize >= words.len() {
                    PAD_INDEX as usize
                } else {
                    (words[pos as usize] as usize).min(self.vocab_size - 1)
                }
            })
            .collect()
    }

    fn forward(&self, words: &[u32], index: usize) -> Activations {
        let d = self.dim;
        let ids = self.context_ids(words, index);
        let mut pre = self.params[self.hbias_off()..self.hbias_off() + d].to_vec();
        for (o, &id) in ids.iter().enumerate() {
            let emb = &self.params[id * d..(id + 1) * d];
            let w = &self.params[self.ctx_off() + o * d * d..self.ctx_off() + (o + 1) * d * d];
            for (j, acc) in pre.iter_mut().enumerate() {
                *acc += w[j * d..(j + 1) * d]
                    .iter()
                    .zip(emb)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
        }
        let hidden: Vec<f64> = pre.into_iter().map(f64::tanh).collect();
        let out = &self.params[self.out_off()..self.out_off() + d];
        let z =
            self.params[self.obias_off()] + hidden.iter().zip(out).map(|(a, b)| a * b).sum::<f64>();
        Activations {
            ids,
            hidden,
            score: sigmoid(z),
        }
    }

    /// Probability that feature `index` is important.
    pub fn score(&self, words: &[u32], index: usize) -> f64 {
        self.forward(words, index).score
    }

    pub fn predict(&self, words: &[u32], index: usize) -> u8 {
        u8::from(self.score(words, index) >= 0.5)
    }

    /// Binary cross-entropy of one example.
    pub fn loss(&self, ex: &TrainingExample) -> f64 {
        let p = self
            .score(&ex.words, ex.feature_index)
            .clamp(1e-15, 1.0 - 1e-15);
        if ex.label == 1 {
            -p.ln()
        } else {
            -(1.0 - p).ln()
        }
    }

    pub fn mean_loss(&self, examples: &[TrainingExample]) -> f64 {
        examples.iter().map(|e| self.loss(e)).sum::<f64>() / examples.len().max(1) as f64
    }

    /// Adds the gradient of `loss(ex)` into `grad` (same layout as the parameters).
    pub fn accumulate_gradient(&self, ex: &TrainingExample, grad: &mut [f64]) {
        let d = self.dim;
        let act = self.forward(&ex.words, ex.feature_index);
        let dz = act.score - f64::from(ex.label);
        let out = &self.params[self.out_off()..self.out_off() + d];
        grad[self.obias_off()] += dz;
        let mut dpre = vec![0.0; d];
        for j in 0..d {
            grad[self.out_off() + j] += dz * act.hidden[j];
            dpre[j] = dz * out[j] * (1.0 - act.hidden[j] * act.hidden[j]);
            grad[self.hbias_off() + j] += dpre[j];
        }
        for (o, &id) in act.ids.iter().enumerate() {
            let wo = self.ctx_off() + o * d * d;
            for j in 0..d {
                for e in 0..d {
                    grad[wo + j * d + e] += dpre[j] * self.params[id * d + e];
                    grad[id * d + e] += dpre[j] * self.params[wo + j * d + e];
                }
            }
        }
    }

    pub fn accuracy(&self, examples: &[TrainingExample]) -> f64 {
        let hits = examples
            .iter()
            .filter(|e| self.predict(&e.words, e.feature_index) == e.label)
            .count();
        hits as f64 / examples.len().max(1) as f64
    }

    const MAGIC: &'static [u8; 4] = b"SLCM";
    const VERSION: u32 = 1;

    /// Little-endian: magic, version, vocab size, dim, window, parameter count, parameters.
    pub fn save(&self, path: &Path) -> Result<(), ImportanceError> {
        let mut f = io::BufWriter::new(fs::File::create(path)?);
        f.write_all(Self::MAGIC)?;
        f.write_all(&Self::VERSION.to_le_bytes())?;
        for v in [self.vocab_size, self.dim, self.window] {
            f.write_all(&(v as u32).to_le_bytes())?;
        }
        f.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            f.write_all(&p.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ImportanceError> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = |m: &str| ImportanceError::BadModel(m.to_owned());
        if bytes.len() < 28 || &bytes[..4] != Self::MAGIC {
            return Err(bad("missing header"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        if u32_at(4) != Self::VERSION {
            return Err(bad(&format!("unsupported version {}", u32_at(4))));
        }
        let (vocab_size, dim, window) =
            (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
        let count = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
        if count != Self::param_count(vocab_size, dim, window) || bytes.len() != 28 + 8 * count {
            return Err(bad("parameter count does not match header"));
        }
        let params = bytes[28..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            vocab_size,
            dim,
            window,
            params,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch Adam on binary cross-entropy. Embedding rows only update when a
/// batch touches them.
pub fn train_classifier(
    examples: &[TrainingExample],
    vocab_size: usize,
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, TrainReport), ImportanceError> {
    let positives = examples.iter().filter(|e| e.label == 1).count();
    if positives == 0 || positives == examples.len() {
        return Err(ImportanceError::DegenerateLabels);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ClassifierModel::new(vocab_size, cfg.embedding_dim, cfg.window, &mut rng);
    let n = model.params.len();
    let embed_end = model.ctx_off();
    let d = model.dim;
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut row_steps = vec![0u32; vocab_size];
    let mut dense_step = 0i32;
    let mut grad = vec![0.0; n];
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    let adam = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64, t: i32| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let mh = *m / (1.0 - b1.powi(t));
        let vh = *v / (1.0 - b2.powi(t));
        *p -= cfg.learning_rate * mh / (vh.sqrt() + eps);
    };

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut touched: Vec<usize> = Vec::new();
            for &i in batch {
                model.accumulate_gradient(&examples[i], &mut grad);
                touched.extend(model.context_ids(&examples[i].words, examples[i].feature_index));
            }
            touched.sort_unstable();
            touched.dedup();
            let scale = 1.0 / batch.len() as f64;
            dense_step += 1;
            for k in embed_end..n {
                adam(
                    &mut model.params[k],
                    grad[k] * scale,
                    &mut m[k],
                    &mut v[k],
                    dense_step,
                );
                grad[k] = 0.0;
            }
            for &row in &touched {
                row_steps[row] += 1;
                let t = row_steps[row] as i32;
                for k in row * d..(row + 1) * d {
                    adam(
                        &mut model.params[k],
                        grad[k] * scale,
                        &mut m[k],
                        &mut v[k],
                        t,
                    );
                    grad[k] = 0.0;
                }
            }
        }
        epoch_losses.push(model.mean_loss(examples));
    }
    Ok((model, TrainReport { epoch_losses }))
}

/// Importance score of every feature of a sentence, in feature order.
pub fn score_frame(model: &ClassifierModel, words: &[u32]) -> Vec<f64> {
    (0..words.len())
        .map(|i| {
            model
                .score(words, i)
                .clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disrupt_is_local_and_seeded() {
        let f = FeatureFrame::new(vec![2, 3, 4, 5, 6], 16).unwrap();
        let a = disrupt(&f, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = disrupt(&f, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let changed: Vec<usize> = (0..5)
            .filter(|&i| a.features()[i] != f.features()[i])
            .collect();
        assert_eq!(changed, [2]);
        assert!(matches!(
            disrupt(&f, 5, &mut ChaCha8Rng::seed_from_u64(9)),
            Err(ImportanceError::IndexOutOfRange { index: 5, len: 5 })
        ));
    }

    #[test]
    fn disrupt_collision_rate_matches_uniform_draw() {
        // P(same value) = 2^-16 per draw; over 2e5 draws expect ~3 collisions.
        let f = FeatureFrame::new(vec![1234; 4], 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let same = (0..n)
            .filter(|_| disrupt(&f, 0, &mut rng).unwrap().features()[0] == 1234)
            .count();
        assert!(same <= 15, "{same} collisions");
    }

    #[test]
    fn uniform_gains_give_row_major_slots() {
        let plan = make_plan(&[0.5; 5], &vec![1.0; DATA_SLOTS], 5, 4).unwrap();
        assert_eq!(plan, {
            let mut p = AllocationPlan::identity();
            p.slot_ranking = Some((0..DATA_SLOTS).collect());
            p.feature_ranking = Some((0..5).collect());
            p
        });
    }

    #[test]
    fn best_feature_gets_best_slots() {
        let gains: Vec<f64> = (0..DATA_SLOTS).map(|s| (DATA_SLOTS - s) as f64).collect();
        let plan = make_plan(&[0.9, 0.1], &gains, 2, 4).unwrap();
        assert_eq!(&plan.slots()[..8], &[0, 1, 2, 3, 4, 5, 6, 7]);
        let plan = make_plan(&[0.1, 0.9], &gains, 2, 4).unwrap();
        assert_eq!(&plan.slots()[..8], &[4, 5, 6, 7, 0, 1, 2, 3]);
        assert!(plan.is_valid());
    }

    #[test]
    fn plan_capacity() {
        assert!(matches!(
            make_plan(&vec![0.5; 113], &vec![1.0; DATA_SLOTS], 113, 4),
            Err(ImportanceError::CapacityExceeded { .. })
        ));
        assert!(make_plan(&vec![0.5; 112], &vec![1.0; DATA_SLOTS], 112, 4).is_ok());
    }

    /// Independent construction: sort both lists and zip.
    fn brute_force_plan(scores: &[f64], gains: &[f64], spf: usize) -> Vec<usize> {
        let mut slots: Vec<(f64, usize)> = gains.iter().copied().zip(0..).collect();
        // Stable sort keeps lower index first among equal gains.
        slots.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut feats: Vec<(f64, usize)> = scores.iter().copied().zip(0..).collect();
        feats.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut out = vec![None; DATA_SLOTS];
        let mut next = 0;
        for (_, f) in feats {
            for t in 0..spf {
                out[f * spf + t] = Some(slots[next].1);
                next += 1;
            }
        }
        for o in out.iter_mut().skip(scores.len() * spf) {
            *o = Some(slots[next].1);
            next += 1;
        }
        out.into_iter().map(Option::unwrap).collect()
    }

    proptest::proptest! {
        #[test]
        fn plan_matches_sort_and_zip(
            scores in proptest::collection::vec(0.0f64..1.0, 1..=30),
            per_sc in proptest::collection::vec(0.0f64..4.0, N_SUBCARRIERS),
            c in 0.01f64..100.0,
        ) {
            let gains = slot_gains(&per_sc);
            let plan = make_plan(&scores, &gains, scores.len(), 4).unwrap();
            proptest::prop_assert!(plan.is_valid());
            let expected = brute_force_plan(&scores, &gains, 4);
            proptest::prop_assert_eq!(plan.slots(), expected.as_slice());
            let scaled: Vec<f64> = gains.iter().map(|g| g * c).collect();
            let again = make_plan(&scores, &scaled, scores.len(), 4).unwrap();
            proptest::prop_assert_eq!(plan.slots(), again.slots());
            // Higher score never sits on a worse slot than a lower score's best.
            for a in 0..scores.len() {
                for b in 0..scores.len() {
                    if scores[a] > scores[b] {
                        let worst_a = (0..4).map(|t| gains[plan.slots()[a * 4 + t]]).fold(f64::INFINITY, f64::min);
                        let best_b = (0..4).map(|t| gains[plan.slots()[b * 4 + t]]).fold(0.0, f64::max);
                        proptest::prop_assert!(worst_a >= best_b);
                    }
                }
            }
        }
    }

    fn synthetic(vocab: usize, n: usize, seed: u64) -> Vec<TrainingExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = rng.random_range(4..=12);
                let words: Vec<u32> = (0..len)
                    .map(|_| rng.random_range(2..vocab as u32))
                    .collect();
                let idx = rng.random_range(0..len);
                let label = u8::from((words[idx] as usize) < vocab / 2);
                TrainingExample {
                    words,
                    feature_index: idx,
                    label,
                }
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = ClassifierModel::new(30, 16, 2, &mut rng);
        let batch = synthetic(30, 8, 4);
        let mut grad = vec![0.0; model.params().len()];
        for ex in &batch {
            model.accumulate_gradient(ex, &mut grad);
        }
        let total = |m: &ClassifierModel| batch.iter().map(|e| m.loss(e)).sum::<f64>();
        // Pick parameters the batch actually influences, across every block.
        let mut candidates: Vec<usize> =
            (0..grad.len()).filter(|&k| grad[k].abs() > 1e-4).collect();
        candidates.shuffle(&mut rng);
        for &k in candidates.iter().take(10) {
            let h = 1e-5;
            let mut plus = model.clone();
            plus.params_mut()[k] += h;
            let mut minus = model.clone();
            minus.params_mut()[k] -= h;
            let fd = (total(&plus) - total(&minus)) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs());
            assert!(rel < 1e-4, "param {k}: analytic {} vs fd {fd}", grad[k]);
        }
    }

    #[test]
    fn degenerate_labels_rejected() {
        let mut ex = synthetic(20, 10, 1);
        ex.iter_mut().for_each(|e| e.label = 0);
        assert!(matches!(
            train_classifier(&ex, 20, &TrainConfig::default()),
            Err(ImportanceError::DegenerateLabels)
        ));
    }

    #[test]
    fn scores_are_probabilities_and_window_local() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = ClassifierModel::new(50, 16, 2, &mut rng);
        let words: Vec<u32> = (2..22).collect();
        let scores = score_frame(&model, &words);
        assert_eq!(scores.len(), words.len());
        assert!(scores.iter().all(|&s| s > 0.0 && s < 1.0));
        // Swap the windows around positions 2 and 15; positions 7..=10 see neither.
        let mut swapped = words.clone();
        for o in 0..5 {
            swapped.swap(o, 13 + o);
        }
        let after = score_frame(&model, &swapped);
        for i in 7..=10 {
            assert_eq!(scores[i], after[i]);
        }
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let model = ClassifierModel::new(12, 4, 1, &mut ChaCha8Rng::seed_from_u64(0));
        model.save(&p).unwrap();
        assert_eq!(ClassifierModel::load(&p).unwrap(), model);
        fs::write(&p, b"nope").unwrap();
        assert!(matches!(
            ClassifierModel::load(&p),
            Err(ImportanceError::BadModel(_))
        ));
    }

    #[test]
    fn label_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.tsv");
        let recs = vec![
            ImportanceRecord {
                sentence_id: 4,
                feature_index: 1,
                label: 1,
                oracle_output: Sentence::from_words("a b", 4),
            },
            ImportanceRecord {
                sentence_id: 9,
                feature_index: 0,
                label: 0,
                oracle_output: Sentence::from_words("c d", 9),
            },
        ];
        save_labels(&p, &recs).unwrap();
        assert_eq!(load_labels(&p).unwrap(), vec![(4, 1, 1), (9, 0, 0)]);
    }

    #[test]
    fn training_is_deterministic_and_loss_falls() {
        let ex = synthetic(40, 400, 2);
        let cfg = TrainConfig {
            epochs: 5,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let (a, ra) = train_classifier(&ex, 40, &cfg).unwrap();
        let (b, rb) = train_classifier(&ex, 40, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(ra.epoch_losses.last().unwrap() < ra.epoch_losses.first().unwrap());
    }
}
