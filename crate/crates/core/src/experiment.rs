//! End-to-end link simulation and the artifact-producing stages behind the CLI.
//!
//! Every (method, SNR) cell runs its test sentences in parallel. Each sentence
//! derives its channel, noise and plan randomness from
//! `(run seed, SNR, sentence id)` only, so the methods see identical channel
//! and noise draws (paired comparisons) and results do not depend on thread
//! scheduling.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{self, ChannelConfig, ChannelRealization, NoiseSpec};
use crate::codec::{CodecClient, CodecError, FeatureFrame, SemanticCodec, WordCodec};
use crate::dataset::{self, CorpusSplit, DatasetError, Sentence, Vocabulary};
use crate::importance::{
    self, make_plan, score_frame, slot_gains, word_ids, AllocationPlan, ClassifierModel,
    ImportanceError, TrainConfig,
};
use crate::metrics::{self, bleu, sentence_error, EvalRow, Method, MetricsError, SentenceResult};
use crate::oracle::{
    self, BigramOracle, BigramTable, ExamplePair, LlmConfig, LlmOracle, OracleError, ReconOracle,
    ReconRequest, RewritingOracle, ServiceOracle, Strategy,
};
use crate::phy::{self, PhyError, BITS_PER_SYMBOL};
use crate::util::derive_seed;

pub const SCHEMA_VERSION: u32 = 1;

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const TRAIN_SPLIT_FILE: &str = "split_train.idx";
pub const TEST_SPLIT_FILE: &str = "split_test.idx";
pub const LABELS_FILE: &str = "labels.tsv";
pub const CLASSIFIER_FILE: &str = "classifier.bin";
pub const RESULTS_FILE: &str = "results.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const REPORT_DATA_FILE: &str = "report.dat";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing artifact: {name} (expected at {path}); run the `{stage}` stage first")]
    MissingArtifact {
        name: &'static str,
        path: PathBuf,
        stage: &'static str,
    },
    #[error("oracle unavailable: {0}")]
    OracleUnavailable(#[from] OracleError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Importance(#[from] ImportanceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::MissingArtifact { .. } => 3,
            ExperimentError::OracleUnavailable(_) => 4,
            _ => 1,
        }
    }
}

/// How the oracle gate decides a received sentence needs repair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// The reference is known; only mismatches are sent.
    Evaluation,
    /// Reference-free: sentences with `unk` or unattested bigrams are sent.
    Deployment,
}

/// Which channel state the transmitter ranks subcarriers by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsiMode {
    /// True `|H[k]|^2`.
    Genie,
    /// `|H_hat[k]|^2` from an independent noisy pilot observation.
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleMode {
    /// Bigram-bridge corrector built from the training split.
    Mock,
    /// Adversarial mock that rewrites heavily damaged sentences.
    MockRewriting,
    /// Chat-completion endpoint configured by the `llm_*` keys.
    Live,
    /// External `/v1/reconstruct` service at this base URL.
    Service(String),
}

impl OracleMode {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "mock" => Ok(OracleMode::Mock),
            "mock-rewriting" => Ok(OracleMode::MockRewriting),
            "live" => Ok(OracleMode::Live),
            url if url.starts_with("http://") || url.starts_with("https://") => {
                Ok(OracleMode::Service(url.to_owned()))
            }
            other => Err(format!(
                "oracle must be mock, mock-rewriting, live or an http(s) URL, got {other:?}"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodecMode {
    Builtin,
    External(String),
}

impl CodecMode {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "builtin" => Ok(CodecMode::Builtin),
            url if url.starts_with("http://") || url.starts_with("https://") => {
                Ok(CodecMode::External(url.to_owned()))
            }
            other => Err(format!(
                "codec must be builtin or an http(s) URL, got {other:?}"
            )),
        }
    }
}

/// Run configuration, stored as flat TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub corpus: PathBuf,
    pub output_dir: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub vocab_size: usize,
    pub feature_width: u8,
    pub snr_db: Vec<f64>,
    pub methods: Vec<Method>,
    pub oracle: String,
    pub codec: String,
    pub label_passes: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub embedding_dim: usize,
    pub context_window: usize,
    pub channel_taps: usize,
    pub channel_decay: f64,
    pub csi: CsiMode,
    /// Only `zf` is implemented; `mmse` is reserved.
    pub equalizer: String,
    pub gate: GateMode,
    pub prompt_examples: usize,
    pub summary_words: usize,
    pub rewrite_threshold: usize,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub llm_endpoint: String,
    pub llm_model: String,
    pub llm_token_env: String,
    pub llm_cache_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Laptop-scale preset: 10,000 training and 1,000 test sentences.
    pub fn desk() -> Self {
        let llm = LlmConfig::default();
        Self {
            schema_version: SCHEMA_VERSION,
            corpus: PathBuf::from("corpus.txt"),
            output_dir: PathBuf::from("artifacts"),
            n_train: 10_000,
            n_test: 1_000,
            seed: 2024,
            vocab_size: 65_534,
            feature_width: crate::codec::DEFAULT_WIDTH,
            snr_db: (0..=10).map(|i| f64::from(2 * i)).collect(),
            methods: Method::PAPER_METHODS.to_vec(),
            oracle: "mock".into(),
            codec: "builtin".into(),
            label_passes: 3,
            epochs: 30,
            learning_rate: 1e-4,
            batch_size: 16,
            embedding_dim: 16,
            context_window: 2,
            channel_taps: 3,
            channel_decay: 1.0,
            csi: CsiMode::Genie,
            equalizer: "zf".into(),
            gate: GateMode::Evaluation,
            prompt_examples: oracle::DEFAULT_PROMPT_EXAMPLES,
            summary_words: oracle::DEFAULT_SUMMARY_WORDS,
            rewrite_threshold: RewritingOracle::DEFAULT_THRESHOLD,
            timeout_secs: 60,
            max_in_flight: 4,
            llm_endpoint: llm.endpoint,
            llm_model: llm.model,
            llm_token_env: llm.token_env,
            llm_cache_dir: llm.cache_dir,
        }
    }

    /// Full-scale preset: 100,000 training and 10,000 test sentences.
    pub fn full() -> Self {
        Self {
            n_train: 100_000,
            n_test: 10_000,
            ..Self::desk()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks everything that does not need the filesystem.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let err = |m: String| Err(ExperimentError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return err(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.snr_db.is_empty() {
            return err("snr_db grid is empty".into());
        }
        if self.snr_db.iter().any(|s| s.is_nan()) || self.snr_db.windows(2).any(|w| w[0] > w[1]) {
            return err("snr_db grid must be sorted ascending".into());
        }
        if self.methods.is_empty() {
            return err("methods list is empty".into());
        }
        if self.feature_width == 0
            || self.feature_width > 32
            || !(self.feature_width as usize).is_multiple_of(BITS_PER_SYMBOL)
        {
            return err(format!(
                "feature_width {} must be a multiple of 4 in 4..=32",
                self.feature_width
            ));
        }
        if phy::DATA_SLOTS * BITS_PER_SYMBOL < dataset::MAX_WORDS * self.feature_width as usize {
            return err("a maximum-length sentence does not fit one OFDM block".into());
        }
        if self.channel_taps == 0 || self.channel_taps > phy::CP_LEN + 1 {
            return err(format!(
                "channel_taps must be in 1..={} (cyclic prefix length + 1)",
                phy::CP_LEN + 1
            ));
        }
        if self.n_test == 0 {
            return err("n_test must be positive".into());
        }
        if self.label_passes == 0 {
            return err("label_passes must be positive".into());
        }
        match self.equalizer.as_str() {
            "zf" => {}
            "mmse" => return err("mmse equalization is not implemented; use zf".into()),
            other => return err(format!("unknown equalizer {other:?}")),
        }
        OracleMode::parse(&self.oracle).map_err(ExperimentError::Config)?;
        CodecMode::parse(&self.codec).map_err(ExperimentError::Config)?;
        Ok(())
    }

    /// Also requires the corpus file to exist.
    pub fn validate_paths(&self) -> Result<(), ExperimentError> {
        self.validate()?;
        if !self.corpus.is_file() {
            return Err(ExperimentError::Config(format!(
                "corpus file {} does not exist",
                self.corpus.display()
            )));
        }
        Ok(())
    }

    pub fn channel(&self) -> ChannelConfig {
        ChannelConfig {
            n_taps: self.channel_taps,
            decay: self.channel_decay,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            embedding_dim: self.embedding_dim,
            window: self.context_window,
            seed: self.seed,
        }
    }

    pub fn llm_config(&self) -> LlmConfig {
        LlmConfig {
            endpoint: self.llm_endpoint.clone(),
            model: self.llm_model.clone(),
            token_env: self.llm_token_env.clone(),
            cache_dir: self.llm_cache_dir.clone(),
            timeout: Duration::from_secs(self.timeout_secs),
            max_in_flight: self.max_in_flight,
            ..LlmConfig::default()
        }
    }

    pub fn artifact(&self, file: &str) -> PathBuf {
        self.output_dir.join(file)
    }
}

/// Domain summary and in-context error examples for the prompted strategy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptContext {
    pub summary: String,
    pub examples: Vec<ExamplePair>,
}

impl PromptContext {
    /// Summarizes the training split and builds `k` (corrupted, correct)
    /// pairs by disrupting one feature of randomly chosen training sentences.
    pub fn from_training(
        train: &[Sentence],
        codec: &dyn SemanticCodec,
        k: usize,
        summary_words: usize,
        seed: u64,
    ) -> Result<Self, ExperimentError> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5052_4f4d_5054]));
        let mut examples = Vec::with_capacity(k);
        let mut attempts = 0;
        while examples.len() < k && !train.is_empty() && attempts < 100 * k.max(1) {
            attempts += 1;
            let s = &train[rng.random_range(0..train.len())];
            let frame = codec.encode(s)?;
            let idx = rng.random_range(0..frame.len());
            let corrupted = codec.decode(&importance::disrupt(&frame, idx, &mut rng)?)?;
            if !corrupted.same_words(s) {
                examples.push(ExamplePair {
                    corrupted,
                    corrected: s.clone(),
                });
            }
        }
        Ok(Self {
            summary: oracle::summarize(train, summary_words),
            examples,
        })
    }
}

/// Everything a sentence needs on its way through the link.
pub struct Pipeline<'a> {
    pub codec: &'a dyn SemanticCodec,
    pub vocab: &'a Vocabulary,
    pub oracle: Option<&'a dyn ReconOracle>,
    pub classifier: Option<&'a ClassifierModel>,
    /// Training-split bigrams for the deployment-mode gate.
    pub bigrams: Option<&'a BigramTable>,
    pub prompt: Option<&'a PromptContext>,
    pub channel: ChannelConfig,
    /// Replace fading by `h = (1)` (noise still applies).
    pub identity_channel: bool,
    pub csi: CsiMode,
    pub gate: GateMode,
    pub seed: u64,
}

/// What happened to one test sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceOutcome {
    pub source_id: usize,
    pub received: Sentence,
    pub output: Sentence,
    pub error: u8,
    pub bleu: f64,
    pub oracle_called: bool,
    pub oracle_flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub row: EvalRow,
    pub outcomes: Vec<SentenceOutcome>,
    pub oracle_calls: usize,
}

impl CellResult {
    pub fn errors(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| f64::from(o.error)).collect()
    }

    pub fn bleus(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.bleu).collect()
    }
}

fn noise_for(snr_db: f64) -> NoiseSpec {
    if snr_db.is_infinite() && snr_db > 0.0 {
        NoiseSpec::noiseless()
    } else {
        NoiseSpec::new(snr_db)
    }
}

impl Pipeline<'_> {
    fn requirements(&self, method: Method) -> Result<(), ExperimentError> {
        if method.uses_oracle() && self.oracle.is_none() {
            return Err(ExperimentError::Config(format!("{method} needs an oracle")));
        }
        if method == Method::ScGptAdaptive && self.classifier.is_none() {
            return Err(ExperimentError::MissingArtifact {
                name: "classifier",
                path: PathBuf::from(CLASSIFIER_FILE),
                stage: "train-classifier",
            });
        }
        if method == Method::ScGptPrompt && self.prompt.is_none_or(|p| p.examples.is_empty()) {
            return Err(ExperimentError::Config(
                "sc_gpt_prompt needs a prompt context with at least one example".into(),
            ));
        }
        if self.gate == GateMode::Deployment && method.uses_oracle() && self.bigrams.is_none() {
            return Err(ExperimentError::Config(
                "deployment gate needs the training bigram table".into(),
            ));
        }
        Ok(())
    }

    fn plan_for(
        &self,
        method: Method,
        reference: &Sentence,
        ch: &ChannelRealization,
        noise: NoiseSpec,
        sentence_seed: u64,
    ) -> Result<AllocationPlan, ExperimentError> {
        match method {
            Method::Sc | Method::ScGpt | Method::ScGptPrompt => Ok(AllocationPlan::identity()),
            Method::ScGptRandom => Ok(AllocationPlan::random(&mut ChaCha8Rng::seed_from_u64(
                derive_seed(sentence_seed, &[3]),
            ))),
            Method::ScGptAdaptive => {
                let model = self.classifier.expect("checked by requirements");
                let scores = score_frame(model, &word_ids(reference, self.vocab));
                let gains = match self.csi {
                    CsiMode::Genie => ch.gains(),
                    CsiMode::Estimated => {
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(sentence_seed, &[4]));
                        let pilot_energy = phy::qam_point(phy::PILOT_BITS).norm_sqr();
                        ch.freq_response
                            .iter()
                            .map(|h| {
                                let n = if noise.is_noiseless() {
                                    num_complex::Complex64::new(0.0, 0.0)
                                } else {
                                    channel::complex_gaussian(
                                        &mut rng,
                                        noise.variance() / pilot_energy,
                                    )
                                };
                                (h + n).norm_sqr()
                            })
                            .collect()
                    }
                };
                let spf = self.codec.width() as usize / BITS_PER_SYMBOL;
                Ok(make_plan(
                    &scores,
                    &slot_gains(&gains),
                    reference.len(),
                    spf,
                )?)
            }
        }
    }

    /// Sends one sentence through codec, PHY, channel and (maybe) the oracle.
    pub fn transmit(
        &self,
        method: Method,
        snr_db: f64,
        reference: &Sentence,
    ) -> Result<SentenceOutcome, ExperimentError> {
        let sentence_seed = derive_seed(self.seed, &[snr_db.to_bits(), reference.source_id as u64]);
        let noise = noise_for(snr_db);
        let ch = if self.identity_channel {
            ChannelRealization::identity()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(sentence_seed, &[1]));
            self.channel.draw(&mut rng, reference.source_id as u64)
        };

        let frame = self.codec.encode(reference)?;
        let bits = frame.to_bits();
        let symbols: Vec<_> = phy::map_16qam(&bits)?.iter().map(|s| s.value).collect();
        let plan = self.plan_for(method, reference, &ch, noise, sentence_seed)?;
        let block = phy::assemble_block(&symbols, &plan)?;

        let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(sentence_seed, &[2]));
        let rx = channel::apply(&phy::to_time(&block), &ch, noise, &mut noise_rng);
        let grid = phy::from_time(&rx)?;
        let est = phy::estimate_ls(grid.pilot_row(), &phy::pilot_sequence());
        let (rx_bits, _) = phy::equalize_demap(&grid, &est, &plan, symbols.len());
        let rx_frame = FeatureFrame::from_bits(&rx_bits, frame.len(), frame.width())?;
        let mut received = self.codec.decode(&rx_frame)?;
        received.source_id = reference.source_id;

        let mut output = received.clone();
        let mut oracle_called = false;
        let mut oracle_flagged = false;
        if let (true, Some(oracle)) = (method.uses_oracle(), self.oracle) {
            let suspect = match self.gate {
                GateMode::Evaluation => !received.same_words(reference),
                GateMode::Deployment => self
                    .bigrams
                    .expect("checked by requirements")
                    .is_suspect(&received),
            };
            if suspect {
                let req = match method {
                    Method::ScGptPrompt => {
                        let ctx = self.prompt.expect("checked by requirements");
                        ReconRequest::prompted(
                            received.clone(),
                            ctx.summary.clone(),
                            ctx.examples.clone(),
                        )
                    }
                    Method::ScGptAdaptive => ReconRequest {
                        strategy: Strategy::Adaptive,
                        ..ReconRequest::plain(received.clone())
                    },
                    _ => ReconRequest::plain(received.clone()),
                };
                let resp = oracle.repair(&req)?;
                oracle_called = true;
                oracle_flagged = resp.flagged;
                output = resp.sentence;
            }
        }
        Ok(SentenceOutcome {
            source_id: reference.source_id,
            error: sentence_error(reference, &output),
            bleu: bleu(reference, &output),
            received,
            output,
            oracle_called,
            oracle_flagged,
        })
    }

    /// One (method, SNR) cell over the whole test set.
    pub fn run_cell(
        &self,
        method: Method,
        snr_db: f64,
        test: &[Sentence],
    ) -> Result<CellResult, ExperimentError> {
        self.requirements(method)?;
        let outcomes: Vec<SentenceOutcome> = test
            .par_iter()
            .map(|s| self.transmit(method, snr_db, s))
            .collect::<Result<_, _>>()?;
        let per_sentence: Vec<SentenceResult> = outcomes
            .iter()
            .map(|o| SentenceResult {
                snr_db,
                method,
                seed: self.seed,
                error: o.error,
                bleu: o.bleu,
            })
            .collect();
        let row = metrics::aggregate(&per_sentence)?;
        let oracle_calls = outcomes.iter().filter(|o| o.oracle_called).count();
        Ok(CellResult {
            row,
            outcomes,
            oracle_calls,
        })
    }

    pub fn run_pipeline(
        &self,
        method: Method,
        snr_db: f64,
        test: &[Sentence],
    ) -> Result<EvalRow, ExperimentError> {
        Ok(self.run_cell(method, snr_db, test)?.row)
    }

    /// All methods over the SNR grid, method-major.
    pub fn sweep(
        &self,
        methods: &[Method],
        snr_grid: &[f64],
        test: &[Sentence],
    ) -> Result<Vec<EvalRow>, ExperimentError> {
        let mut rows = Vec::with_capacity(methods.len() * snr_grid.len());
        for &m in methods {
            for &snr in snr_grid {
                let row = self.run_pipeline(m, snr, test)?;
                log::info!(
                    "{m} @ {} dB: ser {:.4} bleu {:.4}",
                    metrics::fmt_snr(snr),
                    row.ser,
                    row.bleu
                );
                rows.push(row);
            }
        }
        Ok(rows)
    }
}

/// Builds the configured oracle. Mock oracles learn bigrams from `train`.
pub fn build_oracle(
    cfg: &RunConfig,
    train: &[Sentence],
) -> Result<Box<dyn ReconOracle>, ExperimentError> {
    Ok(
        match OracleMode::parse(&cfg.oracle).map_err(ExperimentError::Config)? {
            OracleMode::Mock => Box::new(BigramOracle::new(train)),
            OracleMode::MockRewriting => {
                Box::new(RewritingOracle::new(train, cfg.rewrite_threshold))
            }
            OracleMode::Live => Box::new(LlmOracle::new(cfg.llm_config())?),
            OracleMode::Service(url) => Box::new(ServiceOracle::new(
                &url,
                Duration::from_secs(cfg.timeout_secs),
                cfg.max_in_flight,
            )),
        },
    )
}

pub fn build_codec(
    cfg: &RunConfig,
    vocab: &Vocabulary,
) -> Result<Box<dyn SemanticCodec>, ExperimentError> {
    Ok(
        match CodecMode::parse(&cfg.codec).map_err(ExperimentError::Config)? {
            CodecMode::Builtin => Box::new(WordCodec::new(vocab.clone(), cfg.feature_width)?),
            CodecMode::External(url) => Box::new(
                CodecClient::new(
                    url,
                    Duration::from_secs(cfg.timeout_secs),
                    cfg.max_in_flight,
                )
                .expect_width(cfg.feature_width),
            ),
        },
    )
}

fn require(
    cfg: &RunConfig,
    file: &str,
    name: &'static str,
    stage: &'static str,
) -> Result<PathBuf, ExperimentError> {
    let path = cfg.artifact(file);
    if path.is_file() {
        Ok(path)
    } else {
        Err(ExperimentError::MissingArtifact { name, path, stage })
    }
}

/// Corpus, split and vocabulary as written by [`stage_build_vocab`].
pub struct DataArtifacts {
    pub split: CorpusSplit,
    pub vocab: Vocabulary,
}

pub fn load_data(cfg: &RunConfig) -> Result<DataArtifacts, ExperimentError> {
    cfg.validate_paths()?;
    let vocab_path = require(cfg, VOCAB_FILE, "vocabulary", "build-vocab")?;
    let train_path = require(cfg, TRAIN_SPLIT_FILE, "train split", "build-vocab")?;
    let test_path = require(cfg, TEST_SPLIT_FILE, "test split", "build-vocab")?;
    let corpus = dataset::load_corpus(&cfg.corpus)?;
    Ok(DataArtifacts {
        split: CorpusSplit::load(&corpus, &train_path, &test_path, cfg.seed)?,
        vocab: Vocabulary::load(&vocab_path)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabSummary {
    pub accepted: usize,
    pub train: usize,
    pub test: usize,
    pub vocab_size: usize,
}

/// Normalizes the corpus, splits it, and writes the vocabulary and split indices.
pub fn stage_build_vocab(cfg: &RunConfig) -> Result<VocabSummary, ExperimentError> {
    cfg.validate_paths()?;
    let corpus = dataset::load_corpus(&cfg.corpus)?;
    let split = dataset::split(&corpus, cfg.n_train, cfg.n_test, cfg.seed)?;
    let max_vocab = cfg
        .vocab_size
        .min((1usize << cfg.feature_width.min(31)) - 2);
    let vocab = dataset::build_vocab(&split.train, max_vocab);
    fs::create_dir_all(&cfg.output_dir)?;
    vocab.save(&cfg.artifact(VOCAB_FILE))?;
    split.save(
        &cfg.artifact(TRAIN_SPLIT_FILE),
        &cfg.artifact(TEST_SPLIT_FILE),
    )?;
    Ok(VocabSummary {
        accepted: corpus.len(),
        train: split.train.len(),
        test: split.test.len(),
        vocab_size: vocab.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSummary {
    pub records: usize,
    pub important: usize,
    pub failures: usize,
}

pub fn stage_label(cfg: &RunConfig) -> Result<LabelSummary, ExperimentError> {
    let data = load_data(cfg)?;
    let codec = build_codec(cfg, &data.vocab)?;
    let oracle = build_oracle(cfg, &data.split.train)?;
    let run = importance::label_corpus(
        &data.split.train,
        codec.as_ref(),
        oracle.as_ref(),
        cfg.seed,
        cfg.label_passes,
    );
    if run.records.is_empty() && !run.failures.is_empty() {
        return Err(ExperimentError::OracleUnavailable(OracleError::Transport(
            format!(
                "every labeling call failed; first failure: {}",
                run.failures[0].2
            ),
        )));
    }
    importance::save_labels(&cfg.artifact(LABELS_FILE), &run.records)?;
    Ok(LabelSummary {
        records: run.records.len(),
        important: run.records.iter().filter(|r| r.label == 1).count(),
        failures: run.failures.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub examples: usize,
    pub final_loss: f64,
    pub holdout_accuracy: f64,
    pub majority_rate: f64,
}

/// Trains on 90% of the labeled sentences (by id) and reports accuracy on the rest.
pub fn stage_train(cfg: &RunConfig) -> Result<TrainSummary, ExperimentError> {
    let data = load_data(cfg)?;
    let labels_path = require(cfg, LABELS_FILE, "labels", "label")?;
    let labels = importance::load_labels(&labels_path)?;
    let examples = importance::training_examples(&labels, &data.split.train, &data.vocab);
    let (fit, holdout): (Vec<_>, Vec<_>) = labels
        .iter()
        .zip(&examples)
        .partition(|((id, _, _), _)| !derive_seed(cfg.seed, &[*id as u64]).is_multiple_of(10));
    let fit: Vec<_> = fit.into_iter().map(|(_, e)| e.clone()).collect();
    let holdout: Vec<_> = holdout.into_iter().map(|(_, e)| e.clone()).collect();
    let (model, report) =
        importance::train_classifier(&fit, data.vocab.len(), &cfg.train_config())?;
    model.save(&cfg.artifact(CLASSIFIER_FILE))?;
    let positives = holdout.iter().filter(|e| e.label == 1).count() as f64;
    let n = holdout.len().max(1) as f64;
    Ok(TrainSummary {
        examples: fit.len(),
        final_loss: report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        holdout_accuracy: model.accuracy(&holdout),
        majority_rate: (positives / n).max(1.0 - positives / n),
    })
}

/// Runs the configured sweep and writes `results.csv`.
pub fn stage_simulate(cfg: &RunConfig) -> Result<Vec<EvalRow>, ExperimentError> {
    let data = load_data(cfg)?;
    let codec = build_codec(cfg, &data.vocab)?;
    let needs_oracle = cfg.methods.iter().any(|m| m.uses_oracle());
    let oracle = if needs_oracle {
        Some(build_oracle(cfg, &data.split.train)?)
    } else {
        None
    };
    let classifier = if cfg.methods.contains(&Method::ScGptAdaptive) {
        let path = require(cfg, CLASSIFIER_FILE, "classifier", "train-classifier")?;
        Some(ClassifierModel::load(&path)?)
    } else {
        None
    };
    let prompt = if cfg.methods.contains(&Method::ScGptPrompt) {
        Some(PromptContext::from_training(
            &data.split.train,
            codec.as_ref(),
            cfg.prompt_examples,
            cfg.summary_words,
            cfg.seed,
        )?)
    } else {
        None
    };
    let bigrams = BigramTable::from_sentences(&data.split.train);
    let pipeline = Pipeline {
        codec: codec.as_ref(),
        vocab: &data.vocab,
        oracle: oracle.as_deref(),
        classifier: classifier.as_ref(),
        bigrams: Some(&bigrams),
        prompt: prompt.as_ref(),
        channel: cfg.channel(),
        identity_channel: false,
        csi: cfg.csi,
        gate: cfg.gate,
        seed: cfg.seed,
    };
    let rows = pipeline.sweep(&cfg.methods, &cfg.snr_db, &data.split.test)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let f = fs::File::create(cfg.artifact(RESULTS_FILE))?;
    metrics::write_csv(std::io::BufWriter::new(f), &rows)?;
    Ok(rows)
}

/// Joins result CSVs into a long table (`snr_db,method,metric,value,stderr,n,seed`)
/// and a whitespace-separated wide table with one column per (metric, method).
pub fn stage_report(inputs: &[PathBuf], out_dir: &Path) -> Result<usize, ExperimentError> {
    let mut rows = Vec::new();
    for p in inputs {
        if !p.is_file() {
            return Err(ExperimentError::MissingArtifact {
                name: "results",
                path: p.clone(),
                stage: "simulate",
            });
        }
        rows.extend(metrics::read_csv(BufReader::new(fs::File::open(p)?))?);
    }
    rows.sort_by(|a, b| a.method.cmp(&b.method).then(a.snr_db.total_cmp(&b.snr_db)));
    fs::create_dir_all(out_dir)?;

    let mut long = String::from("snr_db,method,metric,value,stderr,n,seed\n");
    for r in &rows {
        let snr = metrics::fmt_snr(r.snr_db);
        long.push_str(&format!(
            "{snr},{},ser,{:.6},{:.6},{},{}\n",
            r.method,
            r.ser,
            r.ser_stderr(),
            r.n_sentences,
            r.seed
        ));
        long.push_str(&format!(
            "{snr},{},bleu,{:.6},,{},{}\n",
            r.method, r.bleu, r.n_sentences, r.seed
        ));
    }
    fs::write(out_dir.join(REPORT_FILE), long)?;

    let mut methods: Vec<Method> = rows.iter().map(|r| r.method).collect();
    methods.dedup();
    let mut snrs: Vec<f64> = rows.iter().map(|r| r.snr_db).collect();
    snrs.sort_by(f64::total_cmp);
    snrs.dedup();
    let mut wide = String::from("# snr_db");
    for m in &methods {
        wide.push_str(&format!(" ser_{m}"));
    }
    for m in &methods {
        wide.push_str(&format!(" bleu_{m}"));
    }
    wide.push('\n');
    for snr in &snrs {
        let find = |m: &Method| rows.iter().find(|r| r.method == *m && r.snr_db == *snr);
        wide.push_str(&metrics::fmt_snr(*snr));
        for m in &methods {
            match find(m) {
                Some(r) => wide.push_str(&format!(" {:.6}", r.ser)),
                None => wide.push_str(" nan"),
            }
        }
        for m in &methods {
            match find(m) {
                Some(r) => wide.push_str(&format!(" {:.6}", r.bleu)),
                None => wide.push_str(" nan"),
            }
        }
        wide.push('\n');
    }
    fs::write(out_dir.join(REPORT_DATA_FILE), wide)?;
    Ok(rows.len())
}
