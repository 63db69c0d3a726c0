//! Semantic text transmission over a pilot-aided 16-QAM OFDM link.
//!
//! Sentences are coded word by word into fixed-width features, carried over
//! a block-fading multipath channel, and optionally repaired afterwards by a
//! reconstruction oracle. A classifier distilled from that oracle ranks
//! features by how hard they are to repair, and the transmitter places the
//! hardest ones on the strongest subcarriers.
//!
//! Module map:
//! - [`dataset`]: normalization, vocabulary, splits
//! - [`codec`]: word-feature codec and external codec client
//! - [`channel`]: multipath block fading and AWGN
//! - [`phy`]: 16-QAM, OFDM framing, LS estimation, ZF equalization
//! - [`importance`]: perturb-and-repair labels, classifier, allocation
//! - [`oracle`]: reconstruction strategies and oracles
//! - [`metrics`]: SER, BLEU, aggregation, CSV
//! - [`experiment`]: end-to-end pipelines and run configuration
//! - [`synth`]: synthetic parliamentary-style corpus generator
//! - [`server`], [`wire`], [`conformance`]: the JSON/HTTP protocol, a
//!   reference server, and golden-file checks

pub mod channel;
pub mod codec;
pub mod conformance;
pub mod dataset;
pub mod experiment;
pub mod importance;
pub mod metrics;
pub mod oracle;
pub mod phy;
pub mod server;
pub mod synth;
pub mod util;
pub mod wire;

pub use channel::{ChannelConfig, ChannelRealization, NoiseSpec};
pub use codec::{CodecClient, FeatureFrame, SemanticCodec, WordCodec};
pub use dataset::{CorpusSplit, Sentence, Vocabulary};
pub use experiment::{Pipeline, RunConfig};
pub use importance::{AllocationPlan, ClassifierModel, ImportanceRecord};
pub use metrics::{EvalRow, Method};
pub use oracle::{ReconOracle, ReconRequest, ReconResponse, Strategy};
pub use phy::{ChannelEstimate, OfdmBlock, QamSymbol};
