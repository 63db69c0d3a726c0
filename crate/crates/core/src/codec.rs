//! Sentence <-> feature-frame coding.
//!
//! The built-in codec maps each word to its vocabulary index written as a
//! fixed-width big-endian bit field. There is no redundancy: a corrupted field
//! decodes to whatever word its bits select, or `unk` when out of range.
//! [`CodecClient`] speaks the JSON/HTTP codec protocol so a neural codec can
//! be swapped in behind the same [`SemanticCodec`] trait.

use std::time::Duration;

use thiserror::Error;

use crate::dataset::{Sentence, Vocabulary, UNK_TOKEN};
use crate::util::Semaphore;
use crate::wire::{self, DecodeRequest, DecodeResponse, EncodeRequest, EncodeResponse};

/// Default feature width in bits (one word = four 16-QAM symbols).
pub const DEFAULT_WIDTH: u8 = 16;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("bitstream has {got} bits, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("feature frame must hold at least one feature")]
    EmptyFrame,
    #[error("unsupported feature width {0} (must be 1..=32)")]
    BadWidth(u8),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("codec service timed out after {0:?}")]
    Timeout(Duration),
}

/// Ordered per-word features of one sentence, all `width` bits wide.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureFrame {
    features: Vec<u32>,
    width: u8,
}

impl FeatureFrame {
    pub fn new(features: Vec<u32>, width: u8) -> Result<Self, CodecError> {
        if !(1..=32).contains(&width) {
            return Err(CodecError::BadWidth(width));
        }
        let mask = width_mask(width);
        Ok(Self {
            features: features.into_iter().map(|f| f & mask).collect(),
            width,
        })
    }

    pub fn features(&self) -> &[u32] {
        &self.features
    }

    pub fn width(&self) -> u8 {
        self.width
    }

    /// Word count.
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Overwrites one feature, masking to the frame width.
    pub fn set(&mut self, index: usize, value: u32) {
        self.features[index] = value & width_mask(self.width);
    }

    /// Big-endian concatenation of all features, one `u8` (0 or 1) per bit.
    pub fn to_bits(&self) -> Vec<u8> {
        let w = self.width as usize;
        let mut bits = Vec::with_capacity(self.features.len() * w);
        for &f in &self.features {
            for b in (0..w).rev() {
                bits.push(((f >> b) & 1) as u8);
            }
        }
        bits
    }

    /// Inverse of [`FeatureFrame::to_bits`]; the receiver supplies `length`.
    pub fn from_bits(bits: &[u8], length: usize, width: u8) -> Result<Self, CodecError> {
        if !(1..=32).contains(&width) {
            return Err(CodecError::BadWidth(width));
        }
        if length == 0 {
            return Err(CodecError::EmptyFrame);
        }
        let w = width as usize;
        if bits.len() != length * w {
            return Err(CodecError::LengthMismatch {
                expected: length * w,
                got: bits.len(),
            });
        }
        let features = bits
            .chunks_exact(w)
            .map(|chunk| {
                chunk
                    .iter()
                    .fold(0u32, |acc, &b| (acc << 1) | u32::from(b & 1))
            })
            .collect();
        Ok(Self { features, width })
    }
}

fn width_mask(width: u8) -> u32 {
    if width >= 32 {
        u32::MAX
    } else {
        (1u32 << width) - 1
    }
}

/// Anything that turns sentences into feature frames and back.
pub trait SemanticCodec: Send + Sync {
    fn width(&self) -> u8;
    fn encode(&self, sentence: &Sentence) -> Result<FeatureFrame, CodecError>;
    fn decode(&self, frame: &FeatureFrame) -> Result<Sentence, CodecError>;
}

/// Deterministic word-index codec.
#[derive(Debug, Clone)]
pub struct WordCodec {
    vocab: Vocabulary,
    width: u8,
}

impl WordCodec {
    pub fn new(vocab: Vocabulary, width: u8) -> Result<Self, CodecError> {
        if !(1..=32).contains(&width) {
            return Err(CodecError::BadWidth(width));
        }
        Ok(Self { vocab, width })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }
}

impl SemanticCodec for WordCodec {
    fn width(&self) -> u8 {
        self.width
    }

    fn encode(&self, sentence: &Sentence) -> Result<FeatureFrame, CodecError> {
        Ok(encode_with(sentence, &self.vocab, self.width))
    }

    fn decode(&self, frame: &FeatureFrame) -> Result<Sentence, CodecError> {
        Ok(decode(frame, &self.vocab))
    }
}

/// Encodes with the default 16-bit width.
pub fn encode(sentence: &Sentence, vocab: &Vocabulary) -> FeatureFrame {
    encode_with(sentence, vocab, DEFAULT_WIDTH)
}

pub fn encode_with(sentence: &Sentence, vocab: &Vocabulary, width: u8) -> FeatureFrame {
    let mask = width_mask(width);
    FeatureFrame {
        features: sentence
            .tokens
            .iter()
            .map(|t| vocab.index_of(t) & mask)
            .collect(),
        width,
    }
}

/// Per-feature inverse of [`encode`]. Reserved or out-of-range values render as `unk`.
pub fn decode(frame: &FeatureFrame, vocab: &Vocabulary) -> Sentence {
    let tokens = frame
        .features
        .iter()
        .map(|&f| {
            if (f as usize) < vocab.len() {
                vocab.word(f).to_owned()
            } else {
                UNK_TOKEN.to_owned()
            }
        })
        .collect();
    Sentence::new(tokens, 0)
}

/// Blocking client for an external codec service.
///
/// The frame width is taken from the first encode reply and every later
/// reply must agree with it (and with `expected_width`, when given).
#[derive(Debug)]
pub struct CodecClient {
    endpoint: String,
    agent: ureq::Agent,
    timeout: Duration,
    expected_width: Option<u8>,
    negotiated: std::sync::OnceLock<u8>,
    in_flight: Semaphore,
}

impl CodecClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, max_in_flight: usize) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_owned(),
            agent: wire::agent(timeout),
            timeout,
            expected_width: None,
            negotiated: std::sync::OnceLock::new(),
            in_flight: Semaphore::new(max_in_flight.max(1)),
        }
    }

    /// Requires the service to use exactly `width` bits per feature.
    pub fn expect_width(mut self, width: u8) -> Self {
        self.expected_width = Some(width);
        self
    }

    /// Width agreed with the service, if a session has started.
    pub fn negotiated_width(&self) -> Option<u8> {
        self.negotiated.get().copied()
    }

    fn check_width(&self, width: u8) -> Result<(), CodecError> {
        if let Some(expected) = self.expected_width {
            if width != expected {
                return Err(CodecError::Protocol(format!(
                    "service width {width} does not match expected {expected}"
                )));
            }
        }
        let agreed = *self.negotiated.get_or_init(|| width);
        if agreed != width {
            return Err(CodecError::Protocol(format!(
                "service width changed from {agreed} to {width} mid-session"
            )));
        }
        Ok(())
    }

    fn post<Req: serde::Serialize, Resp: serde::de::DeserializeOwned>(
        &self,
        route: &str,
        body: &Req,
    ) -> Result<Resp, CodecError> {
        let _permit = self.in_flight.acquire();
        let url = format!("{}{}", self.endpoint, route);
        wire::post_json(&self.agent, &url, body).map_err(|e| match e {
            wire::HttpError::Transport(m) => CodecError::Transport(m),
            wire::HttpError::Timeout => CodecError::Timeout(self.timeout),
            wire::HttpError::Status(409, m) => {
                CodecError::Protocol(format!("protocol version rejected: {m}"))
            }
            wire::HttpError::Status(code, m) => CodecError::Protocol(format!("HTTP {code}: {m}")),
            wire::HttpError::Decode(m) => CodecError::Protocol(m),
        })
    }
}

impl SemanticCodec for CodecClient {
    fn width(&self) -> u8 {
        self.negotiated_width()
            .or(self.expected_width)
            .unwrap_or(DEFAULT_WIDTH)
    }

    fn encode(&self, sentence: &Sentence) -> Result<FeatureFrame, CodecError> {
        let resp: EncodeResponse = self.post(
            "/v1/encode",
            &EncodeRequest {
                sentence: sentence.tokens.clone(),
            },
        )?;
        self.check_width(resp.width)?;
        let bits = wire::unpack_bits(&resp.bits, resp.length * resp.width as usize)
            .map_err(CodecError::Protocol)?;
        FeatureFrame::from_bits(&bits, resp.length, resp.width)
            .map_err(|e| CodecError::Protocol(e.to_string()))
    }

    fn decode(&self, frame: &FeatureFrame) -> Result<Sentence, CodecError> {
        self.check_width(frame.width())?;
        let resp: DecodeResponse = self.post(
            "/v1/decode",
            &DecodeRequest {
                bits: wire::pack_bits(&frame.to_bits()),
                width: frame.width(),
                length: frame.len(),
            },
        )?;
        Ok(Sentence::new(resp.sentence, 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc() -> Vocabulary {
        Vocabulary::from_words(["a", "b", "c"])
    }

    #[test]
    fn encodes_indices() {
        let f = encode(&Sentence::from_words("a b a c", 0), &abc());
        assert_eq!(f.features(), &[0x0002, 0x0003, 0x0002, 0x0004]);
        assert_eq!(f.width(), 16);
    }

    #[test]
    fn oov_encodes_as_unk() {
        let f = encode(&Sentence::from_words("a zzzz b c", 0), &abc());
        assert_eq!(f.features()[1], 0x0001);
    }

    #[test]
    fn decode_inverse_and_out_of_range() {
        let v = abc();
        let f = FeatureFrame::new(vec![0x0002, 0x0003], 16).unwrap();
        assert_eq!(decode(&f, &v).tokens, ["a", "b"]);
        let f = FeatureFrame::new(vec![0xFFFF, 0, 1], 16).unwrap();
        assert_eq!(decode(&f, &v).tokens, ["unk", "unk", "unk"]);
    }

    #[test]
    fn bit_flip_substitutes_a_word() {
        let v = Vocabulary::from_words(["first", "and", "crucial", "foremost"]);
        let s = Sentence::from_words("first and foremost", 0);
        let mut f = encode(&s, &v);
        // foremost = 5 (0b101), crucial = 4 (0b100): one flipped LSB.
        f.set(2, f.features()[2] ^ 1);
        assert_eq!(decode(&f, &v).tokens, ["first", "and", "crucial"]);
    }

    #[test]
    fn bits_round_trip_and_errors() {
        let f = FeatureFrame::new(vec![0x0002, 0x8001], 16).unwrap();
        let bits = f.to_bits();
        assert_eq!(bits.len(), 32);
        assert_eq!(
            &bits[..16],
            &[0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0]
        );
        assert_eq!(FeatureFrame::from_bits(&bits, 2, 16).unwrap(), f);
        let mut long = bits.clone();
        long.push(0);
        assert!(matches!(
            FeatureFrame::from_bits(&long, 2, 16),
            Err(CodecError::LengthMismatch {
                expected: 32,
                got: 33
            })
        ));
        assert!(matches!(
            FeatureFrame::from_bits(&[], 0, 16),
            Err(CodecError::EmptyFrame)
        ));
    }

    #[test]
    fn codec_ignores_everything_but_sentence_and_vocab() {
        let c = WordCodec::new(abc(), 16).unwrap();
        let s = Sentence::from_words("c b a a", 7);
        assert_eq!(c.encode(&s).unwrap(), c.encode(&s).unwrap());
        assert_eq!(c.decode(&c.encode(&s).unwrap()).unwrap().tokens, s.tokens);
    }

    #[test]
    fn exhaustive_round_trip_on_small_vocab() {
        let words = ["a", "b", "c", "d"];
        let v = Vocabulary::from_words(words);
        for n in 0..4usize.pow(4) {
            let toks: Vec<String> = (0..4)
                .map(|p| words[(n / 4usize.pow(p)) % 4].to_owned())
                .collect();
            let s = Sentence::new(toks, 0);
            assert_eq!(decode(&encode(&s, &v), &v).tokens, s.tokens);
        }
    }

    proptest::proptest! {
        #[test]
        fn bit_flips_stay_feature_local(
            idx in proptest::collection::vec(2u32..200, 4..30),
            flips in proptest::collection::vec(0usize..480, 1..6),
        ) {
            let f = FeatureFrame::new(idx, 16).unwrap();
            let mut bits = f.to_bits();
            let mut touched = std::collections::BTreeSet::new();
            for fl in flips {
                let b = fl % bits.len();
                bits[b] ^= 1;
                touched.insert(b / 16);
            }
            let g = FeatureFrame::from_bits(&bits, f.len(), 16).unwrap();
            for i in 0..f.len() {
                if !touched.contains(&i) {
                    proptest::prop_assert_eq!(f.features()[i], g.features()[i]);
                }
            }
        }

        #[test]
        fn bits_round_trip(idx in proptest::collection::vec(proptest::num::u32::ANY, 1..30), width in 1u8..=32) {
            let f = FeatureFrame::new(idx, width).unwrap();
            let g = FeatureFrame::from_bits(&f.to_bits(), f.len(), width).unwrap();
            proptest::prop_assert_eq!(f, g);
        }
    }
}
