#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;

use semlink_core::codec::WordCodec;
use semlink_core::dataset::{self, normalize, CorpusSplit, Sentence, Vocabulary};
use semlink_core::importance::{self, ClassifierModel, TrainConfig, TrainingExample};
use semlink_core::oracle::{BigramOracle, BigramTable};
use semlink_core::synth;
use semlink_core::util::derive_seed;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn s(text: &str) -> Sentence {
    Sentence::from_words(text, 0)
}

pub fn conformance_train() -> Vec<Sentence> {
    dataset::load_corpus(&fixtures().join("conformance/train.txt")).unwrap()
}

/// Normalized synthetic corpus of roughly `n_lines` accepted sentences.
pub fn synthetic_corpus(n_lines: usize, seed: u64) -> Vec<Sentence> {
    synth::generate_corpus(n_lines, seed)
        .iter()
        .enumerate()
        .filter_map(|(i, l)| normalize(l, i).ok())
        .collect()
}

/// Split, vocabulary and codec over a synthetic corpus.
pub struct Data {
    pub split: CorpusSplit,
    pub vocab: Vocabulary,
    pub codec: WordCodec,
}

pub fn data(n_train: usize, n_test: usize, seed: u64) -> Data {
    let corpus = synthetic_corpus((n_train + n_test) * 11 / 10 + 100, seed);
    let split = dataset::split(&corpus, n_train, n_test, seed).unwrap();
    let vocab = dataset::build_vocab(&split.train, 65_534);
    let codec = WordCodec::new(vocab.clone(), 16).unwrap();
    Data {
        split,
        vocab,
        codec,
    }
}

/// Everything the oracle-assisted methods need, trained with the default
/// classifier hyperparameters.
pub struct Desk {
    pub data: Data,
    pub mock: BigramOracle,
    pub bigrams: BigramTable,
    pub classifier: ClassifierModel,
    pub fit: Vec<TrainingExample>,
    pub holdout: Vec<TrainingExample>,
}

pub fn desk(n_train: usize, n_test: usize, seed: u64, passes: usize) -> Desk {
    let data = data(n_train, n_test, seed);
    let mock = BigramOracle::new(&data.split.train);
    let run = importance::label_corpus(&data.split.train, &data.codec, &mock, seed, passes);
    assert!(run.failures.is_empty());
    let labels: Vec<_> = run
        .records
        .iter()
        .map(|r| (r.sentence_id, r.feature_index, r.label))
        .collect();
    let examples = importance::training_examples(&labels, &data.split.train, &data.vocab);
    let mut fit = Vec::new();
    let mut holdout = Vec::new();
    for ((id, _, _), ex) in labels.iter().zip(examples) {
        if derive_seed(seed, &[*id as u64]).is_multiple_of(10) {
            holdout.push(ex);
        } else {
            fit.push(ex);
        }
    }
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let (classifier, _) = importance::train_classifier(&fit, data.vocab.len(), &cfg).unwrap();
    Desk {
        bigrams: BigramTable::from_sentences(&data.split.train),
        data,
        mock,
        classifier,
        fit,
        holdout,
    }
}

/// Minimal scripted HTTP server: `handler(path, headers, body) -> (status, body)`.
pub struct StubServer {
    pub url: String,
    server: Arc<tiny_http::Server>,
    worker: Option<JoinHandle<()>>,
}

pub type Handler = dyn Fn(&str, &[(String, String)], &[u8]) -> (u16, String) + Send + Sync;

impl StubServer {
    pub fn start(handler: Box<Handler>) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let url = format!("http://{}", server.server_addr().to_ip().unwrap());
        let srv = Arc::clone(&server);
        let worker = std::thread::spawn(move || {
            while let Ok(mut req) = srv.recv() {
                let headers: Vec<(String, String)> = req
                    .headers()
                    .iter()
                    .map(|h| {
                        (
                            h.field.as_str().as_str().to_ascii_lowercase(),
                            h.value.to_string(),
                        )
                    })
                    .collect();
                let mut body = Vec::new();
                req.as_reader().read_to_end(&mut body).unwrap();
                let (status, text) = handler(req.url(), &headers, &body);
                let _ =
                    req.respond(tiny_http::Response::from_string(text).with_status_code(status));
            }
        });
        Self {
            url,
            server,
            worker: Some(worker),
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
