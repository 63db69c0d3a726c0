use std::time::{Duration, Instant};

use crate::dataset::Sentence;
use crate::util::Semaphore;
use crate::wire::{self, HttpError, ReconstructRequest, ReconstructResponse};

use super::{OracleError, ReconOracle, ReconRequest, ReconResponse, Strategy};

/// Client for an external `/v1/reconstruct` service.
#[derive(Debug)]
pub struct ServiceOracle {
    url: String,
    agent: ureq::Agent,
    in_flight: Semaphore,
    id: String,
}

impl ServiceOracle {
    pub fn new(base_url: &str, timeout: Duration, max_in_flight: usize) -> Self {
        let base = base_url.trim_end_matches('/');
        Self {
            url: format!("{base}/v1/reconstruct"),
            agent: wire::agent(timeout),
            in_flight: Semaphore::new(max_in_flight.max(1)),
            id: format!("service:{base}"),
        }
    }
}

/// Wire form of a reconstruction request.
pub fn to_wire(req: &ReconRequest) -> ReconstructRequest {
    let prompted = req.strategy == Strategy::Prompted;
    ReconstructRequest {
        sentence: req.sentence.tokens.clone(),
        strategy: req.strategy.wire_name().to_owned(),
        summary: if prompted { req.summary.clone() } else { None },
        examples: prompted.then(|| {
            req.examples
                .iter()
                .map(|e| wire::ExamplePair {
                    corrupted: e.corrupted.tokens.clone(),
                    corrected: e.corrected.tokens.clone(),
                })
                .collect()
        }),
    }
}

impl ReconOracle for ServiceOracle {
    fn id(&self) -> &str {
        &self.id
    }

    fn repair(&self, req: &ReconRequest) -> Result<ReconResponse, OracleError> {
        req.validate()?;
        let start = Instant::now();
        let _permit = self.in_flight.acquire();
        let resp: ReconstructResponse = wire::post_json(&self.agent, &self.url, &to_wire(req))
            .map_err(|e| match e {
                HttpError::Transport(m) => OracleError::Transport(m),
                HttpError::Timeout => OracleError::Timeout,
                HttpError::Status(429, _) => OracleError::RateLimited { attempts: 1 },
                HttpError::Status(code, m) => OracleError::Protocol(format!("HTTP {code}: {m}")),
                HttpError::Decode(m) => OracleError::Protocol(m),
            })?;
        let tokens: Vec<String> = resp
            .sentence
            .iter()
            .flat_map(|w| crate::dataset::tokenize(w))
            .collect();
        Ok(ReconResponse {
            sentence: Sentence::new(tokens, req.sentence.source_id),
            oracle_id: self.id.clone(),
            latency: start.elapsed(),
            flagged: false,
        })
    }
}
