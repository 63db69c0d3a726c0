//! Chat-completion client with a content-addressed response cache.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::dataset::{tokenize, Sentence};
use crate::util::Semaphore;
use crate::wire::{self, HttpError};

use super::{build_prompt, OracleError, ReconOracle, ReconRequest, ReconResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    /// Full URL of the chat-completion endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub token_env: String,
    pub cache_dir: PathBuf,
    pub timeout: Duration,
    /// Attempts after the first one when rate limited.
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_in_flight: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            token_env: "SEMLINK_LLM_TOKEN".into(),
            cache_dir: PathBuf::from("llm-cache"),
            timeout: Duration::from_secs(60),
            max_retries: 5,
            initial_backoff: Duration::from_millis(500),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    model: String,
    prompt: String,
    reply: String,
}

#[derive(Debug, Deserialize)]
struct ChatReply {
    #[serde(default)]
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: Option<ChatMessage>,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug)]
pub struct LlmOracle {
    cfg: LlmConfig,
    agent: ureq::Agent,
    in_flight: Semaphore,
    id: String,
    network_calls: AtomicU64,
    retries: AtomicU64,
}

impl LlmOracle {
    pub fn new(cfg: LlmConfig) -> Result<Self, OracleError> {
        fs::create_dir_all(&cfg.cache_dir)?;
        Ok(Self {
            agent: wire::agent(cfg.timeout),
            in_flight: Semaphore::new(cfg.max_in_flight.max(1)),
            id: format!("llm:{}", cfg.model),
            cfg,
            network_calls: AtomicU64::new(0),
            retries: AtomicU64::new(0),
        })
    }

    /// HTTP requests sent so far, retries included.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::Relaxed)
    }

    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    fn cache_path(&self, prompt: &str) -> PathBuf {
        let mut h = Sha256::new();
        h.update(self.cfg.model.as_bytes());
        h.update([0u8]);
        h.update(prompt.as_bytes());
        let digest: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        self.cfg.cache_dir.join(format!("{digest}.json"))
    }

    fn read_cache(path: &Path) -> Option<String> {
        let text = fs::read_to_string(path).ok()?;
        serde_json::from_str::<CacheEntry>(&text)
            .ok()
            .map(|e| e.reply)
    }

    fn write_cache(&self, path: &Path, prompt: &str, reply: &str) -> Result<(), OracleError> {
        let entry = CacheEntry {
            model: self.cfg.model.clone(),
            prompt: prompt.to_owned(),
            reply: reply.to_owned(),
        };
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        fs::write(
            &tmp,
            serde_json::to_vec_pretty(&entry).map_err(std::io::Error::other)?,
        )?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Sends the prompt, retrying with exponential backoff on HTTP 429.
    /// Returns `None` when the reply carries no usable text.
    fn fetch(&self, prompt: &str) -> Result<Option<String>, OracleError> {
        let _permit = self.in_flight.acquire();
        let body = json!({
            "model": self.cfg.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut headers = Vec::new();
        if let Ok(token) = std::env::var(&self.cfg.token_env) {
            headers.push(("authorization", format!("Bearer {token}")));
        }
        let mut backoff = self.cfg.initial_backoff;
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            self.network_calls.fetch_add(1, Ordering::Relaxed);
            match wire::post_json_with::<_, ChatReply>(
                &self.agent,
                &self.cfg.endpoint,
                &body,
                &headers,
            ) {
                Ok((reply, _)) => {
                    if attempt > 1 {
                        log::info!("llm reply after {} retries", attempt - 1);
                    }
                    let text = reply
                        .choices
                        .into_iter()
                        .next()
                        .and_then(|c| c.message)
                        .and_then(|m| m.content)
                        .filter(|c| !c.trim().is_empty());
                    return Ok(text);
                }
                Err(HttpError::Status(429, _)) if attempt <= self.cfg.max_retries => {
                    self.retries.fetch_add(1, Ordering::Relaxed);
                    log::warn!("rate limited (attempt {attempt}), backing off {backoff:?}");
                    std::thread::sleep(backoff);
                    backoff = backoff.saturating_mul(2);
                }
                Err(HttpError::Status(429, _)) => {
                    return Err(OracleError::RateLimited { attempts: attempt })
                }
                Err(HttpError::Status(code, msg)) => {
                    return Err(OracleError::Transport(format!("HTTP {code}: {msg}")))
                }
                Err(HttpError::Transport(m)) => return Err(OracleError::Transport(m)),
                Err(HttpError::Timeout) => return Err(OracleError::Timeout),
                Err(HttpError::Decode(_)) => return Ok(None),
            }
        }
    }
}

impl ReconOracle for LlmOracle {
    fn id(&self) -> &str {
        &self.id
    }

    fn repair(&self, req: &ReconRequest) -> Result<ReconResponse, OracleError> {
        let start = Instant::now();
        let prompt = build_prompt(req)?;
        let path = self.cache_path(&prompt);
        let reply = match Self::read_cache(&path) {
            Some(r) => Some(r),
            None => {
                let fetched = self.fetch(&prompt)?;
                if let Some(r) = &fetched {
                    self.write_cache(&path, &prompt, r)?;
                }
                fetched
            }
        };
        let tokens = reply.as_deref().map(tokenize).unwrap_or_default();
        let (tokens, flagged) = if tokens.is_empty() {
            log::warn!("malformed oracle reply; echoing input");
            (req.sentence.tokens.clone(), true)
        } else {
            (tokens, false)
        };
        Ok(ReconResponse {
            sentence: Sentence::new(tokens, req.sentence.source_id),
            oracle_id: self.id.clone(),
            latency: start.elapsed(),
            flagged,
        })
    }
}
