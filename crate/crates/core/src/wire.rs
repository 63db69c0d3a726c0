//! JSON/HTTP message types shared by the codec and reconstruction services.
//!
//! Bitstreams travel as base64 of the big-endian bit sequence, zero-padded to
//! a whole number of bytes.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

/// Protocol version sent with every request.
pub const PROTOCOL_VERSION: &str = "1";
pub const PROTOCOL_HEADER: &str = "x-semlink-protocol";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeRequest {
    pub sentence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub bits: String,
    pub width: u8,
    pub length: usize,
}

pub type DecodeRequest = EncodeResponse;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeResponse {
    pub sentence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub corrupted: Vec<String>,
    pub corrected: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconstructRequest {
    pub sentence: Vec<String>,
    pub strategy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub examples: Option<Vec<ExamplePair>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconstructResponse {
    pub sentence: Vec<String>,
}

/// Packs 0/1 bits MSB-first into bytes and base64-encodes them.
pub fn pack_bits(bits: &[u8]) -> String {
    let bytes: Vec<u8> = bits
        .chunks(8)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | ((b & 1) << (7 - i)))
        })
        .collect();
    STANDARD.encode(bytes)
}

/// Inverse of [`pack_bits`]. Padding bits beyond `n_bits` must be zero.
pub fn unpack_bits(encoded: &str, n_bits: usize) -> Result<Vec<u8>, String> {
    let bytes = STANDARD
        .decode(encoded)
        .map_err(|e| format!("invalid base64 bitstream: {e}"))?;
    if bytes.len() != n_bits.div_ceil(8) {
        return Err(format!(
            "bitstream carries {} bytes, expected {} for {n_bits} bits",
            bytes.len(),
            n_bits.div_ceil(8)
        ));
    }
    let mut bits: Vec<u8> = bytes
        .iter()
        .flat_map(|&byte| (0..8).rev().map(move |i| (byte >> i) & 1))
        .collect();
    if bits[n_bits..].iter().any(|&b| b != 0) {
        return Err("nonzero padding bits".into());
    }
    bits.truncate(n_bits);
    Ok(bits)
}

#[derive(Debug)]
pub(crate) enum HttpError {
    Transport(String),
    Timeout,
    Status(u16, String),
    Decode(String),
}

pub(crate) fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

pub(crate) fn post_json<Req: Serialize, Resp: serde::de::DeserializeOwned>(
    agent: &ureq::Agent,
    url: &str,
    body: &Req,
) -> Result<Resp, HttpError> {
    post_json_with(agent, url, body, &[]).map(|(v, _)| v)
}

/// POSTs `body` and decodes a JSON reply. Non-2xx statuses come back as
/// [`HttpError::Status`] together with the response text.
pub(crate) fn post_json_with<Req: Serialize, Resp: serde::de::DeserializeOwned>(
    agent: &ureq::Agent,
    url: &str,
    body: &Req,
    headers: &[(&str, String)],
) -> Result<(Resp, u16), HttpError> {
    let mut req = agent.post(url).header(PROTOCOL_HEADER, PROTOCOL_VERSION);
    for (k, v) in headers {
        req = req.header(*k, v.as_str());
    }
    let mut resp = req.send_json(body).map_err(classify)?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(classify)?;
    if !(200..300).contains(&status) {
        return Err(HttpError::Status(status, text));
    }
    serde_json::from_str(&text)
        .map(|v| (v, status))
        .map_err(|e| HttpError::Decode(format!("malformed reply: {e}")))
}

fn classify(e: ureq::Error) -> HttpError {
    match e {
        ureq::Error::Timeout(_) => HttpError::Timeout,
        ureq::Error::Io(ref io)
            if matches!(
                io.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            ) =>
        {
            HttpError::Timeout
        }
        other => HttpError::Transport(other.to_string()),
    }
}
