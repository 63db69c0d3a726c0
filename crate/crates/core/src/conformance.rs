//! Golden-file conformance checks for services speaking the wire protocol.
//!
//! A case file is a JSON array of `{name, route, request, response, exact}`.
//! Exact cases compare the reply to `response` as JSON values; the others
//! only check that the reply has the same shape (same keys, same JSON types),
//! which is what a model-backed `/v1/reconstruct` can promise.

use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::Deserialize;
use serde_json::Value;

use crate::wire::{self, HttpError};

pub const CASE_FILES: [&str; 3] = ["encode.json", "decode.json", "reconstruct.json"];

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct GoldenCase {
    pub name: String,
    pub route: String,
    pub request: Value,
    pub response: Value,
    #[serde(default = "yes")]
    pub exact: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseOutcome {
    pub name: String,
    pub route: String,
    pub passed: bool,
    pub detail: String,
}

/// Reads every case file present in `dir`, in [`CASE_FILES`] order.
pub fn load_cases(dir: &Path) -> Result<Vec<GoldenCase>, String> {
    let mut cases = Vec::new();
    for file in CASE_FILES {
        let path = dir.join(file);
        if !path.is_file() {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut parsed: Vec<GoldenCase> =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        cases.append(&mut parsed);
    }
    if cases.is_empty() {
        return Err(format!("no golden cases found in {}", dir.display()));
    }
    Ok(cases)
}

/// Same keys and JSON types, recursively (arrays compare element types only).
pub fn same_shape(expected: &Value, actual: &Value) -> bool {
    match (expected, actual) {
        (Value::Object(e), Value::Object(a)) => {
            e.len() == a.len()
                && e.iter()
                    .all(|(k, ev)| a.get(k).is_some_and(|av| same_shape(ev, av)))
        }
        (Value::Array(e), Value::Array(a)) => match e.first() {
            Some(proto) => a.iter().all(|av| same_shape(proto, av)),
            None => true,
        },
        (Value::Null, Value::Null) | (Value::Bool(_), Value::Bool(_)) => true,
        (Value::Number(_), Value::Number(_)) | (Value::String(_), Value::String(_)) => true,
        _ => false,
    }
}

/// Runs every case against `base_url`.
pub fn run(base_url: &str, cases: &[GoldenCase], timeout: Duration) -> Vec<CaseOutcome> {
    let agent = wire::agent(timeout);
    let base = base_url.trim_end_matches('/');
    cases
        .iter()
        .map(|case| {
            let url = format!("{base}{}", case.route);
            let (passed, detail) =
                match wire::post_json::<Value, Value>(&agent, &url, &case.request) {
                    Ok(reply) if case.exact && reply == case.response => (true, String::new()),
                    Ok(reply) if !case.exact && same_shape(&case.response, &reply) => {
                        (true, String::new())
                    }
                    Ok(reply) => (false, format!("expected {}, got {reply}", case.response)),
                    Err(HttpError::Status(code, body)) => (false, format!("HTTP {code}: {body}")),
                    Err(HttpError::Timeout) => (false, "timed out".into()),
                    Err(HttpError::Transport(m) | HttpError::Decode(m)) => (false, m),
                };
            CaseOutcome {
                name: case.name.clone(),
                route: case.route.clone(),
                passed,
                detail,
            }
        })
        .collect()
}
