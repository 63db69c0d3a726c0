//! Reference implementation of the `/v1/encode`, `/v1/decode` and
//! `/v1/reconstruct` routes, backed by the built-in codec and an offline
//! oracle. Useful as a local stand-in for an external service and as the
//! target the conformance harness is validated against.

use std::io::Read;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::codec::{FeatureFrame, SemanticCodec, WordCodec};
use crate::dataset::Sentence;
use crate::oracle::{ExamplePair, ReconOracle, ReconRequest, Strategy};
use crate::wire::{
    self, DecodeRequest, DecodeResponse, EncodeRequest, EncodeResponse, ReconstructRequest,
    ReconstructResponse, PROTOCOL_HEADER, PROTOCOL_VERSION,
};

/// Largest request body accepted, in bytes.
pub const MAX_BODY: usize = 1 << 20;

pub struct ReferenceService {
    codec: WordCodec,
    oracle: Box<dyn ReconOracle>,
}

/// Status code and JSON body of a reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub status: u16,
    pub body: String,
}

impl Reply {
    fn json<T: serde::Serialize>(value: &T) -> Self {
        Self {
            status: 200,
            body: serde_json::to_string(value).expect("reply serializes"),
        }
    }

    fn error(status: u16, message: impl std::fmt::Display) -> Self {
        Self {
            status,
            body: serde_json::json!({ "error": message.to_string() }).to_string(),
        }
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, Reply> {
    serde_json::from_slice(body).map_err(|e| Reply::error(400, format!("malformed request: {e}")))
}

fn sentence(words: Vec<String>) -> Sentence {
    Sentence::new(words, 0)
}

impl ReferenceService {
    pub fn new(codec: WordCodec, oracle: Box<dyn ReconOracle>) -> Self {
        Self { codec, oracle }
    }

    /// Routes one request. `version` is the value of the protocol header, if sent.
    pub fn handle(&self, method: &str, path: &str, version: Option<&str>, body: &[u8]) -> Reply {
        if method != "POST" {
            return Reply::error(405, "only POST is supported");
        }
        if let Some(v) = version {
            if v != PROTOCOL_VERSION {
                return Reply::error(
                    409,
                    format!("protocol version {v} unsupported (server speaks {PROTOCOL_VERSION})"),
                );
            }
        }
        let result = match path {
            "/v1/encode" => self.encode(body),
            "/v1/decode" => self.decode(body),
            "/v1/reconstruct" => self.reconstruct(body),
            _ => Err(Reply::error(404, format!("no route {path}"))),
        };
        result.unwrap_or_else(|r| r)
    }

    fn encode(&self, body: &[u8]) -> Result<Reply, Reply> {
        let req: EncodeRequest = parse(body)?;
        let frame = self
            .codec
            .encode(&sentence(req.sentence))
            .map_err(|e| Reply::error(400, e))?;
        Ok(Reply::json(&EncodeResponse {
            bits: wire::pack_bits(&frame.to_bits()),
            width: frame.width(),
            length: frame.len(),
        }))
    }

    fn decode(&self, body: &[u8]) -> Result<Reply, Reply> {
        let req: DecodeRequest = parse(body)?;
        if req.width != self.codec.width() {
            return Err(Reply::error(
                400,
                format!(
                    "width {} unsupported (server uses {})",
                    req.width,
                    self.codec.width()
                ),
            ));
        }
        let bits = wire::unpack_bits(&req.bits, req.length * req.width as usize)
            .map_err(|e| Reply::error(400, e))?;
        let frame = FeatureFrame::from_bits(&bits, req.length, req.width)
            .map_err(|e| Reply::error(400, e))?;
        let s = self
            .codec
            .decode(&frame)
            .map_err(|e| Reply::error(400, e))?;
        Ok(Reply::json(&DecodeResponse { sentence: s.tokens }))
    }

    fn reconstruct(&self, body: &[u8]) -> Result<Reply, Reply> {
        let req: ReconstructRequest = parse(body)?;
        let strategy: Strategy = req
            .strategy
            .parse()
            .map_err(|e: String| Reply::error(400, e))?;
        let recon = ReconRequest {
            sentence: sentence(req.sentence),
            strategy,
            summary: req.summary,
            examples: req
                .examples
                .unwrap_or_default()
                .into_iter()
                .map(|p| ExamplePair {
                    corrupted: sentence(p.corrupted),
                    corrected: sentence(p.corrected),
                })
                .collect(),
        };
        let resp = self.oracle.repair(&recon).map_err(|e| match e {
            crate::oracle::OracleError::InvalidRequest(m) => Reply::error(400, m),
            other => Reply::error(503, other),
        })?;
        Ok(Reply::json(&ReconstructResponse {
            sentence: resp.sentence.tokens,
        }))
    }
}

/// A server running on background threads; stops when dropped.
pub struct ServerHandle {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    workers: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.server.unblock();
        for _ in 1..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and serves with `threads` workers.
pub fn spawn(
    service: ReferenceService,
    addr: &str,
    threads: usize,
) -> Result<ServerHandle, std::io::Error> {
    let server = tiny_http::Server::http(addr).map_err(std::io::Error::other)?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| std::io::Error::other("server is not bound to an IP address"))?;
    let server = Arc::new(server);
    let service = Arc::new(service);
    let workers = (0..threads.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let service = Arc::clone(&service);
            std::thread::spawn(move || {
                while let Ok(mut req) = server.recv() {
                    let reply = respond(&service, &mut req);
                    let header = tiny_http::Header::from_bytes("Content-Type", "application/json")
                        .expect("static header");
                    let resp = tiny_http::Response::from_string(reply.body)
                        .with_status_code(reply.status)
                        .with_header(header);
                    if let Err(e) = req.respond(resp) {
                        log::debug!("client went away: {e}");
                    }
                }
            })
        })
        .collect();
    Ok(ServerHandle {
        addr,
        server,
        workers,
    })
}

fn respond(service: &ReferenceService, req: &mut tiny_http::Request) -> Reply {
    let version = req
        .headers()
        .iter()
        .find(|h| h.field.equiv(PROTOCOL_HEADER))
        .map(|h| h.value.as_str().to_owned());
    let mut body = Vec::new();
    if let Err(e) = req
        .as_reader()
        .take(MAX_BODY as u64 + 1)
        .read_to_end(&mut body)
    {
        return Reply::error(400, format!("unreadable body: {e}"));
    }
    if body.len() > MAX_BODY {
        return Reply::error(413, "request body too large");
    }
    let method = req.method().as_str().to_owned();
    let path = req.url().split('?').next().unwrap_or_default().to_owned();
    service.handle(&method, &path, version.as_deref(), &body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Vocabulary;
    use crate::oracle::BigramOracle;

    fn service() -> ReferenceService {
        let codec = WordCodec::new(Vocabulary::from_words(["a", "b", "c"]), 16).unwrap();
        let train = vec![Sentence::from_words("a b c a", 0)];
        ReferenceService::new(codec, Box::new(BigramOracle::new(&train)))
    }

    #[test]
    fn encode_route_matches_direct_packing() {
        let r = service().handle(
            "POST",
            "/v1/encode",
            Some("1"),
            br#"{"sentence":["a","b"]}"#,
        );
        assert_eq!(r.status, 200);
        // 0x0002 0x0003 -> bytes 00 02 00 03
        assert_eq!(r.body, r#"{"bits":"AAIAAw==","width":16,"length":2}"#);
    }

    #[test]
    fn version_mismatch_is_409() {
        let r = service().handle("POST", "/v1/encode", Some("7"), br#"{"sentence":["a"]}"#);
        assert_eq!(r.status, 409);
    }

    #[test]
    fn bad_requests() {
        let s = service();
        assert_eq!(s.handle("POST", "/v1/encode", None, b"{").status, 400);
        assert_eq!(s.handle("GET", "/v1/encode", None, b"").status, 405);
        assert_eq!(s.handle("POST", "/v2/encode", None, b"{}").status, 404);
        let wrong_width = br#"{"bits":"AA==","width":8,"length":1}"#;
        assert_eq!(
            s.handle("POST", "/v1/decode", None, wrong_width).status,
            400
        );
        let prompted_bare = br#"{"sentence":["a","b"],"strategy":"prompted"}"#;
        assert_eq!(
            s.handle("POST", "/v1/reconstruct", None, prompted_bare)
                .status,
            400
        );
    }
}
