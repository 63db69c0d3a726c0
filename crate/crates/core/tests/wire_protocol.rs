mod common;

use std::time::{Duration, Instant};

use common::{conformance_train, s, StubServer};
use semlink_core::codec::{CodecClient, CodecError, SemanticCodec, WordCodec};
use semlink_core::dataset::Vocabulary;
use semlink_core::oracle::{
    BigramOracle, ExamplePair, OracleError, ReconOracle, ReconRequest, ServiceOracle,
};
use semlink_core::server::{self, ReferenceService};
use semlink_core::FeatureFrame;

fn unused_port() -> String {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    drop(l);
    format!("http://{addr}")
}

#[test]
fn unreachable_endpoint_is_a_transport_error_within_timeout() {
    let timeout = Duration::from_secs(2);
    let client = CodecClient::new(unused_port(), timeout, 1);
    let start = Instant::now();
    let err = client.encode(&s("the house will vote")).unwrap_err();
    assert!(matches!(err, CodecError::Transport(_)), "{err:?}");
    assert!(start.elapsed() <= timeout + Duration::from_millis(500));
}

#[test]
fn slow_service_times_out() {
    let stub = StubServer::start(Box::new(|_, _, _| {
        std::thread::sleep(Duration::from_millis(1500));
        (200, r#"{"bits":"AAI=","width":16,"length":1}"#.into())
    }));
    let client = CodecClient::new(stub.url.clone(), Duration::from_millis(300), 1);
    let err = client.encode(&s("a")).unwrap_err();
    assert!(matches!(err, CodecError::Timeout(_)), "{err:?}");
}

#[test]
fn wrong_width_is_a_protocol_error() {
    let stub = StubServer::start(Box::new(|_, _, _| {
        (200, r#"{"bits":"Ag==","width":8,"length":1}"#.into())
    }));
    let client = CodecClient::new(stub.url.clone(), Duration::from_secs(2), 1).expect_width(16);
    let err = client.encode(&s("a")).unwrap_err();
    assert!(matches!(err, CodecError::Protocol(_)), "{err:?}");
}

#[test]
fn width_change_mid_session_is_a_protocol_error() {
    let calls = std::sync::atomic::AtomicUsize::new(0);
    let stub = StubServer::start(Box::new(move |_, _, _| {
        if calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst) == 0 {
            (200, r#"{"bits":"AAI=","width":16,"length":1}"#.into())
        } else {
            (200, r#"{"bits":"Ag==","width":8,"length":1}"#.into())
        }
    }));
    let client = CodecClient::new(stub.url.clone(), Duration::from_secs(2), 1);
    assert_eq!(client.encode(&s("a")).unwrap().features(), &[2]);
    assert_eq!(client.negotiated_width(), Some(16));
    assert!(matches!(
        client.encode(&s("a")),
        Err(CodecError::Protocol(_))
    ));
}

#[test]
fn malformed_bitstream_is_a_protocol_error() {
    let stub = StubServer::start(Box::new(|_, _, _| {
        (200, r#"{"bits":"AAIAAw==","width":16,"length":3}"#.into())
    }));
    let client = CodecClient::new(stub.url.clone(), Duration::from_secs(2), 1);
    assert!(matches!(
        client.encode(&s("a b c")),
        Err(CodecError::Protocol(_))
    ));
}

#[test]
fn version_header_is_sent_and_409_surfaces_as_protocol_error() {
    let stub = StubServer::start(Box::new(|_, headers, _| {
        let v = headers
            .iter()
            .find(|(k, _)| k == "x-semlink-protocol")
            .map(|(_, v)| v.clone());
        assert_eq!(v.as_deref(), Some("1"));
        (409, r#"{"error":"protocol version 1 unsupported"}"#.into())
    }));
    let client = CodecClient::new(stub.url.clone(), Duration::from_secs(2), 1);
    match client.encode(&s("a")) {
        Err(CodecError::Protocol(m)) => assert!(m.contains("version"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn encode_request_body_is_plain_word_list() {
    let stub = StubServer::start(Box::new(|path, _, body| {
        assert_eq!(path, "/v1/encode");
        let v: serde_json::Value = serde_json::from_slice(body).unwrap();
        assert_eq!(v, serde_json::json!({"sentence": ["a", "b"]}));
        (200, r#"{"bits":"AAIAAw==","width":16,"length":2}"#.into())
    }));
    let client = CodecClient::new(stub.url.clone(), Duration::from_secs(2), 1);
    assert_eq!(client.encode(&s("a b")).unwrap().features(), &[2, 3]);
}

#[test]
fn service_oracle_round_trip() {
    let vocab = Vocabulary::from_words(["the", "council"]);
    let service = ReferenceService::new(
        WordCodec::new(vocab, 16).unwrap(),
        Box::new(BigramOracle::new(&conformance_train())),
    );
    let srv = server::spawn(service, "127.0.0.1:0", 2).unwrap();
    let oracle = ServiceOracle::new(&srv.base_url(), Duration::from_secs(2), 2);
    let fixed = oracle
        .repair(&ReconRequest::plain(s(
            "first and crucial we thank the rapporteur",
        )))
        .unwrap();
    assert_eq!(
        fixed.sentence.text(),
        "first and foremost we thank the rapporteur"
    );
    let prompted = ReconRequest::prompted(
        s("the council of xyz met today"),
        "council".into(),
        vec![ExamplePair {
            corrupted: s("the house will vote unk"),
            corrected: s("the house will vote tomorrow"),
        }],
    );
    assert_eq!(
        oracle.repair(&prompted).unwrap().sentence.text(),
        "the council of ministers met today"
    );
}

#[test]
fn service_oracle_errors_are_distinct() {
    let oracle = ServiceOracle::new(&unused_port(), Duration::from_secs(1), 1);
    assert!(matches!(
        oracle.repair(&ReconRequest::plain(s("a b c d"))),
        Err(OracleError::Transport(_))
    ));
    let stub = StubServer::start(Box::new(|_, _, _| (200, "not json".into())));
    let oracle = ServiceOracle::new(&stub.url, Duration::from_secs(1), 1);
    assert!(matches!(
        oracle.repair(&ReconRequest::plain(s("a b c d"))),
        Err(OracleError::Protocol(_))
    ));
}

#[test]
fn decode_route_round_trips_frames() {
    let vocab = Vocabulary::from_words(["a", "b", "c"]);
    let service = ReferenceService::new(
        WordCodec::new(vocab.clone(), 16).unwrap(),
        Box::new(BigramOracle::new(&conformance_train())),
    );
    let srv = server::spawn(service, "127.0.0.1:0", 1).unwrap();
    let client = CodecClient::new(srv.base_url(), Duration::from_secs(2), 1);
    let frame = FeatureFrame::new(vec![2, 0xFFFF, 4, 3], 16).unwrap();
    assert_eq!(client.decode(&frame).unwrap().text(), "a unk c b");
}
