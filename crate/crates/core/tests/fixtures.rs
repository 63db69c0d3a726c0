mod common;

use std::fs;
use std::time::Duration;

use common::{conformance_train, fixtures, s};
use semlink_core::codec::{CodecClient, SemanticCodec, WordCodec};
use semlink_core::conformance;
use semlink_core::dataset::{build_vocab, Vocabulary};
use semlink_core::oracle::{build_prompt, BigramOracle, ExamplePair, ReconRequest};
use semlink_core::phy;
use semlink_core::server::{self, ReferenceService};

fn tsv_rows(name: &str) -> Vec<Vec<String>> {
    fs::read_to_string(fixtures().join(name))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').map(str::to_owned).collect())
        .collect()
}

fn bits_of(label: &str) -> [u8; 4] {
    let b: Vec<u8> = label.bytes().map(|c| c - b'0').collect();
    [b[0], b[1], b[2], b[3]]
}

#[test]
fn constellation_table_matches_mapper() {
    let rows = tsv_rows("constellation_16qam.tsv");
    assert_eq!(rows.len(), 16);
    for row in rows {
        let p = phy::qam_point(bits_of(&row[0]));
        let re: f64 = row[1].parse().unwrap();
        let im: f64 = row[2].parse().unwrap();
        assert!(
            (p.re - re).abs() < 1e-15 && (p.im - im).abs() < 1e-15,
            "{row:?}"
        );
    }
}

#[test]
fn pilot_table_matches_pilot_sequence() {
    let rows = tsv_rows("pilot.tsv");
    let pilot = phy::pilot_sequence();
    assert_eq!(rows.len(), pilot.len());
    for (row, p) in rows.iter().zip(&pilot) {
        assert_eq!(bits_of(&row[1]), phy::PILOT_BITS);
        let re: f64 = row[2].parse().unwrap();
        let im: f64 = row[3].parse().unwrap();
        assert!((p.re - re).abs() < 1e-15 && (p.im - im).abs() < 1e-15);
    }
}

#[test]
fn prompt_fixtures_are_bit_exact() {
    let plain = fs::read_to_string(fixtures().join("prompts/plain.txt")).unwrap();
    let req = ReconRequest::plain(s("the council of unk met today"));
    assert_eq!(build_prompt(&req).unwrap(), plain);

    let prompted = fs::read_to_string(fixtures().join("prompts/prompted.txt")).unwrap();
    let examples = vec![
        ExamplePair {
            corrupted: s("the council of unk met today"),
            corrected: s("the council of ministers met today"),
        },
        ExamplePair {
            corrupted: s("the house will vote unk"),
            corrected: s("the house will vote tomorrow"),
        },
    ];
    let req = ReconRequest::prompted(
        s("the council of xyz met today"),
        "council report commission".into(),
        examples,
    );
    assert_eq!(build_prompt(&req).unwrap(), prompted);
}

#[test]
fn conformance_vocabulary_matches_builder() {
    let saved = Vocabulary::load(&fixtures().join("conformance/vocab.tsv")).unwrap();
    assert_eq!(saved, build_vocab(&conformance_train(), 65_534));
}

fn reference_server() -> server::ServerHandle {
    let vocab = Vocabulary::load(&fixtures().join("conformance/vocab.tsv")).unwrap();
    let service = ReferenceService::new(
        WordCodec::new(vocab, 16).unwrap(),
        Box::new(BigramOracle::new(&conformance_train())),
    );
    server::spawn(service, "127.0.0.1:0", 2).unwrap()
}

#[test]
fn golden_cases_pass_against_reference_server() {
    let cases = conformance::load_cases(&fixtures().join("conformance")).unwrap();
    assert_eq!(cases.len(), 11);
    let srv = reference_server();
    let outcomes = conformance::run(&srv.base_url(), &cases, Duration::from_secs(5));
    for o in &outcomes {
        assert!(o.passed, "{} {}: {}", o.route, o.name, o.detail);
    }
}

#[test]
fn golden_cases_detect_a_wrong_server() {
    let cases = conformance::load_cases(&fixtures().join("conformance")).unwrap();
    // A server with a different vocabulary must fail the exact cases.
    let service = ReferenceService::new(
        WordCodec::new(Vocabulary::from_words(["x", "y"]), 16).unwrap(),
        Box::new(BigramOracle::new(&conformance_train())),
    );
    let srv = server::spawn(service, "127.0.0.1:0", 1).unwrap();
    let outcomes = conformance::run(&srv.base_url(), &cases, Duration::from_secs(5));
    assert!(outcomes.iter().any(|o| !o.passed));
}

#[test]
fn external_codec_echoing_builtin_gives_identical_frames() {
    let d = common::data(500, 1000, 31);
    let builtin = d.codec.clone();
    let service =
        ReferenceService::new(d.codec.clone(), Box::new(BigramOracle::new(&d.split.train)));
    let srv = server::spawn(service, "127.0.0.1:0", 4).unwrap();
    let client = CodecClient::new(srv.base_url(), Duration::from_secs(5), 4).expect_width(16);
    for sentence in &d.split.test {
        let remote = client.encode(sentence).unwrap();
        assert_eq!(remote, builtin.encode(sentence).unwrap());
        assert_eq!(
            client.decode(&remote).unwrap(),
            builtin.decode(&remote).unwrap()
        );
    }
    assert_eq!(client.negotiated_width(), Some(16));
}
