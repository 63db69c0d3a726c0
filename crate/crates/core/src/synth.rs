//! Deterministic generator of parliamentary-debate style sentences.
//!
//! Sentences come from templates whose fixed phrases are highly predictable
//! from their neighbours while the slot fillers (topics, groups, countries,
//! verbs) are not. Output is raw text with capitalization and punctuation,
//! meant to be fed through [`crate::dataset::normalize`]. A small share of
//! lines is deliberately too short or too long.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TEMPLATES: &[&str] = &[
    "{OPEN}, there is a message for the council of ministers.",
    "Let me also remind you that over {NUM}% of that budget is spent on projects that benefit {GROUP}.",
    "They have made and are making considerable efforts in the fight against {CRIME} and {CRIME}.",
    "{SUBJ} {MODAL} {VERB} {DOC} on {TOPIC} {TIME}.",
    "I would like to thank the rapporteur for {POSS} excellent work on {TOPIC}.",
    "It is {ADJ} that {SUBJ} {MODAL} {VERB} {DOC}.",
    "The debate is closed and the vote will take place {TIME}.",
    "We need a {ADJ} policy on {TOPIC} for the benefit of {GROUP}.",
    "This is why my group voted in favour of {DOC} on {TOPIC}.",
    "The situation in {COUNTRY} remains {ADJ} and requires our full attention.",
    "I am pleased that the {BODY} has accepted our amendments on {TOPIC}.",
    "We cannot accept that {GROUP} pay the price for the {CRISIS}.",
    "Madam President, the question of {TOPIC} is {ADJ} for {GROUP} in {COUNTRY}.",
    "Our citizens expect concrete results and not just words.",
    "The {BODY} should present a proposal on {TOPIC} as soon as possible.",
    "I should like to draw your attention to the problem of {TOPIC} in {COUNTRY}.",
    "We must ensure that {GROUP} have access to {SERVICE}.",
    "Mr President, {OPEN} I want to congratulate the rapporteur on this report.",
    "{SUBJ} {MODAL} {VERB} the {ADJ} role of {GROUP} in {TOPIC}.",
    "The {CRISIS} has shown that we need more cooperation between member states.",
    "In {COUNTRY}, {GROUP} are still waiting for the funds promised by the {BODY}.",
    "That is why we call on the {BODY} to {VERB} {DOC} {TIME}.",
    "I fully agree with the previous speaker on the issue of {TOPIC}.",
    "The report adopted by the committee on {TOPIC} deserves our support.",
    "Over {NUM}% of {GROUP} in {COUNTRY} are affected by the {CRISIS}.",
    "We welcome the agreement reached with the council on {TOPIC}.",
    "{OPEN}, we have to listen to {GROUP} and to their representatives.",
    "I voted against this report because it does not address {TOPIC}.",
];

fn slot(name: &str) -> &'static [&'static str] {
    match name {
        "OPEN" => &[
            "first and foremost",
            "above all",
            "once again",
            "in addition",
            "of course",
            "at the same time",
            "on the other hand",
            "finally",
        ],
        "SUBJ" => &[
            "we",
            "the commission",
            "the council",
            "this parliament",
            "the member states",
            "our group",
            "the european union",
            "the presidency",
        ],
        "MODAL" => &["must", "should", "cannot", "will", "would like to"],
        "VERB" => &[
            "support",
            "reject",
            "welcome",
            "examine",
            "strengthen",
            "protect",
            "promote",
            "reform",
            "discuss",
            "finance",
            "review",
            "adopt",
            "improve",
            "defend",
        ],
        "DOC" => &[
            "the proposal",
            "this report",
            "the budget",
            "the agreement",
            "the directive",
            "the regulation",
            "the strategy",
            "the programme",
            "the resolution",
            "the action plan",
        ],
        "TOPIC" => &[
            "fisheries",
            "agriculture",
            "energy",
            "transport",
            "employment",
            "immigration",
            "security",
            "climate change",
            "human rights",
            "consumer protection",
            "public health",
            "research",
            "competition",
            "the internal market",
            "regional development",
            "food safety",
        ],
        "GROUP" => &[
            "member states",
            "small businesses",
            "young people",
            "farmers",
            "workers",
            "consumers",
            "citizens",
            "the regions",
            "developing countries",
            "local authorities",
            "women",
            "pensioners",
        ],
        "CRIME" => &[
            "corruption",
            "organized crime",
            "terrorism",
            "fraud",
            "money laundering",
            "tax evasion",
            "piracy",
        ],
        "NUM" => &["10", "20", "25", "40", "50", "75", "90"],
        "ADJ" => &[
            "important",
            "essential",
            "serious",
            "clear",
            "difficult",
            "necessary",
            "urgent",
            "fundamental",
        ],
        "BODY" => &["council", "commission", "court", "committee", "parliament"],
        "TIME" => &[
            "today",
            "tomorrow",
            "this week",
            "next year",
            "without delay",
            "in the coming months",
        ],
        "POSS" => &["her", "his", "their"],
        "COUNTRY" => &[
            "greece", "portugal", "ireland", "poland", "italy", "spain", "belarus", "turkey",
            "ukraine", "cyprus",
        ],
        "CRISIS" => &[
            "financial crisis",
            "economic crisis",
            "energy crisis",
            "food crisis",
            "migration crisis",
        ],
        "SERVICE" => &[
            "education",
            "health care",
            "clean water",
            "public transport",
            "the labour market",
            "affordable housing",
        ],
        _ => &[],
    }
}

fn fill<R: Rng + ?Sized>(template: &str, rng: &mut R) -> String {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let close = open + rest[open..].find('}').expect("unterminated slot");
        let name = &rest[open + 1..close];
        out.push_str(slot(name).choose(rng).copied().unwrap_or(name));
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    capitalize(&out)
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// `n_lines` raw corpus lines, a pure function of `seed`.
pub fn generate_corpus(n_lines: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_lines)
        .map(|_| {
            let roll: f64 = rng.random();
            if roll < 0.01 {
                ["Thank you.", "Yes. No.", "Very good!", "(Applause)"]
                    .choose(&mut rng)
                    .unwrap()
                    .to_string()
            } else if roll < 0.02 {
                let a = fill(TEMPLATES.choose(&mut rng).unwrap(), &mut rng);
                let b = fill(TEMPLATES.choose(&mut rng).unwrap(), &mut rng);
                let c = fill(TEMPLATES.choose(&mut rng).unwrap(), &mut rng);
                format!("{a} {b} {c}")
            } else {
                fill(TEMPLATES.choose(&mut rng).unwrap(), &mut rng)
            }
        })
        .collect()
}
