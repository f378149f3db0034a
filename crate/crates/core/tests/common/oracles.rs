//! Hand-written reference implementations the library is checked against.

use proptest::prelude::*;

/// Hand-written dedup-then-prefix reference.
pub fn reference_select(variants: &[String], k: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for v in variants {
        if out.len() == k {
            break;
        }
        if !out.iter().any(|o| o.trim() == v.trim()) {
            out.push(v.clone());
        }
    }
    out
}

pub fn variant_lists(clips: usize) -> impl Strategy<Value = Vec<Vec<String>>> {
    prop::collection::vec(prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", " a", "e f", "g"]), 1..=5), clips)
        .prop_map(|cl| cl.into_iter().map(|v| v.into_iter().map(String::from).collect()).collect())
}

/// Line-oriented reference for documents whose field labels start lines.
pub fn reference_parse(doc: &str) -> (Option<u8>, Option<u8>, String) {
    let (mut answer, mut confidence, mut reason) = (None, None, None::<Vec<String>>);
    let mut in_reason = false;
    for line in doc.lines() {
        let lower = line.to_ascii_lowercase();
        let value = |label: &str| -> Option<String> {
            let rest = lower.strip_prefix(label)?.trim_start();
            let rest = rest.strip_prefix(':').or_else(|| rest.strip_prefix('='))?;
            Some(line[line.len() - rest.len()..].trim().to_string())
        };
        if let Some(v) = value("answer") {
            in_reason = false;
            if v.len() == 1 && matches!(v.as_bytes()[0], b'0'..=b'4') {
                answer = Some(v.parse().unwrap());
            }
        } else if let Some(v) = value("confidence") {
            in_reason = false;
            if let Ok(c) = v.parse::<u8>() {
                if c <= 10 && !v.starts_with('0') || v == "0" {
                    confidence = Some(c);
                }
            }
        } else if let Some(v) = value("reason") {
            in_reason = true;
            reason = Some(vec![v]);
        } else if in_reason {
            reason.as_mut().unwrap().push(line.trim().to_string());
        }
    }
    let reason = reason.map(|r| r.join("\n").trim().to_string()).unwrap_or_default();
    (answer, confidence, reason)
}

fn label(name: &'static str) -> impl Strategy<Value = String> {
    (prop::sample::select(vec![":", " :", "=", ": "]), any::<bool>())
        .prop_map(move |(sep, upper)| format!("{}{sep}", if upper { name.to_uppercase() } else { name.to_string() }))
}

fn noise() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["the", "person", "cuts", "onions", "then", "option", "likely", "C", "maybe"]), 1..6)
        .prop_map(|w| w.join(" "))
}

fn line() -> impl Strategy<Value = String> {
    prop_oneof![
        (label("answer"), 0u8..8).prop_map(|(l, v)| format!("{l}{v}")),
        (label("confidence"), 0u8..13).prop_map(|(l, v)| format!("{l}{v}")),
        (label("reason"), noise()).prop_map(|(l, v)| format!("{l}{v}")),
        noise(),
    ]
}

/// Documents of 0..10 lines mixing labelled fields and prose.
pub fn doc_lines() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(line(), 0..10)
}
