//! Scoring, submission files and ablation tables.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::orchestrator::{RunTrace, TraceRecord};
use crate::prompting::NUM_OPTIONS;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("no ground truth for question {uid}")]
    MissingGroundTruth { uid: String },
    #[error("invalid ground truth: {0}")]
    InvalidGroundTruth(String),
}

/// Correct option per question.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GroundTruth(BTreeMap<String, u8>);

impl GroundTruth {
    pub fn new(answers: BTreeMap<String, u8>) -> Result<Self, EvalError> {
        if let Some((uid, idx)) = answers.iter().find(|(_, &i)| i as usize >= NUM_OPTIONS) {
            return Err(EvalError::InvalidGroundTruth(format!("{uid}: option {idx} out of range 0..=4")));
        }
        Ok(GroundTruth(answers))
    }

    /// Parses `{"uid": index, ...}`. Duplicate keys are rejected.
    pub fn from_json(raw: &[u8]) -> Result<Self, EvalError> {
        let pairs: Vec<(String, i64)> = serde_json::from_slice::<PairList>(raw)
            .map_err(|e| EvalError::InvalidGroundTruth(e.to_string()))?
            .0;
        let mut map = BTreeMap::new();
        for (uid, idx) in pairs {
            let idx = u8::try_from(idx).map_err(|_| EvalError::InvalidGroundTruth(format!("{uid}: option {idx} out of range 0..=4")))?;
            if map.insert(uid.clone(), idx).is_some() {
                return Err(EvalError::InvalidGroundTruth(format!("duplicate question_uid {uid}")));
            }
        }
        Self::new(map)
    }

    pub fn get(&self, uid: &str) -> Option<u8> {
        self.0.get(uid).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A JSON object read as an ordered list of pairs, so duplicates are visible.
struct PairList(Vec<(String, i64)>);

impl<'de> Deserialize<'de> for PairList {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> serde::de::Visitor<'de> for V {
            type Value = PairList;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("an object mapping question_uid to option index")
            }
            fn visit_map<A: serde::de::MapAccess<'de>>(self, mut m: A) -> Result<PairList, A::Error> {
                let mut v = Vec::new();
                while let Some(pair) = m.next_entry()? {
                    v.push(pair);
                }
                Ok(PairList(v))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub question_uid: String,
    pub predicted: Option<u8>,
    pub expected: u8,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub run_id: String,
    pub preset_name: String,
    pub n_total: usize,
    pub n_correct: usize,
    pub n_failed: usize,
    pub accuracy: f64,
    pub per_question: Vec<Verdict>,
}

/// Scores the final answers; failed questions count as incorrect.
pub fn compute_accuracy(trace: &RunTrace, gt: &GroundTruth) -> Result<EvalReport, EvalError> {
    let mut per_question = Vec::with_capacity(trace.records.len());
    let (mut n_correct, mut n_failed) = (0, 0);
    for rec in &trace.records {
        let uid = rec.question_uid();
        let expected = gt.get(uid).ok_or_else(|| EvalError::MissingGroundTruth { uid: uid.to_string() })?;
        let predicted = rec.outcome().map(|o| o.final_answer.option_index);
        let correct = predicted == Some(expected);
        n_correct += correct as usize;
        n_failed += predicted.is_none() as usize;
        per_question.push(Verdict { question_uid: uid.to_string(), predicted, expected, correct });
    }
    let n_total = per_question.len();
    Ok(EvalReport {
        run_id: trace.header.run_id.clone(),
        preset_name: trace.header.config.preset_name.clone(),
        n_total,
        n_correct,
        n_failed,
        accuracy: if n_total == 0 { 0.0 } else { n_correct as f64 / n_total as f64 },
        per_question,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub preset_name: String,
    pub accuracy: f64,
    /// Accuracy minus the previous row's; 0 for the first row.
    pub delta_vs_previous: f64,
}

impl AblationRow {
    /// Delta at three decimals, e.g. `0.024`; the first row shows `—`.
    pub fn delta_display(&self, first: bool) -> String {
        if first {
            "—".to_string()
        } else {
            format_3dp(self.delta_vs_previous)
        }
    }
}

/// Three-decimal rendering that never prints `-0.000`.
pub fn format_3dp(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

pub fn ablation_table(reports: &[EvalReport]) -> Vec<AblationRow> {
    let mut prev: Option<f64> = None;
    reports
        .iter()
        .map(|r| {
            let delta = prev.map_or(0.0, |p| r.accuracy - p);
            prev = Some(r.accuracy);
            AblationRow { preset_name: r.preset_name.clone(), accuracy: r.accuracy, delta_vs_previous: delta }
        })
        .collect()
}

pub fn render_ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<6} {:<10} {:>8}  {:>8}", "Order", "Preset", "Accuracy", "Delta");
    for (i, row) in rows.iter().enumerate() {
        let arrow = match (i, row.delta_vs_previous) {
            (0, _) => "",
            (_, d) if format_3dp(d) == "0.000" => "",
            (_, d) if d > 0.0 => "↑",
            _ => "↓",
        };
        let delta = if i == 0 { row.delta_display(true) } else { format_3dp(row.delta_vs_previous.abs()) };
        let _ = writeln!(out, "{:<6} {:<10} {:>8.3}  {:>8}{arrow}", i + 1, row.preset_name, row.accuracy, delta);
    }
    out
}

pub fn render_report(report: &EvalReport) -> String {
    format!(
        "run {} ({}): {}/{} correct, {} failed, accuracy {:.3}\n",
        report.run_id, report.preset_name, report.n_correct, report.n_total, report.n_failed, report.accuracy
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    /// `{"question_uid": option_index, ...}`, keys sorted.
    pub json: Vec<u8>,
    /// One line per question that fell back to the default index.
    pub warnings: Vec<String>,
}

pub fn emit_submission(trace: &RunTrace, fallback_index: u8) -> Submission {
    let mut answers = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    for rec in &trace.records {
        if !seen.insert(rec.question_uid()) {
            continue;
        }
        let idx = match rec {
            TraceRecord::Answered(o) => o.final_answer.option_index,
            TraceRecord::Failed(f) => {
                warnings.push(format!("{}: no answer ({}); submitted fallback option {fallback_index}", f.question_uid, f.cause));
                fallback_index
            }
        };
        answers.insert(rec.question_uid().to_string(), idx);
    }
    Submission { json: serde_json::to_vec(&answers).expect("map serializes"), warnings }
}
