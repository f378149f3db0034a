//! Prompt rendering for summarization, answering and reflection.
//!
//! Rendering is a pure function of the template text and the inputs, so the
//! resulting digests are stable across runs and machines and can key the
//! response cache.

mod icl;
mod template;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use icl::{IclExample, IclKind, IclLibrary};
pub use template::{PromptTemplate, TemplateName, TemplateSet, ICL_SLOT};

use crate::caption_store::SelectedCaptions;
use crate::digest::Digest;
use crate::stages::AnswerRecord;

pub const NUM_OPTIONS: usize = 5;

/// Appended to a prompt when the previous reply could not be parsed.
pub const FORMAT_REMINDER: &str = "\n\nReminder: your reply could not be read. Reply again and end it with exactly these three lines:\nReason: <reasoning>\nAnswer: <0-4>\nConfidence: <0-10>";

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("nothing to render: the caption selection is empty")]
    EmptyInput,
    #[error("prompt configuration error: {0}")]
    Config(String),
    #[error("template `{name}`: {message}")]
    Template { name: TemplateName, message: String },
    #[error("invalid question: {0}")]
    Question(String),
    #[error("invalid in-context example: {0}")]
    Example(String),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    /// Summary and answer produced by one completion.
    OnePhase,
    /// Summarize first, answer from captions plus summary second.
    TwoPhase,
}

/// A five-option multiple-choice question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawQuestion")]
pub struct Question {
    pub question_uid: String,
    pub stem: String,
    pub options: [String; NUM_OPTIONS],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuestion {
    question_uid: String,
    stem: String,
    options: Vec<String>,
}

impl TryFrom<RawQuestion> for Question {
    type Error = PromptError;

    fn try_from(raw: RawQuestion) -> Result<Self, Self::Error> {
        Question::new(raw.question_uid, raw.stem, raw.options)
    }
}

impl Question {
    pub fn new(uid: impl Into<String>, stem: impl Into<String>, options: Vec<String>) -> Result<Self, PromptError> {
        let uid = uid.into();
        if uid.trim().is_empty() {
            return Err(PromptError::Question("question_uid is empty".into()));
        }
        let n = options.len();
        let options: [String; NUM_OPTIONS] = options
            .try_into()
            .map_err(|_| PromptError::Question(format!("{uid}: expected {NUM_OPTIONS} options, found {n}")))?;
        if let Some(i) = options.iter().position(|o| o.trim().is_empty()) {
            return Err(PromptError::Question(format!("{uid}: option {i} is empty")));
        }
        Ok(Question { question_uid: uid, stem: stem.into(), options })
    }
}

/// A fully rendered prompt plus the provenance needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssembledPrompt {
    pub template_name: TemplateName,
    pub template_version: String,
    pub text: String,
    pub icl_ids: Vec<String>,
    pub est_tokens: u64,
    pub content_digest: Digest,
    #[serde(skip)]
    task_start: usize,
}

impl AssembledPrompt {
    fn new(template: &PromptTemplate, text: String, task_start: usize, icl_ids: Vec<String>) -> Self {
        AssembledPrompt {
            template_name: template.name(),
            template_version: template.version().to_string(),
            est_tokens: estimate_tokens(&text),
            content_digest: Digest::of(&text),
            text,
            icl_ids,
            task_start,
        }
    }

    /// The prompt without its leading instructions and in-context examples.
    pub fn task_block(&self) -> &str {
        &self.text[self.task_start..]
    }

    /// Same prompt with `suffix` appended; provenance is kept.
    pub fn with_suffix(&self, suffix: &str) -> Self {
        let text = format!("{}{suffix}", self.text);
        AssembledPrompt {
            template_name: self.template_name,
            template_version: self.template_version.clone(),
            est_tokens: estimate_tokens(&text),
            content_digest: Digest::of(&text),
            text,
            icl_ids: self.icl_ids.clone(),
            task_start: self.task_start,
        }
    }
}

/// Rough token count: UTF-8 bytes / 4, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

fn format_seconds(s: f64) -> String {
    format!("{s}s")
}

fn captions_block(sel: &SelectedCaptions) -> String {
    let mut out = String::new();
    for clip in &sel.per_clip {
        for caption in &clip.captions {
            let _ = writeln!(
                out,
                "[{}-{}] {caption}",
                format_seconds(clip.window.start_s),
                format_seconds(clip.window.end_s)
            );
        }
    }
    out
}

fn icl_block(examples: &[IclExample]) -> String {
    if examples.is_empty() {
        return String::new();
    }
    let mut out = String::from("Worked examples:\n\n");
    for (i, ex) in examples.iter().enumerate() {
        let _ = write!(out, "### Example {}\n{}\n\n", i + 1, ex.body().trim_end());
    }
    out.push_str("### Your task\n");
    out
}

fn options_block(q: &Question) -> String {
    let mut out = String::new();
    for (i, opt) in q.options.iter().enumerate() {
        let _ = writeln!(out, "{i}. {opt}");
    }
    out
}

fn check_kind(examples: &[IclExample], kind: IclKind) -> Result<(), PromptError> {
    match examples.iter().find(|e| e.kind() != kind) {
        Some(e) => Err(PromptError::Config(format!("example `{}` is a {:?} example, expected {kind:?}", e.id(), e.kind()))),
        None => Ok(()),
    }
}

fn ids(examples: &[IclExample]) -> Vec<String> {
    examples.iter().map(|e| e.id().to_string()).collect()
}

pub fn render_summary_prompt(
    templates: &TemplateSet,
    sel: &SelectedCaptions,
    icl: &[IclExample],
) -> Result<AssembledPrompt, PromptError> {
    if sel.is_empty() {
        return Err(PromptError::EmptyInput);
    }
    check_kind(icl, IclKind::Summary)?;
    let template = templates.get(TemplateName::Summary);
    let (text, start) = template.render(&[(ICL_SLOT, &icl_block(icl)), ("captions", &captions_block(sel))])?;
    Ok(AssembledPrompt::new(template, text, start, ids(icl)))
}

pub fn render_answer_prompt(
    templates: &TemplateSet,
    sel: &SelectedCaptions,
    summary: Option<&str>,
    q: &Question,
    icl: &[IclExample],
    mode: AnswerMode,
) -> Result<AssembledPrompt, PromptError> {
    if sel.is_empty() {
        return Err(PromptError::EmptyInput);
    }
    check_kind(icl, IclKind::Answer)?;
    let icl_text = icl_block(icl);
    let captions = captions_block(sel);
    let options = options_block(q);
    let (template, rendered) = match (mode, summary) {
        (AnswerMode::TwoPhase, Some(summary)) => {
            let t = templates.get(TemplateName::AnswerTwoPhase);
            let r = t.render(&[
                (ICL_SLOT, &icl_text),
                ("captions", &captions),
                ("summary", summary.trim()),
                ("question", &q.stem),
                ("options", &options),
            ])?;
            (t, r)
        }
        (AnswerMode::OnePhase, None) => {
            let t = templates.get(TemplateName::AnswerOnePhase);
            let r = t.render(&[(ICL_SLOT, &icl_text), ("captions", &captions), ("question", &q.stem), ("options", &options)])?;
            (t, r)
        }
        (AnswerMode::TwoPhase, None) => {
            return Err(PromptError::Config("two_phase answering needs a summary".into()));
        }
        (AnswerMode::OnePhase, Some(_)) => {
            return Err(PromptError::Config("one_phase answering must not be given a summary".into()));
        }
    };
    let (text, start) = rendered;
    Ok(AssembledPrompt::new(template, text, start, ids(icl)))
}

pub fn render_reflection_prompt(
    templates: &TemplateSet,
    prior_prompt: &AssembledPrompt,
    prior: &AnswerRecord,
) -> Result<AssembledPrompt, PromptError> {
    let template = templates.get(TemplateName::Reflection);
    let answer = prior.option_index.to_string();
    let confidence = prior.confidence.to_string();
    let (text, _) = template.render(&[
        ("task", prior_prompt.task_block().trim_end()),
        ("prior_answer", &answer),
        ("prior_reason", prior.reason.trim()),
        ("prior_confidence", &confidence),
    ])?;
    Ok(AssembledPrompt::new(template, text, 0, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption_store::{select_captions, VideoCaptionDoc};

    fn selection(k: u8) -> SelectedCaptions {
        let variants = (0..45)
            .map(|c| (0..5).map(|v| format!("#C clip{c} variant{v} does something")).collect())
            .collect();
        let doc = VideoCaptionDoc::new("vid", 180.0, 4.0, variants).unwrap();
        select_captions(&doc, k).unwrap()
    }

    fn question() -> Question {
        Question::new("q1", "What is the person doing?", (0..5).map(|i| format!("option {i}")).collect()).unwrap()
    }

    fn ex(id: &str, kind: IclKind) -> IclExample {
        IclExample::new(id, kind, format!("body of {id}")).unwrap()
    }

    #[test]
    fn token_estimate() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcdefgh"), 2);
        assert_eq!(estimate_tokens("abcdefghi"), 3);
        assert_eq!(estimate_tokens("é"), 1);
    }

    #[test]
    fn summary_prompt_lists_all_captions() {
        let t = TemplateSet::builtin();
        let sel = selection(5);
        let p = render_summary_prompt(&t, &sel, &[ex("s1", IclKind::Summary)]).unwrap();
        assert_eq!(p.icl_ids, vec!["s1"]);
        assert_eq!(p.text.matches("#C clip").count(), 225);
        assert!(p.text.contains("[176s-180s] #C clip44 variant4 does something"));
        assert!(p.text.find("body of s1").unwrap() < p.text.find("#C clip0 ").unwrap());
        assert_eq!(p.est_tokens, estimate_tokens(&p.text));
        assert_eq!(p.content_digest, Digest::of(&p.text));
    }

    #[test]
    fn summary_prompt_zero_shot_and_empty() {
        let t = TemplateSet::builtin();
        let p = render_summary_prompt(&t, &selection(1), &[]).unwrap();
        assert!(p.icl_ids.is_empty());
        assert!(!p.text.contains("Worked examples"));
        let empty = SelectedCaptions { video_id: "v".into(), k: 1, per_clip: vec![] };
        assert_eq!(render_summary_prompt(&t, &empty, &[]), Err(PromptError::EmptyInput));
    }

    #[test]
    fn wrong_example_kind_rejected() {
        let t = TemplateSet::builtin();
        assert!(matches!(
            render_summary_prompt(&t, &selection(1), &[ex("a", IclKind::Answer)]),
            Err(PromptError::Config(_))
        ));
    }

    #[test]
    fn answer_prompt_modes() {
        let t = TemplateSet::builtin();
        let sel = selection(5);
        let q = question();
        let shots: Vec<_> = (1..=3).map(|i| ex(&format!("a{i}"), IclKind::Answer)).collect();
        let two = render_answer_prompt(&t, &sel, Some("overview"), &q, &shots, AnswerMode::TwoPhase).unwrap();
        assert_eq!(two.icl_ids.len(), 3);
        for i in 0..5 {
            assert!(two.text.contains(&format!("{i}. option {i}")));
        }
        for field in ["Reason:", "Answer:", "Confidence:"] {
            assert!(two.text.contains(field));
        }
        assert!(two.text.contains("overview"));

        let one = render_answer_prompt(&t, &sel, None, &q, &shots, AnswerMode::OnePhase).unwrap();
        assert_ne!(one.content_digest, two.content_digest);

        assert!(matches!(
            render_answer_prompt(&t, &sel, Some("s"), &q, &shots, AnswerMode::OnePhase),
            Err(PromptError::Config(_))
        ));
        assert!(matches!(
            render_answer_prompt(&t, &sel, None, &q, &shots, AnswerMode::TwoPhase),
            Err(PromptError::Config(_))
        ));
    }

    #[test]
    fn task_block_excludes_examples() {
        let t = TemplateSet::builtin();
        let p = render_answer_prompt(&t, &selection(1), None, &question(), &[ex("a1", IclKind::Answer)], AnswerMode::OnePhase)
            .unwrap();
        assert!(p.text.contains("body of a1"));
        assert!(!p.task_block().contains("body of a1"));
        assert!(p.task_block().starts_with("Captions:"));
    }

    #[test]
    fn reflection_prompt_embeds_prior() {
        let t = TemplateSet::builtin();
        let prior_prompt =
            render_answer_prompt(&t, &selection(3), Some("ov"), &question(), &[], AnswerMode::TwoPhase).unwrap();
        let prior = AnswerRecord {
            option_index: 2,
            confidence: 3,
            reason: "they rinse a plate".into(),
            raw_text: String::new(),
            parse_attempts: 1,
        };
        let r = render_reflection_prompt(&t, &prior_prompt, &prior).unwrap();
        let lower = r.text.to_lowercase();
        assert!(lower.contains("confidence: 3"));
        assert!(lower.contains("answer: 2"));
        assert!(r.text.contains("they rinse a plate"));
        assert!(r.text.contains(prior_prompt.task_block().trim_end()));
        assert_ne!(r.content_digest, prior_prompt.content_digest);
        assert_eq!(r, render_reflection_prompt(&t, &prior_prompt, &prior).unwrap());
    }

    #[test]
    fn question_validation() {
        assert!(Question::new("q", "s", vec!["a".into(); 4]).is_err());
        assert!(Question::new("q", "s", vec!["a".into(), "".into(), "c".into(), "d".into(), "e".into()]).is_err());
        let q: Result<Question, _> = serde_json::from_str(r#"{"question_uid":"q","stem":"s","options":["a","b"]}"#);
        assert!(q.is_err());
    }

    #[test]
    fn suffix_changes_digest() {
        let t = TemplateSet::builtin();
        let p = render_summary_prompt(&t, &selection(1), &[]).unwrap();
        let r = p.with_suffix(FORMAT_REMINDER);
        assert_ne!(p.content_digest, r.content_digest);
        assert_eq!(r.template_version, p.template_version);
        assert!(r.est_tokens >= p.est_tokens);
    }
}
