//! The per-question state machine: select captions, summarize (two-phase),
//! answer, parse, and run one reflection round when confidence is low.

mod parser;

use serde::{Deserialize, Serialize};

pub use parser::{parse_answer_response, Field, ParseError};

use crate::caption_store::{select_captions, CaptionError, SelectedCaptions, VideoCaptionDoc};
use crate::digest::Digest;
use crate::llm_backend::{Backend, BackendError, CompletionRequest, CompletionResponse, UsageStats};
use crate::orchestrator::PipelineConfig;
use crate::prompting::{
    render_answer_prompt, render_reflection_prompt, render_summary_prompt, AnswerMode, AssembledPrompt, IclExample,
    IclKind, IclLibrary, PromptError, Question, TemplateSet, FORMAT_REMINDER,
};

/// Re-asks allowed after an unparseable reply.
pub const PARSE_REASKS: u32 = 2;

pub const MAX_CONFIDENCE: u8 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummarySource {
    pub template_version: String,
    pub model_name: String,
    pub request_digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub text: String,
    pub source: SummarySource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub option_index: u8,
    pub confidence: u8,
    pub reason: String,
    pub raw_text: String,
    pub parse_attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAOutcome {
    pub question_uid: String,
    pub summary: Option<Summary>,
    pub initial: AnswerRecord,
    pub reflected: Option<AnswerRecord>,
    #[serde(rename = "final")]
    pub final_answer: AnswerRecord,
    pub reflection_triggered: bool,
    pub usage_total: UsageStats,
    /// Completion requests issued for this question, re-asks included.
    pub requests: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Caption(#[from] CaptionError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("backend returned an empty response")]
    EmptyResponse,
    #[error("unparseable reply after {attempts} attempt(s): {error}")]
    Unparseable { attempts: u32, error: ParseError },
    #[error("prompt needs ~{est_tokens} tokens, over the context budget of {budget}")]
    BudgetExceeded { est_tokens: u64, budget: u64 },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("question {question_uid} could not be answered: {cause}")]
pub struct UnanswerableQuestion {
    pub question_uid: String,
    pub cause: StageError,
    pub requests: u32,
    pub usage: UsageStats,
}

/// `true` when the confidence is strictly below the threshold.
pub fn needs_reflection(rec: &AnswerRecord, threshold: u8) -> bool {
    rec.confidence < threshold
}

/// Request and usage bookkeeping for one question.
#[derive(Debug, Default)]
struct Tally {
    requests: u32,
    usage: UsageStats,
}

fn complete(
    backend: &dyn Backend,
    config: &PipelineConfig,
    tally: &mut Tally,
    prompt: AssembledPrompt,
) -> Result<(CompletionRequest, CompletionResponse), StageError> {
    if let Some(budget) = config.context_budget_tokens {
        let est_tokens = prompt.est_tokens + config.max_output_tokens as u64;
        if est_tokens > budget {
            return Err(StageError::BudgetExceeded { est_tokens, budget });
        }
    }
    let req = CompletionRequest::new(&config.model_name, prompt, config.temperature, config.max_output_tokens);
    tally.requests += 1;
    let resp = backend.complete(&req)?;
    tally.usage += resp.usage;
    Ok((req, resp))
}

/// Completes `prompt` and parses the reply, re-asking with a cumulative
/// format reminder up to [`PARSE_REASKS`] times.
fn ask_structured(
    backend: &dyn Backend,
    config: &PipelineConfig,
    tally: &mut Tally,
    prompt: &AssembledPrompt,
) -> Result<AnswerRecord, StageError> {
    let mut current = prompt.clone();
    let mut attempt = 1;
    loop {
        let (_, resp) = complete(backend, config, tally, current.clone())?;
        match parse_answer_response(&resp.text) {
            Ok(mut rec) => {
                rec.parse_attempts = attempt;
                return Ok(rec);
            }
            Err(error) if attempt > PARSE_REASKS => return Err(StageError::Unparseable { attempts: attempt, error }),
            Err(error) => {
                log::debug!("parse attempt {attempt} failed: {error}");
                current = current.with_suffix(FORMAT_REMINDER);
                attempt += 1;
            }
        }
    }
}

fn summarize_inner(
    backend: &dyn Backend,
    templates: &TemplateSet,
    sel: &SelectedCaptions,
    icl: &[IclExample],
    config: &PipelineConfig,
    tally: &mut Tally,
) -> Result<Summary, StageError> {
    if config.mode != AnswerMode::TwoPhase {
        return Err(PromptError::Config("summarize is only used in two_phase mode".into()).into());
    }
    let prompt = render_summary_prompt(templates, sel, icl)?;
    let template_version = prompt.template_version.clone();
    let (req, resp) = complete(backend, config, tally, prompt)?;
    if resp.text.trim().is_empty() {
        return Err(StageError::EmptyResponse);
    }
    Ok(Summary {
        text: resp.text,
        source: SummarySource { template_version, model_name: req.model_name.clone(), request_digest: req.digest() },
    })
}

/// Renders the summary prompt and wraps the backend reply. Returns the
/// summary and the usage it cost.
pub fn summarize(
    backend: &dyn Backend,
    templates: &TemplateSet,
    sel: &SelectedCaptions,
    icl: &[IclExample],
    config: &PipelineConfig,
) -> Result<(Summary, UsageStats), StageError> {
    let mut tally = Tally::default();
    let s = summarize_inner(backend, templates, sel, icl, config, &mut tally)?;
    Ok((s, tally.usage))
}

/// Examples chosen for a config: (summary shots, answer shots).
pub fn pick_examples(
    examples: &IclLibrary,
    config: &PipelineConfig,
) -> Result<(Vec<IclExample>, Vec<IclExample>), PromptError> {
    let summary = match config.mode {
        AnswerMode::TwoPhase => examples.pick(IclKind::Summary, config.summary_shots)?,
        AnswerMode::OnePhase => Vec::new(),
    };
    Ok((summary, examples.pick(IclKind::Answer, config.answer_shots)?))
}

fn run_inner(
    backend: &dyn Backend,
    templates: &TemplateSet,
    examples: &IclLibrary,
    doc: &VideoCaptionDoc,
    q: &Question,
    config: &PipelineConfig,
    tally: &mut Tally,
) -> Result<QAOutcome, StageError> {
    let sel = select_captions(doc, config.k)?;
    let (summary_shots, answer_shots) = pick_examples(examples, config)?;

    let summary = match config.mode {
        AnswerMode::TwoPhase => Some(summarize_inner(backend, templates, &sel, &summary_shots, config, tally)?),
        AnswerMode::OnePhase => None,
    };
    let answer_prompt =
        render_answer_prompt(templates, &sel, summary.as_ref().map(|s| s.text.as_str()), q, &answer_shots, config.mode)?;
    let initial = ask_structured(backend, config, tally, &answer_prompt)?;

    let reflected = if config.reflection_enabled && needs_reflection(&initial, config.threshold) {
        let prompt = render_reflection_prompt(templates, &answer_prompt, &initial)?;
        Some(ask_structured(backend, config, tally, &prompt)?)
    } else {
        None
    };

    Ok(QAOutcome {
        question_uid: q.question_uid.clone(),
        summary,
        final_answer: reflected.clone().unwrap_or_else(|| initial.clone()),
        reflection_triggered: reflected.is_some(),
        initial,
        reflected,
        usage_total: tally.usage,
        requests: tally.requests,
    })
}

/// Runs one question end to end.
pub fn run_question(
    backend: &dyn Backend,
    templates: &TemplateSet,
    examples: &IclLibrary,
    doc: &VideoCaptionDoc,
    q: &Question,
    config: &PipelineConfig,
) -> Result<QAOutcome, UnanswerableQuestion> {
    let mut tally = Tally::default();
    run_inner(backend, templates, examples, doc, q, config, &mut tally).map_err(|cause| UnanswerableQuestion {
        question_uid: q.question_uid.clone(),
        cause,
        requests: tally.requests,
        usage: tally.usage,
    })
}
