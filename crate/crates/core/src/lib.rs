//! Hierarchical video question answering over clip captions.
//!
//! The pipeline turns per-clip caption documents into a summary, answers a
//! five-option question with a chain-of-thought prompt, and re-asks the model
//! to reflect when its self-reported confidence is low. Completion backends
//! are pluggable (live chat-completions endpoint, scripted, record/replay),
//! and batches run over a bounded worker pool with a content-addressed cache.

pub mod caption_store;
pub mod digest;
pub mod eval_report;
mod jsonl;
pub mod llm_backend;
pub mod orchestrator;
pub mod prompting;
pub mod stages;

pub use caption_store::{
    ingest_caption_doc, segment_schedule, select_captions, ClipCaptions, ClipWindow,
    SelectedCaptions, VideoCaptionDoc,
};
pub use digest::Digest;
pub use eval_report::{ablation_table, compute_accuracy, emit_submission, AblationRow, EvalReport, GroundTruth};
pub use llm_backend::{Backend, BackendError, CompletionRequest, CompletionResponse, UsageStats};
pub use orchestrator::{run_batch, resume, BatchJob, PipelineConfig, ResponseCache, RunTrace};
pub use prompting::{AssembledPrompt, IclExample, IclKind, Question, TemplateSet};
pub use stages::{needs_reflection, parse_answer_response, run_question, AnswerRecord, QAOutcome, Summary};
