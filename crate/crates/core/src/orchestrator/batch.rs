//! Batch execution over a corpus.
//!
//! Questions run on a pool of `config.concurrency` workers (rayon, when the
//! `parallel` feature is on) while a single writer thread emits trace lines in
//! corpus order as soon as each prefix of the corpus is complete.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::mpsc;
use std::sync::Arc;

use super::cache::{CachedBackend, ResponseCache};
use super::config::PipelineConfig;
use super::trace::{ExecStats, FailureRecord, RunTrace, TraceError, TraceHeader, TraceRecord, TraceWriter};
use crate::caption_store::{select_captions, VideoCaptionDoc};
use crate::digest::Digest;
use crate::llm_backend::{Backend, CompletionRequest};
use crate::prompting::{render_answer_prompt, render_summary_prompt, AnswerMode, IclLibrary, Question, TemplateName, TemplateSet};
use crate::stages::{pick_examples, run_question};

/// One question and the captions of its video.
#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub doc: Arc<VideoCaptionDoc>,
    pub question: Question,
}

pub struct BatchJob<'a> {
    pub corpus: &'a [CorpusItem],
    pub config: &'a PipelineConfig,
    pub templates: &'a TemplateSet,
    pub examples: &'a IclLibrary,
    pub backend: Arc<dyn Backend>,
    pub cache: Arc<ResponseCache>,
}

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate question_uid `{0}` in corpus")]
    DuplicateQuestion(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("trace was produced with config {found}, current config is {expected}")]
    ConfigMismatch { expected: Digest, found: Digest },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl BatchJob<'_> {
    fn check(&self) -> Result<(), BatchError> {
        if self.corpus.is_empty() {
            return Err(BatchError::EmptyCorpus);
        }
        self.config.validate().map_err(BatchError::Config)?;
        let mut seen = HashSet::new();
        for item in self.corpus {
            if !seen.insert(item.question.question_uid.as_str()) {
                return Err(BatchError::DuplicateQuestion(item.question.question_uid.clone()));
            }
        }
        Ok(())
    }

    /// Header for this job; the run id is a pure function of the config
    /// digest and the corpus question ids.
    pub fn header(&self) -> Result<TraceHeader, BatchError> {
        let (summary, answer) = pick_examples(self.examples, self.config).map_err(|e| BatchError::Config(e.to_string()))?;
        let config = self.config.snapshot(self.templates, &summary, &answer);
        let config_digest = config.digest();
        let mut id_src = config_digest.to_hex();
        for item in self.corpus {
            id_src.push('\n');
            id_src.push_str(&item.question.question_uid);
        }
        Ok(TraceHeader { run_id: Digest::of(id_src).short(16), config, config_digest })
    }

    fn run_one(&self, backend: &dyn Backend, item: &CorpusItem) -> TraceRecord {
        match run_question(backend, self.templates, self.examples, &item.doc, &item.question, self.config) {
            Ok(outcome) => TraceRecord::Answered(outcome),
            Err(e) => {
                log::warn!("{e}");
                TraceRecord::Failed(FailureRecord::from(e))
            }
        }
    }

    /// Runs `items` (index into the corpus, item) and returns their records
    /// in input order, streaming each to `sink` in that same order.
    fn execute(
        &self,
        items: &[(usize, &CorpusItem)],
        mut sink: Option<TraceWriter>,
    ) -> Result<(Vec<TraceRecord>, ExecStats), BatchError> {
        let backend = CachedBackend::new(self.cache.clone(), self.backend.clone());
        let (tx, rx) = mpsc::channel::<(usize, TraceRecord)>();

        let written = std::thread::scope(|scope| {
            let writer = scope.spawn(move || -> Result<Vec<TraceRecord>, TraceError> {
                let mut pending = BTreeMap::new();
                let mut ordered = Vec::with_capacity(items.len());
                for (pos, rec) in rx {
                    pending.insert(pos, rec);
                    while let Some(rec) = pending.remove(&ordered.len()) {
                        if let Some(w) = sink.as_mut() {
                            w.record(&rec)?;
                        }
                        ordered.push(rec);
                    }
                }
                Ok(ordered)
            });
            let work = self.dispatch(&backend, items, tx);
            let ordered = writer.join().expect("trace writer panicked");
            work.and(ordered.map_err(BatchError::from))
        })?;

        let stats = ExecStats {
            backend_calls: backend.backend_calls(),
            cache_hits: backend.cache_hits(),
            executed: items.len(),
        };
        Ok((written, stats))
    }

    #[cfg(feature = "parallel")]
    fn dispatch(
        &self,
        backend: &CachedBackend,
        items: &[(usize, &CorpusItem)],
        tx: mpsc::Sender<(usize, TraceRecord)>,
    ) -> Result<(), BatchError> {
        use rayon::prelude::*;

        if self.config.concurrency <= 1 || items.len() <= 1 {
            return sequential(self, backend, items, tx);
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.concurrency)
            .thread_name(|i| format!("hcqa-worker-{i}"))
            .build()
            .map_err(|e| BatchError::Pool(e.to_string()))?;
        pool.install(|| {
            items.par_iter().enumerate().for_each_with(tx, |tx, (pos, (_, item))| {
                let _ = tx.send((pos, self.run_one(backend, item)));
            });
        });
        Ok(())
    }

    #[cfg(not(feature = "parallel"))]
    fn dispatch(
        &self,
        backend: &CachedBackend,
        items: &[(usize, &CorpusItem)],
        tx: mpsc::Sender<(usize, TraceRecord)>,
    ) -> Result<(), BatchError> {
        sequential(self, backend, items, tx)
    }
}

fn sequential(
    job: &BatchJob<'_>,
    backend: &CachedBackend,
    items: &[(usize, &CorpusItem)],
    tx: mpsc::Sender<(usize, TraceRecord)>,
) -> Result<(), BatchError> {
    for (pos, (_, item)) in items.iter().enumerate() {
        let _ = tx.send((pos, job.run_one(backend, item)));
    }
    Ok(())
}

/// Runs every question of the corpus. Per-question failures are recorded in
/// the trace; only setup problems abort.
pub fn run_batch(job: &BatchJob<'_>, trace_path: Option<&Path>) -> Result<RunTrace, BatchError> {
    job.check()?;
    let header = job.header()?;
    let sink = trace_path.map(|p| TraceWriter::create(p, &header)).transpose()?;
    let items: Vec<_> = job.corpus.iter().enumerate().collect();
    let (records, stats) = job.execute(&items, sink)?;
    Ok(RunTrace { header, records, stats })
}

/// Continues a partial trace: questions already recorded (answered or
/// failed) are skipped, the rest run and are appended. The file ends up in
/// corpus order.
pub fn resume(trace_path: &Path, job: &BatchJob<'_>) -> Result<RunTrace, BatchError> {
    job.check()?;
    let header = job.header()?;
    let prior = RunTrace::read(trace_path)?;
    if prior.header.config_digest != header.config_digest {
        return Err(BatchError::ConfigMismatch { expected: header.config_digest, found: prior.header.config_digest });
    }

    let done: HashSet<&str> = prior.records.iter().map(TraceRecord::question_uid).collect();
    let todo: Vec<_> =
        job.corpus.iter().enumerate().filter(|(_, it)| !done.contains(it.question.question_uid.as_str())).collect();
    if todo.is_empty() {
        log::info!("trace {} is complete; nothing to run", trace_path.display());
        return Ok(prior);
    }
    log::info!("resuming: {} of {} questions left", todo.len(), job.corpus.len());

    let sink = TraceWriter::append(trace_path)?;
    let (fresh, stats) = job.execute(&todo, Some(sink))?;

    let mut by_uid: BTreeMap<String, TraceRecord> =
        prior.records.iter().chain(fresh.iter()).map(|r| (r.question_uid().to_string(), r.clone())).collect();
    let mut records: Vec<TraceRecord> =
        job.corpus.iter().filter_map(|it| by_uid.remove(&it.question.question_uid)).collect();
    // records for questions no longer in the corpus are kept at the end
    records.extend(prior.records.iter().filter(|r| by_uid.contains_key(r.question_uid())).cloned());

    let merged = RunTrace { header: prior.header, records, stats };
    let on_disk: Vec<&str> = prior.records.iter().chain(fresh.iter()).map(TraceRecord::question_uid).collect();
    let wanted: Vec<&str> = merged.records.iter().map(TraceRecord::question_uid).collect();
    if on_disk != wanted {
        merged.write(trace_path)?;
    }
    Ok(merged)
}

/// One rendered prompt in a dry-run manifest.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ManifestEntry {
    pub question_uid: String,
    pub template_name: TemplateName,
    pub template_version: String,
    pub content_digest: Digest,
    pub request_digest: Digest,
    pub est_tokens: u64,
    /// Rendered with a placeholder summary; the real prompt depends on the
    /// summary response.
    pub provisional: bool,
}

pub const PLACEHOLDER_SUMMARY: &str = "<summary pending>";

/// Renders every first-round prompt without touching a backend.
pub fn dry_run(job: &BatchJob<'_>) -> Result<Vec<ManifestEntry>, BatchError> {
    job.check()?;
    let cfg = job.config;
    let (summary_icl, answer_icl) = pick_examples(job.examples, cfg).map_err(|e| BatchError::Config(e.to_string()))?;
    let mut out = Vec::new();
    for item in job.corpus {
        let uid = &item.question.question_uid;
        let entry = |prompt: crate::prompting::AssembledPrompt, provisional: bool| {
            let req = CompletionRequest::new(&cfg.model_name, prompt, cfg.temperature, cfg.max_output_tokens);
            ManifestEntry {
                question_uid: uid.clone(),
                template_name: req.prompt.template_name,
                template_version: req.prompt.template_version.clone(),
                content_digest: req.prompt.content_digest,
                request_digest: req.digest(),
                est_tokens: req.prompt.est_tokens,
                provisional,
            }
        };
        let bad = |e: &dyn std::fmt::Display| BatchError::Config(format!("{uid}: {e}"));
        let sel = select_captions(&item.doc, cfg.k).map_err(|e| bad(&e))?;
        match cfg.mode {
            AnswerMode::TwoPhase => {
                let p = render_summary_prompt(job.templates, &sel, &summary_icl).map_err(|e| bad(&e))?;
                out.push(entry(p, false));
                let p = render_answer_prompt(job.templates, &sel, Some(PLACEHOLDER_SUMMARY), &item.question, &answer_icl, cfg.mode)
                    .map_err(|e| bad(&e))?;
                out.push(entry(p, true));
            }
            AnswerMode::OnePhase => {
                let p = render_answer_prompt(job.templates, &sel, None, &item.question, &answer_icl, cfg.mode)
                    .map_err(|e| bad(&e))?;
                out.push(entry(p, false));
            }
        }
    }
    Ok(out)
}
