//! Batch runs: configuration and presets, the response cache, the worker
//! pool and run traces.

mod batch;
mod cache;
mod config;
mod corpus;
mod trace;

pub use batch::{dry_run, resume, run_batch, BatchError, BatchJob, CorpusItem, ManifestEntry, PLACEHOLDER_SUMMARY};
pub use cache::{CacheEntry, CacheError, CachedBackend, ResponseCache, Served};
pub use corpus::{caption_path, load_corpus, CorpusError};
pub use config::{ConfigSnapshot, PipelineConfig, PRESET_NAMES};
pub use trace::{ExecStats, FailureRecord, RunTrace, Totals, TraceError, TraceHeader, TraceRecord, TraceWriter};
