//! Run traces: a JSONL header line followed by one record per question.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ConfigSnapshot;
use crate::digest::Digest;
use crate::jsonl;
use crate::llm_backend::UsageStats;
use crate::stages::{QAOutcome, UnanswerableQuestion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub run_id: String,
    pub config: ConfigSnapshot,
    pub config_digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub question_uid: String,
    pub cause: String,
    pub requests: u32,
    pub usage: UsageStats,
}

impl From<UnanswerableQuestion> for FailureRecord {
    fn from(e: UnanswerableQuestion) -> Self {
        FailureRecord { cause: e.cause.to_string(), question_uid: e.question_uid, requests: e.requests, usage: e.usage }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum TraceRecord {
    Answered(QAOutcome),
    Failed(FailureRecord),
}

impl TraceRecord {
    pub fn question_uid(&self) -> &str {
        match self {
            TraceRecord::Answered(o) => &o.question_uid,
            TraceRecord::Failed(f) => &f.question_uid,
        }
    }

    pub fn outcome(&self) -> Option<&QAOutcome> {
        match self {
            TraceRecord::Answered(o) => Some(o),
            TraceRecord::Failed(_) => None,
        }
    }

    pub fn requests(&self) -> u32 {
        match self {
            TraceRecord::Answered(o) => o.requests,
            TraceRecord::Failed(f) => f.requests,
        }
    }

    pub fn usage(&self) -> UsageStats {
        match self {
            TraceRecord::Answered(o) => o.usage_total,
            TraceRecord::Failed(f) => f.usage,
        }
    }
}

/// Execution counters for the part of a run done in this process.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ExecStats {
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub executed: usize,
}

/// Folded over the records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Totals {
    pub questions: usize,
    pub requests: u64,
    pub failures: usize,
    pub reflections: usize,
    pub usage: UsageStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
    pub stats: ExecStats,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("{0}")]
    Io(String),
    #[error("trace {0} has no header line")]
    MissingHeader(String),
    #[error("trace {path}: {message}")]
    Format { path: String, message: String },
}

impl RunTrace {
    pub fn totals(&self) -> Totals {
        self.records.iter().fold(Totals::default(), |mut t, r| {
            t.questions += 1;
            t.requests += r.requests() as u64;
            t.usage += r.usage();
            match r {
                TraceRecord::Answered(o) => t.reflections += o.reflection_triggered as usize,
                TraceRecord::Failed(_) => t.failures += 1,
            }
            t
        })
    }

    /// Reads a trace; a truncated final line is dropped (see `jsonl::load`).
    pub fn read(path: &Path) -> Result<Self, TraceError> {
        if !path.exists() {
            return Err(TraceError::Io(format!("{}: no such file", path.display())));
        }
        let lines: Vec<serde_json::Value> = jsonl::load(path).map_err(|e| TraceError::Io(e.to_string()))?;
        let mut lines = lines.into_iter();
        let fmt_err = |message: String| TraceError::Format { path: path.display().to_string(), message };
        let header: TraceHeader = match lines.next() {
            Some(v) => serde_json::from_value(v).map_err(|e| fmt_err(format!("header: {e}")))?,
            None => return Err(TraceError::MissingHeader(path.display().to_string())),
        };
        let records = lines
            .enumerate()
            .map(|(i, v)| serde_json::from_value(v).map_err(|e| fmt_err(format!("record {}: {e}", i + 1))))
            .collect::<Result<_, _>>()?;
        Ok(RunTrace { header, records, stats: ExecStats::default() })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Replaces the file at `path` atomically.
    pub fn write(&self, path: &Path) -> Result<(), TraceError> {
        let tmp = path.with_extension("jsonl.tmp");
        std::fs::write(&tmp, self.to_jsonl()).map_err(|e| TraceError::Io(format!("{}: {e}", tmp.display())))?;
        std::fs::rename(&tmp, path).map_err(|e| TraceError::Io(format!("{}: {e}", path.display())))
    }
}

/// Incremental writer; every record is flushed as soon as it is written.
pub struct TraceWriter {
    out: BufWriter<File>,
    path: String,
}

impl TraceWriter {
    pub fn create(path: &Path, header: &TraceHeader) -> Result<Self, TraceError> {
        let file = File::create(path).map_err(|e| TraceError::Io(format!("{}: {e}", path.display())))?;
        let mut w = TraceWriter { out: BufWriter::new(file), path: path.display().to_string() };
        w.line(header)?;
        Ok(w)
    }

    pub fn append(path: &Path) -> Result<Self, TraceError> {
        let file = std::fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| TraceError::Io(format!("{}: {e}", path.display())))?;
        Ok(TraceWriter { out: BufWriter::new(file), path: path.display().to_string() })
    }

    fn line<T: Serialize>(&mut self, value: &T) -> Result<(), TraceError> {
        let path = &self.path;
        let io = |e: std::io::Error| TraceError::Io(format!("{path}: {e}"));
        serde_json::to_writer(&mut self.out, value).map_err(|e| TraceError::Io(e.to_string()))?;
        self.out.write_all(b"\n").map_err(io)?;
        self.out.flush().map_err(io)
    }

    pub fn record(&mut self, record: &TraceRecord) -> Result<(), TraceError> {
        self.line(record)
    }
}
