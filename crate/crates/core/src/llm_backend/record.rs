use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, CompletionRequest, CompletionResponse, UsageStats};
use crate::digest::Digest;
use crate::jsonl::{self, JsonlLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordMode {
    Record,
    Replay,
}

/// One line of the record store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLine {
    pub digest: Digest,
    pub text: String,
    pub usage: UsageStats,
}

/// Records responses of an inner backend to a JSONL store, or serves them
/// back offline. Replay never calls the inner backend.
pub struct RecordReplayBackend {
    mode: RecordMode,
    log: Option<JsonlLog>,
    index: RwLock<HashMap<Digest, RecordLine>>,
    inner: Option<Arc<dyn Backend>>,
}

impl RecordReplayBackend {
    pub fn open(mode: RecordMode, store_path: &Path, inner: Option<Arc<dyn Backend>>) -> Result<Self, BackendError> {
        if mode == RecordMode::Record && inner.is_none() {
            return Err(BackendError::Setup("record mode needs an inner backend".into()));
        }
        let lines: Vec<RecordLine> = jsonl::load(store_path).map_err(|e| BackendError::Store(e.to_string()))?;
        if mode == RecordMode::Replay && !store_path.exists() {
            return Err(BackendError::Setup(format!("replay store {} does not exist", store_path.display())));
        }
        let index = lines.into_iter().map(|l| (l.digest, l)).collect();
        let log = match mode {
            RecordMode::Record => Some(JsonlLog::open(store_path).map_err(|e| BackendError::Store(e.to_string()))?),
            RecordMode::Replay => None,
        };
        Ok(RecordReplayBackend { mode, log, index: RwLock::new(index), inner })
    }

    pub fn mode(&self) -> RecordMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Backend for RecordReplayBackend {
    fn id(&self) -> String {
        match (&self.mode, &self.inner) {
            (RecordMode::Record, Some(inner)) => format!("record:{}", inner.id()),
            _ => "replay".into(),
        }
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let digest = req.digest();
        match self.mode {
            RecordMode::Replay => {
                let index = self.index.read().unwrap_or_else(|p| p.into_inner());
                let line = index.get(&digest).ok_or(BackendError::ReplayMiss { digest })?;
                Ok(CompletionResponse {
                    text: line.text.clone(),
                    usage: line.usage,
                    backend_id: self.id(),
                    latency_ms: 0,
                    attempts: 0,
                })
            }
            RecordMode::Record => {
                let inner = self.inner.as_ref().expect("checked at open");
                let resp = inner.complete(req)?;
                let line = RecordLine { digest, text: resp.text.clone(), usage: resp.usage };
                if let Some(log) = &self.log {
                    log.append(&line).map_err(|e| BackendError::Store(e.to_string()))?;
                }
                self.index.write().unwrap_or_else(|p| p.into_inner()).insert(digest, line);
                Ok(resp)
            }
        }
    }
}
