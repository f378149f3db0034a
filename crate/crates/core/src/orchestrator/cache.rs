//! Content-addressed response cache keyed by request digest.
//!
//! Entries live in an append-only JSONL file with an in-memory index built at
//! open. Concurrent misses on the same digest are collapsed: the first caller
//! runs the backend, the others wait for its result.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::jsonl::{self, JsonlLog};
use crate::llm_backend::{Backend, BackendError, CompletionRequest, CompletionResponse, UsageStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request_digest: Digest,
    pub response_text: String,
    pub usage: UsageStats,
    /// Unix seconds.
    pub created_at: u64,
    pub template_version: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("cache i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Served {
    Hit,
    Miss,
    /// Waited on another caller's in-flight request for the same digest.
    Joined,
}

type Shared = Result<CompletionResponse, BackendError>;

#[derive(Default)]
struct InFlight {
    result: Mutex<Option<Shared>>,
    done: Condvar,
}

enum Slot {
    Ready(CacheEntry),
    Pending(Arc<InFlight>),
}

#[derive(Default)]
pub struct ResponseCache {
    log: Option<JsonlLog>,
    slots: Mutex<HashMap<Digest, Slot>>,
    waiting: AtomicUsize,
}

fn hit_response(entry: &CacheEntry) -> CompletionResponse {
    CompletionResponse {
        text: entry.response_text.clone(),
        usage: entry.usage,
        backend_id: "cache".into(),
        latency_ms: 0,
        attempts: 0,
    }
}

impl ResponseCache {
    /// A cache that lives only as long as the process.
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> Result<Self, CacheError> {
        let entries: Vec<CacheEntry> = jsonl::load(path).map_err(|e| CacheError::Io(e.to_string()))?;
        let log = JsonlLog::open(path).map_err(|e| CacheError::Io(e.to_string()))?;
        let slots = entries.into_iter().map(|e| (e.request_digest, Slot::Ready(e))).collect();
        Ok(ResponseCache { log: Some(log), slots: Mutex::new(slots), waiting: AtomicUsize::new(0) })
    }

    pub fn len(&self) -> usize {
        self.lock().values().filter(|s| matches!(s, Slot::Ready(_))).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, digest: &Digest) -> Option<CacheEntry> {
        match self.lock().get(digest) {
            Some(Slot::Ready(e)) => Some(e.clone()),
            _ => None,
        }
    }

    /// Callers currently blocked on another caller's in-flight request.
    pub fn waiting(&self) -> usize {
        self.waiting.load(Ordering::SeqCst)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<Digest, Slot>> {
        self.slots.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn lookup_or_complete(
        &self,
        backend: &dyn Backend,
        req: &CompletionRequest,
    ) -> Result<(CompletionResponse, Served), CacheError> {
        let digest = req.digest();
        let flight = {
            let mut slots = self.lock();
            match slots.get(&digest) {
                Some(Slot::Ready(entry)) => return Ok((hit_response(entry), Served::Hit)),
                Some(Slot::Pending(f)) => Err(f.clone()),
                None => {
                    let f = Arc::new(InFlight::default());
                    slots.insert(digest, Slot::Pending(f.clone()));
                    Ok(f)
                }
            }
        };

        match flight {
            Err(pending) => {
                self.waiting.fetch_add(1, Ordering::SeqCst);
                let mut guard = pending.result.lock().unwrap_or_else(|p| p.into_inner());
                while guard.is_none() {
                    guard = pending.done.wait(guard).unwrap_or_else(|p| p.into_inner());
                }
                self.waiting.fetch_sub(1, Ordering::SeqCst);
                let shared = guard.clone().expect("set before notify");
                Ok((shared?, Served::Joined))
            }
            Ok(mine) => {
                let outcome = self.fill(backend, req);
                {
                    let mut slots = self.lock();
                    match &outcome {
                        Ok((entry, _)) => slots.insert(digest, Slot::Ready(entry.clone())),
                        Err(_) => slots.remove(&digest),
                    };
                }
                let shared: Shared = match &outcome {
                    Ok((_, resp)) => Ok(resp.clone()),
                    Err(CacheError::Backend(e)) => Err(e.clone()),
                    Err(CacheError::Io(m)) => Err(BackendError::Store(m.clone())),
                };
                *mine.result.lock().unwrap_or_else(|p| p.into_inner()) = Some(shared);
                mine.done.notify_all();
                outcome.map(|(_, resp)| (resp, Served::Miss))
            }
        }
    }

    fn fill(&self, backend: &dyn Backend, req: &CompletionRequest) -> Result<(CacheEntry, CompletionResponse), CacheError> {
        let resp = backend.complete(req)?;
        let entry = CacheEntry {
            request_digest: req.digest(),
            response_text: resp.text.clone(),
            usage: resp.usage,
            created_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            template_version: req.prompt.template_version.clone(),
        };
        if let Some(log) = &self.log {
            log.append(&entry).map_err(|e| CacheError::Io(e.to_string()))?;
        }
        Ok((entry, resp))
    }
}

/// A backend that goes through the cache first, counting hits and calls.
pub struct CachedBackend {
    cache: Arc<ResponseCache>,
    inner: Arc<dyn Backend>,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl CachedBackend {
    pub fn new(cache: Arc<ResponseCache>, inner: Arc<dyn Backend>) -> Self {
        CachedBackend { cache, inner, backend_calls: AtomicU64::new(0), cache_hits: AtomicU64::new(0) }
    }

    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }
}

impl Backend for CachedBackend {
    fn id(&self) -> String {
        format!("cached:{}", self.inner.id())
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        match self.cache.lookup_or_complete(self.inner.as_ref(), req) {
            Ok((resp, Served::Miss)) => {
                self.backend_calls.fetch_add(1, Ordering::SeqCst);
                Ok(resp)
            }
            Ok((resp, _)) => {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                Ok(resp)
            }
            Err(CacheError::Backend(e)) => {
                self.backend_calls.fetch_add(1, Ordering::SeqCst);
                Err(e)
            }
            Err(CacheError::Io(m)) => {
                self.backend_calls.fetch_add(1, Ordering::SeqCst);
                Err(BackendError::Store(m))
            }
        }
    }
}
