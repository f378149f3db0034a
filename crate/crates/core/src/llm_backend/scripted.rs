use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, CompletionRequest, CompletionResponse, UsageStats};
use crate::digest::Digest;

/// Answers from a digest-keyed table, with an optional default reply.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    script: HashMap<Digest, String>,
    default: Option<String>,
}

/// On-disk script: `{"responses": {"<digest hex>": "text"}, "default": "text"}`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptFile {
    #[serde(default)]
    pub responses: HashMap<Digest, String>,
    #[serde(default)]
    pub default: Option<String>,
}

impl ScriptedBackend {
    pub fn new(script: HashMap<Digest, String>, default: Option<String>) -> Self {
        ScriptedBackend { script, default }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let raw = std::fs::read(path).map_err(|e| BackendError::Setup(format!("{}: {e}", path.display())))?;
        let file: ScriptFile =
            serde_json::from_slice(&raw).map_err(|e| BackendError::Setup(format!("{}: {e}", path.display())))?;
        Ok(Self::new(file.responses, file.default))
    }

    pub fn insert(&mut self, digest: Digest, text: impl Into<String>) {
        self.script.insert(digest, text.into());
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let text = self
            .script
            .get(&req.digest())
            .or(self.default.as_ref())
            .ok_or(BackendError::UnscriptedRequest { digest: req.digest() })?
            .clone();
        Ok(CompletionResponse {
            usage: UsageStats::estimate(&req.prompt, &text),
            text,
            backend_id: self.id(),
            latency_ms: 0,
            attempts: 0,
        })
    }
}

/// Answers by calling a closure; for tests whose replies depend on the
/// prompt content rather than a precomputed digest table.
pub struct FnBackend<F> {
    respond: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&CompletionRequest) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(respond: F) -> Self {
        FnBackend { respond }
    }
}

impl<F> Backend for FnBackend<F>
where
    F: Fn(&CompletionRequest) -> Result<String, BackendError> + Send + Sync,
{
    fn id(&self) -> String {
        "fn".into()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let text = (self.respond)(req)?;
        Ok(CompletionResponse {
            usage: UsageStats::estimate(&req.prompt, &text),
            text,
            backend_id: self.id(),
            latency_ms: 0,
            attempts: 0,
        })
    }
}
