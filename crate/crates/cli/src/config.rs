//! Config file: every pipeline field plus backend, cache and input paths.
//! Unknown keys are rejected. Relative paths resolve against the file's
//! directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hcqa_core::llm_backend::RetryPolicy;
use hcqa_core::orchestrator::{PipelineConfig, PRESET_NAMES};
use serde::Deserialize;
use serde_json::{Map, Value};

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    Scripted,
    Record,
    Replay,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub endpoint: String,
    /// Scripted backend responses.
    pub script: Option<PathBuf>,
    /// Record/replay store.
    pub store: Option<PathBuf>,
    pub timeout_s: u64,
    pub retry: RetryPolicy,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            kind: BackendKind::Live,
            endpoint: DEFAULT_ENDPOINT.into(),
            script: None,
            store: None,
            timeout_s: 120,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct FileConfig {
    preset: Option<String>,
    backend: BackendSection,
    cache: Option<PathBuf>,
    corpus: Option<PathBuf>,
    captions_dir: Option<PathBuf>,
    examples_dir: Option<PathBuf>,
    templates_dir: Option<PathBuf>,
    #[serde(flatten)]
    pipeline: Map<String, Value>,
}

/// Everything `run` needs besides the command-line overrides.
#[derive(Debug, Clone)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    pub backend: BackendSection,
    pub cache: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub captions_dir: Option<PathBuf>,
    pub examples_dir: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
}

fn preset(name: &str) -> Result<PipelineConfig> {
    match PipelineConfig::preset(name) {
        Some(p) => Ok(p),
        None => bail!("unknown preset `{name}` (expected one of {})", PRESET_NAMES.join(", ")),
    }
}

/// Reads `path` (if any) on top of `preset_flag`, the file's `preset`, or P6.
pub fn load(path: Option<&Path>, preset_flag: Option<&str>) -> Result<Settings> {
    let (file, base_dir) = match path {
        Some(p) => {
            let raw = std::fs::read(p).with_context(|| format!("reading config {}", p.display()))?;
            let file: FileConfig = serde_json::from_slice(&raw).with_context(|| format!("config {}", p.display()))?;
            (file, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (FileConfig::default(), PathBuf::new()),
    };
    let name = preset_flag.or(file.preset.as_deref()).unwrap_or("P6");
    let mut merged = match serde_json::to_value(preset(name)?)? {
        Value::Object(m) => m,
        _ => unreachable!("config serializes to an object"),
    };
    merged.extend(file.pipeline);
    let pipeline: PipelineConfig = serde_json::from_value(Value::Object(merged))
        .with_context(|| format!("config {}", path.map(|p| p.display().to_string()).unwrap_or_default()))?;

    let resolve = |p: Option<PathBuf>| p.map(|p| if p.is_absolute() { p } else { base_dir.join(p) });
    let mut backend = file.backend;
    backend.script = resolve(backend.script);
    backend.store = resolve(backend.store);
    backend.retry.validate().map_err(anyhow::Error::msg)?;
    Ok(Settings {
        pipeline,
        backend,
        cache: resolve(file.cache),
        corpus: resolve(file.corpus),
        captions_dir: resolve(file.captions_dir),
        examples_dir: resolve(file.examples_dir),
        templates_dir: resolve(file.templates_dir),
    })
}
