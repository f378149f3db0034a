use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::caption_store::CAPTION_COUNTS;
use crate::digest::Digest;
use crate::prompting::{AnswerMode, IclExample, TemplateName, TemplateSet};
use crate::stages::MAX_CONFIDENCE;

pub const PRESET_NAMES: [&str; 6] = ["P1", "P2", "P3", "P4", "P5", "P6"];

/// Every knob of a run. Execution-only fields (`concurrency`, `rpm`, `tpm`)
/// never change results and are left out of the snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub preset_name: String,
    pub k: u8,
    pub mode: AnswerMode,
    pub summary_shots: usize,
    pub answer_shots: usize,
    pub reflection_enabled: bool,
    pub threshold: u8,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(default)]
    pub context_budget_tokens: Option<u64>,
    pub concurrency: usize,
    #[serde(default)]
    pub rpm: Option<u32>,
    #[serde(default)]
    pub tpm: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::preset("P6").expect("P6 exists")
    }
}

impl PipelineConfig {
    /// The six solution-evolution steps, from a caption-only baseline to the
    /// full pipeline with reflection.
    pub fn preset(name: &str) -> Option<Self> {
        let (k, mode, summary_shots, answer_shots, reflection_enabled) = match name {
            "P1" => (1, AnswerMode::OnePhase, 0, 0, false),
            "P2" => (3, AnswerMode::OnePhase, 0, 0, false),
            "P3" => (5, AnswerMode::OnePhase, 0, 1, false),
            "P4" => (5, AnswerMode::TwoPhase, 1, 1, false),
            "P5" => (5, AnswerMode::TwoPhase, 1, 3, false),
            "P6" => (5, AnswerMode::TwoPhase, 1, 3, true),
            _ => return None,
        };
        Some(PipelineConfig {
            preset_name: name.to_string(),
            k,
            mode,
            summary_shots,
            answer_shots,
            reflection_enabled,
            threshold: 5,
            model_name: "gpt-4o".into(),
            temperature: 0.0,
            max_output_tokens: 1024,
            context_budget_tokens: None,
            concurrency: 4,
            rpm: None,
            tpm: None,
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        if !CAPTION_COUNTS.contains(&self.k) {
            return Err(format!("k must be one of {CAPTION_COUNTS:?}, got {}", self.k));
        }
        if self.threshold > MAX_CONFIDENCE {
            return Err(format!("threshold must be in 0..={MAX_CONFIDENCE}, got {}", self.threshold));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.max_output_tokens == 0 {
            return Err("max_output_tokens must be > 0".into());
        }
        if self.concurrency == 0 {
            return Err("concurrency must be >= 1".into());
        }
        if self.rpm == Some(0) || self.tpm == Some(0) {
            return Err("rpm/tpm limits must be > 0 when set".into());
        }
        if self.model_name.trim().is_empty() {
            return Err("model_name is empty".into());
        }
        Ok(())
    }

    /// Result-affecting view of the config plus the template versions and
    /// example ids it will use.
    pub fn snapshot(&self, templates: &TemplateSet, summary_icl: &[IclExample], answer_icl: &[IclExample]) -> ConfigSnapshot {
        let template_versions =
            TemplateName::ALL.iter().map(|n| (n.as_str().to_string(), templates.get(*n).version().to_string())).collect();
        ConfigSnapshot {
            preset_name: self.preset_name.clone(),
            k: self.k,
            mode: self.mode,
            summary_shots: match self.mode {
                AnswerMode::TwoPhase => self.summary_shots,
                AnswerMode::OnePhase => 0,
            },
            answer_shots: self.answer_shots,
            reflection_enabled: self.reflection_enabled,
            threshold: self.threshold,
            model_name: self.model_name.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            context_budget_tokens: self.context_budget_tokens,
            template_versions,
            summary_icl_ids: summary_icl.iter().map(|e| e.id().to_string()).collect(),
            answer_icl_ids: answer_icl.iter().map(|e| e.id().to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigSnapshot {
    pub preset_name: String,
    pub k: u8,
    pub mode: AnswerMode,
    pub summary_shots: usize,
    pub answer_shots: usize,
    pub reflection_enabled: bool,
    pub threshold: u8,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub context_budget_tokens: Option<u64>,
    pub template_versions: BTreeMap<String, String>,
    pub summary_icl_ids: Vec<String>,
    pub answer_icl_ids: Vec<String>,
}

impl ConfigSnapshot {
    pub fn digest(&self) -> Digest {
        Digest::of(serde_json::to_string(self).expect("snapshot serializes"))
    }
}
