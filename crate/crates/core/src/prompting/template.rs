//! `{{slot}}` templates with content-derived versions.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::digest::Digest;

/// Slot after which the task portion of a prompt begins.
pub const ICL_SLOT: &str = "icl_block";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    Summary,
    AnswerTwoPhase,
    AnswerOnePhase,
    Reflection,
}

impl TemplateName {
    pub const ALL: [TemplateName; 4] = [
        TemplateName::Summary,
        TemplateName::AnswerTwoPhase,
        TemplateName::AnswerOnePhase,
        TemplateName::Reflection,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::Summary => "summary",
            TemplateName::AnswerTwoPhase => "answer_two_phase",
            TemplateName::AnswerOnePhase => "answer_one_phase",
            TemplateName::Reflection => "reflection",
        }
    }

    fn required_slots(self) -> &'static [&'static str] {
        match self {
            TemplateName::Summary => &[ICL_SLOT, "captions"],
            TemplateName::AnswerTwoPhase => &[ICL_SLOT, "captions", "summary", "question", "options"],
            TemplateName::AnswerOnePhase => &[ICL_SLOT, "captions", "question", "options"],
            TemplateName::Reflection => &["task", "prior_answer", "prior_reason", "prior_confidence"],
        }
    }

    fn builtin_skeleton(self) -> &'static str {
        match self {
            TemplateName::Summary => include_str!("../../templates/summary.txt"),
            TemplateName::AnswerTwoPhase => include_str!("../../templates/answer_two_phase.txt"),
            TemplateName::AnswerOnePhase => include_str!("../../templates/answer_one_phase.txt"),
            TemplateName::Reflection => include_str!("../../templates/reflection.txt"),
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: TemplateName,
    version: String,
    skeleton: String,
    segments: Vec<Segment>,
}

fn parse_segments(skeleton: &str) -> Result<Vec<Segment>, String> {
    let mut segments = Vec::new();
    let mut rest = skeleton;
    while let Some(open) = rest.find("{{") {
        if open > 0 {
            segments.push(Segment::Text(rest[..open].to_string()));
        }
        let after = &rest[open + 2..];
        let close = after.find("}}").ok_or("unterminated `{{`")?;
        let name = after[..close].trim();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
            return Err(format!("invalid slot name `{name}`"));
        }
        segments.push(Segment::Slot(name.to_string()));
        rest = &after[close + 2..];
    }
    if !rest.is_empty() {
        segments.push(Segment::Text(rest.to_string()));
    }
    Ok(segments)
}

impl PromptTemplate {
    pub fn parse(name: TemplateName, skeleton: impl Into<String>) -> Result<Self, PromptError> {
        let skeleton = skeleton.into();
        let bad = |msg: String| PromptError::Template { name, message: msg };
        let segments = parse_segments(&skeleton).map_err(bad)?;

        let found: BTreeSet<&str> = segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(n) => Some(n.as_str()),
                Segment::Text(_) => None,
            })
            .collect();
        let required: BTreeSet<&str> = name.required_slots().iter().copied().collect();
        if found != required {
            return Err(bad(format!("slots {found:?} do not match required {required:?}")));
        }
        let icl_uses = segments.iter().filter(|s| matches!(s, Segment::Slot(n) if n == ICL_SLOT)).count();
        if required.contains(ICL_SLOT) && icl_uses != 1 {
            return Err(bad(format!("`{ICL_SLOT}` must appear exactly once")));
        }

        let version = Digest::of(&skeleton).short(12);
        Ok(PromptTemplate { name, version, skeleton, segments })
    }

    pub fn name(&self) -> TemplateName {
        self.name
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn skeleton(&self) -> &str {
        &self.skeleton
    }

    /// Fills every slot. Returns the text and the byte offset just past the
    /// `icl_block` slot (0 when the template has none).
    pub fn render(&self, values: &[(&str, &str)]) -> Result<(String, usize), PromptError> {
        for (key, _) in values {
            if !self.name.required_slots().contains(key) {
                return Err(PromptError::Template {
                    name: self.name,
                    message: format!("value supplied for unknown slot `{key}`"),
                });
            }
        }
        let mut out = String::with_capacity(self.skeleton.len() * 2);
        let mut task_start = 0;
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(slot) => {
                    let value = values
                        .iter()
                        .find(|(k, _)| k == slot)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| PromptError::Template {
                            name: self.name,
                            message: format!("no value for slot `{slot}`"),
                        })?;
                    out.push_str(value);
                    if slot == ICL_SLOT {
                        task_start = out.len();
                    }
                }
            }
        }
        Ok((out, task_start))
    }
}

/// One template per prompt kind.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    summary: PromptTemplate,
    answer_two_phase: PromptTemplate,
    answer_one_phase: PromptTemplate,
    reflection: PromptTemplate,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let load = |n: TemplateName| PromptTemplate::parse(n, n.builtin_skeleton()).expect("builtin template is valid");
        TemplateSet {
            summary: load(TemplateName::Summary),
            answer_two_phase: load(TemplateName::AnswerTwoPhase),
            answer_one_phase: load(TemplateName::AnswerOnePhase),
            reflection: load(TemplateName::Reflection),
        }
    }

    /// Loads `<name>.txt` from `dir` for each template, falling back to the
    /// builtin text for files that are absent.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        for name in TemplateName::ALL {
            let path = dir.join(format!("{name}.txt"));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| PromptError::Io(format!("{}: {e}", path.display())))?;
            *set.slot_mut(name) = PromptTemplate::parse(name, text)?;
        }
        Ok(set)
    }

    fn slot_mut(&mut self, name: TemplateName) -> &mut PromptTemplate {
        match name {
            TemplateName::Summary => &mut self.summary,
            TemplateName::AnswerTwoPhase => &mut self.answer_two_phase,
            TemplateName::AnswerOnePhase => &mut self.answer_one_phase,
            TemplateName::Reflection => &mut self.reflection,
        }
    }

    pub fn get(&self, name: TemplateName) -> &PromptTemplate {
        match name {
            TemplateName::Summary => &self.summary,
            TemplateName::AnswerTwoPhase => &self.answer_two_phase,
            TemplateName::AnswerOnePhase => &self.answer_one_phase,
            TemplateName::Reflection => &self.reflection,
        }
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}
