use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PromptError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IclKind {
    Summary,
    Answer,
}

/// A worked example prepended to a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawExample")]
pub struct IclExample {
    id: String,
    kind: IclKind,
    body: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExample {
    id: String,
    kind: IclKind,
    body: String,
}

impl TryFrom<RawExample> for IclExample {
    type Error = PromptError;

    fn try_from(raw: RawExample) -> Result<Self, Self::Error> {
        IclExample::new(raw.id, raw.kind, raw.body)
    }
}

impl IclExample {
    pub fn new(id: impl Into<String>, kind: IclKind, body: impl Into<String>) -> Result<Self, PromptError> {
        let id = id.into();
        let body = body.into();
        if body.trim().is_empty() {
            return Err(PromptError::Example(format!("`{id}` has an empty body")));
        }
        Ok(IclExample { id, kind, body })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> IclKind {
        self.kind
    }

    pub fn body(&self) -> &str {
        &self.body
    }
}

/// Examples in load order; selection takes the first N of a kind.
#[derive(Debug, Clone, Default)]
pub struct IclLibrary {
    examples: Vec<IclExample>,
}

impl IclLibrary {
    pub fn new(examples: Vec<IclExample>) -> Self {
        IclLibrary { examples }
    }

    pub fn load_file(path: &Path) -> Result<IclExample, PromptError> {
        let raw = std::fs::read(path).map_err(|e| PromptError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&raw).map_err(|e| PromptError::Example(format!("{}: {e}", path.display())))
    }

    /// Loads every `*.json` in `dir`, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let entries = std::fs::read_dir(dir).map_err(|e| PromptError::Io(format!("{}: {e}", dir.display())))?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let examples = paths.iter().map(|p| Self::load_file(p)).collect::<Result<_, _>>()?;
        Ok(IclLibrary { examples })
    }

    pub fn examples(&self) -> &[IclExample] {
        &self.examples
    }

    pub fn pick(&self, kind: IclKind, n: usize) -> Result<Vec<IclExample>, PromptError> {
        let picked: Vec<_> = self.examples.iter().filter(|e| e.kind == kind).take(n).cloned().collect();
        if picked.len() < n {
            return Err(PromptError::Config(format!(
                "{n} {kind:?} examples requested, only {} available",
                picked.len()
            )));
        }
        Ok(picked)
    }
}
