//! Corpus files: one question per JSONL line, captions looked up by video id
//! in a directory of caption documents.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use super::batch::CorpusItem;
use crate::caption_store::{ingest_caption_doc, VideoCaptionDoc};
use crate::prompting::Question;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path} line {line}: {message}")]
    Line { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Captions { path: PathBuf, message: String },
    #[error("caption doc {path} declares video_id `{found}`")]
    VideoIdMismatch { path: PathBuf, found: String },
}

#[derive(Deserialize)]
struct Line {
    video_id: String,
    #[serde(flatten)]
    question: serde_json::Map<String, serde_json::Value>,
}

/// Caption document path for a video.
pub fn caption_path(captions_dir: &Path, video_id: &str) -> PathBuf {
    captions_dir.join(format!("{video_id}.json"))
}

/// Loads every question of `corpus` and the caption doc of each distinct
/// video. Blank lines are skipped.
pub fn load_corpus(corpus: &Path, captions_dir: &Path) -> Result<Vec<CorpusItem>, CorpusError> {
    let io = |path: &Path, e: std::io::Error| CorpusError::Io { path: path.to_path_buf(), message: e.to_string() };
    let text = std::fs::read_to_string(corpus).map_err(|e| io(corpus, e))?;
    let mut docs: HashMap<String, Arc<VideoCaptionDoc>> = HashMap::new();
    let mut items = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let bad = |message: String| CorpusError::Line { path: corpus.to_path_buf(), line: n + 1, message };
        let line: Line = serde_json::from_str(raw).map_err(|e| bad(e.to_string()))?;
        let question: Question =
            serde_json::from_value(serde_json::Value::Object(line.question)).map_err(|e| bad(e.to_string()))?;
        let doc = match docs.get(&line.video_id) {
            Some(d) => d.clone(),
            None => {
                let path = caption_path(captions_dir, &line.video_id);
                let bytes = std::fs::read(&path).map_err(|e| io(&path, e))?;
                let doc = ingest_caption_doc(&bytes)
                    .map_err(|e| CorpusError::Captions { path: path.clone(), message: e.to_string() })?;
                if doc.video_id() != line.video_id {
                    return Err(CorpusError::VideoIdMismatch { path, found: doc.video_id().to_string() });
                }
                let doc = Arc::new(doc);
                docs.insert(line.video_id.clone(), doc.clone());
                doc
            }
        };
        items.push(CorpusItem { doc, question });
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let caps = dir.path().join("captions");
        std::fs::create_dir(&caps).unwrap();
        let doc = VideoCaptionDoc::new("v1", 8.0, 4.0, vec![vec!["a".into()], vec!["b".into()]]).unwrap();
        std::fs::write(caption_path(&caps, "v1"), doc.to_json()).unwrap();
        dir
    }

    #[test]
    fn loads_and_shares_docs() {
        let dir = setup();
        let corpus = dir.path().join("corpus.jsonl");
        let q = |uid: &str| format!(r#"{{"question_uid":"{uid}","video_id":"v1","stem":"s","options":["a","b","c","d","e"]}}"#);
        std::fs::write(&corpus, format!("{}\n\n{}\n", q("x"), q("y"))).unwrap();
        let items = load_corpus(&corpus, &dir.path().join("captions")).unwrap();
        assert_eq!(items.len(), 2);
        assert!(Arc::ptr_eq(&items[0].doc, &items[1].doc));
    }

    #[test]
    fn reports_line_and_missing_doc() {
        let dir = setup();
        let corpus = dir.path().join("corpus.jsonl");
        std::fs::write(&corpus, "{\"question_uid\":\"x\",\"video_id\":\"v1\",\"stem\":\"s\",\"options\":[\"a\"]}\n").unwrap();
        let err = load_corpus(&corpus, &dir.path().join("captions")).unwrap_err();
        assert!(matches!(err, CorpusError::Line { line: 1, .. }), "{err}");

        std::fs::write(&corpus, r#"{"question_uid":"x","video_id":"v1","stem":"s","options":["a","b","c","d","e"],"extra":1}"#).unwrap();
        assert!(matches!(load_corpus(&corpus, &dir.path().join("captions")), Err(CorpusError::Line { .. })));

        std::fs::write(&corpus, r#"{"question_uid":"x","video_id":"v9","stem":"s","options":["a","b","c","d","e"]}"#).unwrap();
        let err = load_corpus(&corpus, &dir.path().join("captions")).unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }), "{err}");
    }
}
