//! Append-only JSONL files shared by the response cache and the record store.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
}

/// Reads every record. A final line that fails to parse is treated as an
/// interrupted write: it is dropped with a warning and cut from the file so
/// later appends start on a clean line.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let io_err = |source| JsonlError::Io { path: path.to_path_buf(), source };
    let mut file = match OpenOptions::new().read(true).write(true).open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(e)),
    };
    let mut text = String::new();
    file.read_to_string(&mut text).map_err(io_err)?;

    let mut records = Vec::new();
    let mut offset = 0usize;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    for (i, line) in lines.iter().enumerate() {
        let body = line.trim_end_matches(['\n', '\r']);
        if !body.trim().is_empty() {
            match serde_json::from_str::<T>(body) {
                Ok(rec) => records.push(rec),
                Err(e) if i + 1 == lines.len() => {
                    log::warn!("{}: dropping truncated final line {}: {e}", path.display(), i + 1);
                    file.set_len(offset as u64).map_err(io_err)?;
                    return Ok(records);
                }
                Err(e) => {
                    return Err(JsonlError::Corrupt { path: path.to_path_buf(), line: i + 1, message: e.to_string() });
                }
            }
        }
        offset += line.len();
    }
    if !text.is_empty() && !text.ends_with('\n') {
        file.seek(SeekFrom::End(0)).map_err(io_err)?;
        file.write_all(b"\n").map_err(io_err)?;
    }
    Ok(records)
}

/// Serialized appends to one file; each append is flushed and synced before
/// returning.
#[derive(Debug)]
pub struct JsonlLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl JsonlLog {
    pub fn open(path: &Path) -> Result<Self, JsonlError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|source| JsonlError::Io { path: parent.to_path_buf(), source })?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| JsonlError::Io { path: path.to_path_buf(), source })?;
        Ok(JsonlLog { path: path.to_path_buf(), file: Mutex::new(file) })
    }

    pub fn append<T: Serialize>(&self, record: &T) -> Result<(), JsonlError> {
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        let io_err = |source| JsonlError::Io { path: self.path.clone(), source };
        file.write_all(line.as_bytes()).map_err(io_err)?;
        file.flush().map_err(io_err)?;
        file.sync_data().map_err(io_err)
    }
}
