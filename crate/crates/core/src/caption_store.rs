//! Per-clip caption documents: schedule arithmetic, ingestion and selection.
//!
//! A caption document is the output contract of an upstream captioner: one
//! entry per fixed-length clip window, each carrying up to five caption
//! variants in the captioner's own order.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

/// Maximum number of caption variants a clip may carry.
pub const MAX_VARIANTS: usize = 5;

/// Caption counts accepted by [`select_captions`].
pub const CAPTION_COUNTS: [u8; 3] = [1, 3, 5];

// Declared windows in a file are compared against the derived schedule with
// this absolute tolerance (seconds); the stored windows are always the
// derived ones.
const WINDOW_TOLERANCE_S: f64 = 1e-6;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CaptionError {
    #[error("invalid schedule: duration {duration_s}s, interval {interval_s}s (both must be finite and > 0)")]
    InvalidSchedule { duration_s: f64, interval_s: f64 },
    #[error("malformed caption document at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("schema error{}: {message}", clip.map(|c| format!(" in clip {c}")).unwrap_or_default())]
    Schema { clip: Option<usize>, message: String },
    #[error("caption count k={0} is not one of 1, 3, 5")]
    Config(u8),
}

impl CaptionError {
    fn schema(clip: Option<usize>, message: impl Into<String>) -> Self {
        CaptionError::Schema { clip, message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipWindow {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
}

impl ClipWindow {
    pub fn len_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Splits `[0, duration_s]` into contiguous windows of `interval_s`, the last
/// one possibly shorter.
pub fn segment_schedule(duration_s: f64, interval_s: f64) -> Result<Vec<ClipWindow>, CaptionError> {
    let valid = |v: f64| v.is_finite() && v > 0.0;
    if !valid(duration_s) || !valid(interval_s) {
        return Err(CaptionError::InvalidSchedule { duration_s, interval_s });
    }
    let mut count = (duration_s / interval_s).ceil() as usize;
    // rounding in the quotient can add a zero-length trailing window
    while count > 1 && (count - 1) as f64 * interval_s >= duration_s {
        count -= 1;
    }
    let count = count.max(1);
    let windows = (0..count)
        .map(|index| ClipWindow {
            index,
            start_s: index as f64 * interval_s,
            end_s: if index + 1 == count {
                duration_s
            } else {
                (index + 1) as f64 * interval_s
            },
        })
        .collect();
    Ok(windows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipCaptions {
    pub window: ClipWindow,
    pub variants: Vec<String>,
}

/// A validated caption document. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoCaptionDoc {
    video_id: String,
    duration_s: f64,
    interval_s: f64,
    clips: Vec<ClipCaptions>,
    provenance: Option<serde_json::Map<String, serde_json::Value>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDoc {
    video_id: String,
    duration_s: f64,
    interval_s: f64,
    clips: Vec<RawClip>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Map<String, serde_json::Value>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClip {
    index: usize,
    start_s: f64,
    end_s: f64,
    captions: Vec<String>,
}

impl VideoCaptionDoc {
    /// Builds a document from per-clip variant lists, deriving the windows.
    pub fn new(
        video_id: impl Into<String>,
        duration_s: f64,
        interval_s: f64,
        variants: Vec<Vec<String>>,
    ) -> Result<Self, CaptionError> {
        let schedule = segment_schedule(duration_s, interval_s)?;
        let video_id = video_id.into();
        if video_id.trim().is_empty() {
            return Err(CaptionError::schema(None, "video_id is empty"));
        }
        check_clip_count(variants.len(), schedule.len(), duration_s, interval_s)?;
        let clips = schedule
            .into_iter()
            .zip(variants)
            .map(|(window, variants)| {
                check_variants(window.index, &variants)?;
                Ok(ClipCaptions { window, variants })
            })
            .collect::<Result<Vec<_>, CaptionError>>()?;
        Ok(VideoCaptionDoc { video_id, duration_s, interval_s, clips, provenance: None })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    pub fn interval_s(&self) -> f64 {
        self.interval_s
    }

    pub fn clips(&self) -> &[ClipCaptions] {
        &self.clips
    }

    /// Upstream metadata (e.g. frames sampled per clip), carried verbatim.
    pub fn provenance(&self) -> Option<&serde_json::Map<String, serde_json::Value>> {
        self.provenance.as_ref()
    }

    pub fn total_captions(&self) -> usize {
        self.clips.iter().map(|c| c.variants.len()).sum()
    }

    pub fn to_json(&self) -> String {
        let raw = RawDoc {
            video_id: self.video_id.clone(),
            duration_s: self.duration_s,
            interval_s: self.interval_s,
            clips: self
                .clips
                .iter()
                .map(|c| RawClip {
                    index: c.window.index,
                    start_s: c.window.start_s,
                    end_s: c.window.end_s,
                    captions: c.variants.clone(),
                })
                .collect(),
            provenance: self.provenance.clone(),
        };
        serde_json::to_string(&raw).expect("caption doc serializes")
    }
}

fn check_clip_count(got: usize, expected: usize, duration_s: f64, interval_s: f64) -> Result<(), CaptionError> {
    if got == 0 {
        return Err(CaptionError::schema(None, "clip list is empty"));
    }
    if got != expected {
        return Err(CaptionError::schema(
            Some(got.min(expected)),
            format!("expected {expected} clips for duration {duration_s}s at interval {interval_s}s, found {got}"),
        ));
    }
    Ok(())
}

fn check_variants(clip: usize, variants: &[String]) -> Result<(), CaptionError> {
    if variants.is_empty() {
        return Err(CaptionError::schema(Some(clip), "no captions"));
    }
    if variants.len() > MAX_VARIANTS {
        return Err(CaptionError::schema(
            Some(clip),
            format!("{} captions exceeds the maximum of {MAX_VARIANTS}", variants.len()),
        ));
    }
    if let Some(pos) = variants.iter().position(|v| v.trim().is_empty()) {
        return Err(CaptionError::schema(Some(clip), format!("caption {pos} is empty")));
    }
    Ok(())
}

/// Converts serde_json's line/column position into a byte offset into `text`.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Parses and validates a caption document.
pub fn ingest_caption_doc(raw: &[u8]) -> Result<VideoCaptionDoc, CaptionError> {
    let text = std::str::from_utf8(raw).map_err(|e| CaptionError::Parse {
        offset: e.valid_up_to(),
        message: "invalid UTF-8".into(),
    })?;
    let doc: RawDoc = serde_json::from_str(text).map_err(|e| CaptionError::Parse {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;

    let schedule = segment_schedule(doc.duration_s, doc.interval_s)?;
    if doc.video_id.trim().is_empty() {
        return Err(CaptionError::schema(None, "video_id is empty"));
    }
    check_clip_count(doc.clips.len(), schedule.len(), doc.duration_s, doc.interval_s)?;

    let mut clips = Vec::with_capacity(schedule.len());
    for (pos, (window, clip)) in schedule.into_iter().zip(doc.clips).enumerate() {
        if clip.index != pos {
            return Err(CaptionError::schema(
                Some(pos),
                format!("declared index {} does not match position {pos}", clip.index),
            ));
        }
        let off = |a: f64, b: f64| (a - b).abs() > WINDOW_TOLERANCE_S || (a - b).is_nan();
        if off(clip.start_s, window.start_s) || off(clip.end_s, window.end_s) {
            return Err(CaptionError::schema(
                Some(pos),
                format!(
                    "declared window [{}, {}) does not match schedule [{}, {})",
                    clip.start_s, clip.end_s, window.start_s, window.end_s
                ),
            ));
        }
        check_variants(pos, &clip.captions)?;
        clips.push(ClipCaptions { window, variants: clip.captions });
    }

    Ok(VideoCaptionDoc {
        video_id: doc.video_id,
        duration_s: doc.duration_s,
        interval_s: doc.interval_s,
        clips,
        provenance: doc.provenance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectedClip {
    pub window: ClipWindow,
    pub captions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectedCaptions {
    pub video_id: String,
    pub k: u8,
    pub per_clip: Vec<SelectedClip>,
}

impl SelectedCaptions {
    pub fn total(&self) -> usize {
        self.per_clip.iter().map(|c| c.captions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }
}

/// Keeps the first `k` captions of each clip after dropping exact duplicates
/// (compared after trimming whitespace, first occurrence wins).
pub fn select_captions(doc: &VideoCaptionDoc, k: u8) -> Result<SelectedCaptions, CaptionError> {
    if !CAPTION_COUNTS.contains(&k) {
        return Err(CaptionError::Config(k));
    }
    let per_clip = doc
        .clips
        .iter()
        .map(|clip| {
            let mut seen = HashSet::new();
            let captions = clip
                .variants
                .iter()
                .filter(|v| seen.insert(v.trim()))
                .take(k as usize)
                .cloned()
                .collect();
            SelectedClip { window: clip.window, captions }
        })
        .collect();
    Ok(SelectedCaptions { video_id: doc.video_id.clone(), k, per_clip })
}
