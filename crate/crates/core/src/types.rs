//! Shared domain types.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::jsonl::{JsonlRecord, SchemaViolation};

/// One row of a track's dataset: an image, its OCR ground truth and
/// (optionally) its reference translation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub source_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_translation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

impl Segment {
    pub fn text(id: impl Into<String>, source_text: impl Into<String>) -> Self {
        Segment {
            id: id.into(),
            source_text: source_text.into(),
            reference_translation: None,
            image_ref: None,
        }
    }

    pub fn with_reference(mut self, reference: impl Into<String>) -> Self {
        self.reference_translation = Some(reference.into());
        self
    }

    pub fn with_image(mut self, image_ref: impl Into<String>) -> Self {
        self.image_ref = Some(image_ref.into());
        self
    }

    pub fn has_source(&self) -> bool {
        !self.source_text.is_empty()
    }

    pub fn has_reference(&self) -> bool {
        self.reference_translation.as_deref().is_some_and(|r| !r.is_empty())
    }

    pub fn has_image(&self) -> bool {
        self.image_ref.as_deref().is_some_and(|r| !r.is_empty())
    }
}

impl JsonlRecord for Segment {
    fn validate(&self) -> Result<(), SchemaViolation> {
        if self.id.is_empty() {
            return Err(SchemaViolation::new("id", "must be non-empty"));
        }
        if !self.has_source() && !self.has_image() {
            return Err(SchemaViolation::new(
                "source_text",
                "one of `source_text` or `image_ref` must be non-empty",
            ));
        }
        Ok(())
    }

    fn record_id(&self) -> Option<&str> {
        Some(&self.id)
    }
}

/// Competition track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrackKind {
    /// Web documents, OCR and MT sub-tasks.
    #[serde(rename = "track1")]
    Track1WebDoc,
    /// arXiv papers, MT only.
    #[serde(rename = "track2")]
    Track2Arxiv,
}

impl TrackKind {
    pub const ALL: [TrackKind; 2] = [TrackKind::Track1WebDoc, TrackKind::Track2Arxiv];

    pub fn as_str(self) -> &'static str {
        match self {
            TrackKind::Track1WebDoc => "track1",
            TrackKind::Track2Arxiv => "track2",
        }
    }

    pub fn dataset_name(self) -> &'static str {
        match self {
            TrackKind::Track1WebDoc => "DIMT-WebDoc-300K",
            TrackKind::Track2Arxiv => "DIMT-arXiv-124K",
        }
    }

    /// Published number of examples per split.
    pub fn published_size(self, split: Split) -> usize {
        match (self, split) {
            (TrackKind::Track1WebDoc, Split::Train) => 300_000,
            (TrackKind::Track2Arxiv, Split::Train) => 124_000,
            (_, Split::Valid | Split::Test) => 1_000,
        }
    }

    pub fn admits(self, sub_task: SubTask) -> bool {
        !(self == TrackKind::Track2Arxiv && sub_task == SubTask::Ocr)
    }
}

impl fmt::Display for TrackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" | "track1" => Ok(TrackKind::Track1WebDoc),
            "2" | "track2" => Ok(TrackKind::Track2Arxiv),
            other => Err(format!("unknown track `{other}` (expected 1 or 2)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubTask {
    Ocr,
    Mt,
}

impl SubTask {
    pub fn as_str(self) -> &'static str {
        match self {
            SubTask::Ocr => "ocr",
            SubTask::Mt => "mt",
        }
    }

    /// Column label suffix, e.g. `OCR` in `Valid-OCR`.
    pub fn label(self) -> &'static str {
        match self {
            SubTask::Ocr => "OCR",
            SubTask::Mt => "MT",
        }
    }
}

impl fmt::Display for SubTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubTask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ocr" => Ok(SubTask::Ocr),
            "mt" => Ok(SubTask::Mt),
            other => Err(format!("unknown sub-task `{other}` (expected ocr or mt)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "Train",
            Split::Valid => "Valid",
            Split::Test => "Test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "valid" | "validation" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train, valid or test)")),
        }
    }
}

/// A scored sub-track: Track 2 has no OCR sub-task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTrack", into = "RawTrack")]
pub struct Track {
    kind: TrackKind,
    sub_task: SubTask,
}

#[derive(Debug, thiserror::Error)]
#[error("{kind} has no {sub_task} sub-task")]
pub struct InvalidTrack {
    pub kind: TrackKind,
    pub sub_task: SubTask,
}

impl Track {
    pub fn new(kind: TrackKind, sub_task: SubTask) -> Result<Self, InvalidTrack> {
        if kind.admits(sub_task) {
            Ok(Track { kind, sub_task })
        } else {
            Err(InvalidTrack { kind, sub_task })
        }
    }

    pub fn kind(&self) -> TrackKind {
        self.kind
    }

    pub fn sub_task(&self) -> SubTask {
        self.sub_task
    }
}

#[derive(Serialize, Deserialize)]
struct RawTrack {
    kind: TrackKind,
    sub_task: SubTask,
}

impl TryFrom<RawTrack> for Track {
    type Error = InvalidTrack;

    fn try_from(raw: RawTrack) -> Result<Self, Self::Error> {
        Track::new(raw.kind, raw.sub_task)
    }
}

impl From<Track> for RawTrack {
    fn from(t: Track) -> Self {
        RawTrack { kind: t.kind, sub_task: t.sub_task }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn track2_is_mt_only() {
        assert!(Track::new(TrackKind::Track2Arxiv, SubTask::Mt).is_ok());
        assert!(Track::new(TrackKind::Track2Arxiv, SubTask::Ocr).is_err());
        assert!(Track::new(TrackKind::Track1WebDoc, SubTask::Ocr).is_ok());
        let bad = r#"{"kind":"track2","sub_task":"ocr"}"#;
        assert!(serde_json::from_str::<Track>(bad).is_err());
    }

    #[test]
    fn segment_validation() {
        assert!(Segment::text("a", "hello").validate().is_ok());
        assert!(Segment::text("", "hello").validate().is_err());
        assert!(Segment::text("a", "").validate().is_err());
        assert!(Segment::text("a", "").with_image("p.png").validate().is_ok());
    }

    #[test]
    fn segment_optional_keys_omitted() {
        let json = serde_json::to_string(&Segment::text("s1", "hi")).unwrap();
        assert_eq!(json, r#"{"id":"s1","source_text":"hi"}"#);
    }

    #[test]
    fn published_sizes() {
        assert_eq!(TrackKind::Track1WebDoc.published_size(Split::Train), 300_000);
        assert_eq!(TrackKind::Track2Arxiv.published_size(Split::Train), 124_000);
        assert_eq!(TrackKind::Track2Arxiv.published_size(Split::Test), 1_000);
    }
}
