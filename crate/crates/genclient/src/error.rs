use std::path::PathBuf;

use crate::request::RequestKind;

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("segment {segment_id}: {kind} request rejected with HTTP {status}: {body}")]
    Rejected {
        segment_id: String,
        kind: RequestKind,
        status: u16,
        body: String,
    },
    #[error("segment {segment_id}: {kind} request failed after {attempts} attempt(s): {last_error}")]
    Exhausted {
        segment_id: String,
        kind: RequestKind,
        attempts: u32,
        last_error: String,
    },
    #[error("segment {segment_id}: cannot read image {}: {source}", path.display())]
    Image {
        segment_id: String,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GenError {
    pub fn segment_id(&self) -> Option<&str> {
        match self {
            GenError::Config(_) => None,
            GenError::Rejected { segment_id, .. }
            | GenError::Exhausted { segment_id, .. }
            | GenError::Image { segment_id, .. } => Some(segment_id),
        }
    }

    /// Errors that retrying or continuing with other segments cannot fix.
    pub fn is_configuration(&self) -> bool {
        matches!(self, GenError::Config(_) | GenError::Rejected { .. })
    }
}
