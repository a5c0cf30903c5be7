use dimt_core::bleu::BleuError;
use dimt_core::dataset::DatasetError;
use dimt_core::evaluate::EvalError;
use dimt_core::jsonl::JsonlError;
use dimt_core::mbr::MbrError;
use dimt_core::postprocess::ConfigError;
use dimt_genclient::GenError;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureClass {
    Other,
    Usage,
    /// A required input is missing or a file could not be read or written.
    Io,
    /// Malformed records, schema violations, invalid configuration values.
    Data,
    /// Hypotheses and references do not join on segment id.
    Alignment,
    /// Candidate collection failed for at least one segment.
    Collection,
}

impl FailureClass {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureClass::Other => 1,
            FailureClass::Usage => 2,
            FailureClass::Io => 3,
            FailureClass::Data => 4,
            FailureClass::Alignment => 5,
            FailureClass::Collection => 6,
        }
    }
}

pub const EXIT_CODES_HELP: &str = "\
Exit codes:
  0  success
  1  unexpected failure
  2  usage error (bad flags or stage list)
  3  missing input or file I/O error
  4  malformed data or invalid configuration
  5  hypotheses and references do not align (see --allow-partial)
  6  candidate collection failed for one or more segments";

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub class: FailureClass,
    pub message: String,
}

impl CliError {
    pub fn new(class: FailureClass, message: impl Into<String>) -> Self {
        CliError { class, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(FailureClass::Usage, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(FailureClass::Data, message)
    }

    pub fn io(context: impl std::fmt::Display, err: std::io::Error) -> Self {
        Self::new(FailureClass::Io, format!("{context}: {err}"))
    }

    /// Prefixes the message with the stage name.
    pub fn in_stage(self, stage: &str) -> Self {
        CliError { class: self.class, message: format!("stage `{stage}`: {}", self.message) }
    }

    pub fn exit_code(&self) -> i32 {
        self.class.exit_code()
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<JsonlError> for CliError {
    fn from(e: JsonlError) -> Self {
        let class = match e {
            JsonlError::Io { .. } => FailureClass::Io,
            _ => FailureClass::Data,
        };
        CliError::new(class, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Jsonl(inner) => inner.into(),
            EvalError::Alignment { .. } => CliError::new(FailureClass::Alignment, e.to_string()),
            other => CliError::data(other.to_string()),
        }
    }
}

impl From<GenError> for CliError {
    fn from(e: GenError) -> Self {
        let class = match e {
            GenError::Config(_) => FailureClass::Data,
            GenError::Image { .. } => FailureClass::Io,
            GenError::Rejected { .. } | GenError::Exhausted { .. } => FailureClass::Collection,
        };
        CliError::new(class, e.to_string())
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::data(e.to_string())
            }
        }
    )*};
}

data_error!(BleuError, DatasetError, MbrError, ConfigError, serde_json::Error);
