//! Failure kinds and their exit codes. Every failure is also reported as a
//! single JSON line on stderr so wrappers can parse it.

use std::path::{Path, PathBuf};

use serde::Serialize;
use truthprobe::Error as CoreError;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_PROTOCOL: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    /// Error raised by the library, tagged with the stage it came from.
    Core { stage: String, source: CoreError },
    Io { path: PathBuf, source: std::io::Error },
    Config(String),
    /// `validate` found violations (already printed as the command's output).
    ValidationFailed(usize),
    Protocol(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core { source, .. } => match source {
                CoreError::Io { .. } => EXIT_IO,
                CoreError::Protocol(_)
                | CoreError::UnknownTopic(_)
                | CoreError::Calibration(_)
                | CoreError::UndefinedMetric(_) => EXIT_PROTOCOL,
                _ => EXIT_VALIDATION,
            },
            CliError::Io { .. } => EXIT_IO,
            CliError::Config(_) | CliError::ValidationFailed(_) => EXIT_VALIDATION,
            CliError::Protocol(_) => EXIT_PROTOCOL,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            EXIT_IO => "io",
            EXIT_PROTOCOL => "protocol",
            _ => "validation",
        }
    }

    fn path(&self) -> Option<String> {
        match self {
            CliError::Io { path, .. }
            | CliError::Core {
                source: CoreError::Io { path, .. },
                ..
            } => Some(path.display().to_string()),
            _ => None,
        }
    }

    fn stage(&self) -> Option<&str> {
        match self {
            CliError::Core { stage, .. } => Some(stage),
            _ => None,
        }
    }

    /// The machine-readable error line.
    pub fn to_json_line(&self, command: &str) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: Body<'a>,
        }
        #[derive(Serialize)]
        struct Body<'a> {
            command: &'a str,
            kind: &'a str,
            exit_code: i32,
            #[serde(skip_serializing_if = "Option::is_none")]
            stage: Option<&'a str>,
            #[serde(skip_serializing_if = "Option::is_none")]
            path: Option<String>,
            message: String,
        }
        serde_json::to_string(&Line {
            error: Body {
                command,
                kind: self.kind(),
                exit_code: self.exit_code(),
                stage: self.stage(),
                path: self.path(),
                message: self.to_string(),
            },
        })
        .expect("error line serializes")
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core { stage, source } => write!(f, "{stage}: {source}"),
            CliError::Io { path, source } => write!(f, "I/O error on {}: {source}", path.display()),
            CliError::Config(m) => write!(f, "configuration: {m}"),
            CliError::ValidationFailed(n) => write!(f, "store validation found {n} violation(s)"),
            CliError::Protocol(m) => write!(f, "protocol: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Attaches a stage label to library errors.
pub trait Stage<T> {
    fn stage(self, stage: &str) -> Result<T, CliError>;
}

impl<T> Stage<T> for truthprobe::Result<T> {
    fn stage(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core {
            stage: stage.to_string(),
            source,
        })
    }
}
