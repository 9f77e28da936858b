use std::path::PathBuf;

use causreg_core::Error as CoreError;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Ingest(#[from] IngestError),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("duplicate result key {0}")]
    DuplicateKey(String),

    #[error("cannot plot an empty table")]
    EmptyTable,

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("malformed csv: {0}")]
    Csv(String),

    #[error("missing column {0:?}")]
    MissingColumn(String),

    #[error("row {row}, column {col:?}: not a finite number")]
    NonNumericCell { row: usize, col: String },

    #[error("row {row}: unknown environment label {label:?}")]
    UnknownLabel { row: usize, label: String },

    #[error("environment {0:?} has no rows")]
    EmptyEnvironment(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    exit_code: i32,
    message: String,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Ingest(_) => "data",
            CliError::Core(e) if e.is_numerical() => "numerical",
            CliError::Core(CoreError::TooFewObservations(_) | CoreError::DegenerateResample) => "data",
            CliError::Core(_) => "config",
            CliError::DuplicateKey(_) | CliError::EmptyTable => "internal",
            CliError::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => EXIT_CONFIG,
            "data" => EXIT_DATA,
            "numerical" => EXIT_NUMERICAL,
            _ => 1,
        }
    }

    /// One-line JSON record for stderr.
    pub fn record(&self) -> String {
        let rec = ErrorRecord { error: self.kind(), exit_code: self.exit_code(), message: self.to_string() };
        serde_json::to_string(&rec).expect("error record serializes")
    }
}
