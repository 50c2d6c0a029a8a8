use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Core(#[from] prodehaze_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Dataset(_) => "dataset",
            CliError::Core(e) => e.kind(),
            CliError::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Machine-readable failure report printed to stderr before a nonzero exit.
#[derive(Serialize)]
pub struct ErrorReport<'a> {
    pub error: ErrorBody<'a>,
}

#[derive(Serialize)]
pub struct ErrorBody<'a> {
    pub kind: &'a str,
    pub message: String,
}

impl CliError {
    pub fn to_report_json(&self) -> String {
        let report = ErrorReport {
            error: ErrorBody {
                kind: self.kind(),
                message: self.to_string(),
            },
        };
        serde_json::to_string(&report).expect("error report serializes")
    }
}
