use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unknown analysis `{0}`")]
    UnknownAnalysis(String),
    #[error("unknown registry label `{0}`")]
    UnknownLabel(String),
    #[error("unknown tolerance `{0}`")]
    UnknownTolerance(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("golden file error: {0}")]
    Golden(String),
}

impl CliError {
    /// Process exit code: 2 for everything raised before any analysis runs.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
