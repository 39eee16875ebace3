use std::io::ErrorKind;

use serde::Serialize;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_MISSING: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Missing(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Missing(_) => EXIT_MISSING,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Missing(_) => "missing-dependency",
        }
    }

    /// One JSON object on one line.
    pub fn to_json_line(&self, stage: Option<&str>) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: &'a str,
            code: u8,
            #[serde(skip_serializing_if = "Option::is_none")]
            stage: Option<&'a str>,
            message: String,
        }
        serde_json::to_string(&Line {
            error: self.kind(),
            code: self.code(),
            stage,
            message: self.to_string().replace('\n', " "),
        })
        .expect("error line serializes")
    }
}

impl From<euph_core::Error> for CliError {
    fn from(err: euph_core::Error) -> Self {
        use euph_core::Error as E;
        let message = err.to_string();
        match err {
            E::Io { ref source, .. } if source.kind() == ErrorKind::NotFound => CliError::Missing(message),
            E::MissingEmbedding(_) | E::MissingSense(_) => CliError::Missing(message),
            E::Config(_) | E::EvenEnsemble(_) | E::InvalidDelimiters(_) => CliError::Usage(message),
            _ => CliError::Data(message),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        if err.kind() == ErrorKind::NotFound {
            CliError::Missing(err.to_string())
        } else {
            CliError::Data(err.to_string())
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(err: serde_json::Error) -> Self {
        CliError::Data(err.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
