use std::fmt;

/// Failure classes, one exit code each.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or invalid config.
    Config(String),
    /// Missing or malformed inputs, mismatched shapes, degenerate RDMs.
    Data(String),
    /// Non-finite loss during training.
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Divergence(_) => "divergence",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Divergence(m) => m,
        }
    }
}

/// One line, `key=value` pairs, message quoted and escaped.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error kind={} code={} message={:?}", self.kind(), self.exit_code(), self.message())
    }
}

impl From<rdmnet_core::Error> for CliError {
    fn from(e: rdmnet_core::Error) -> Self {
        match e {
            rdmnet_core::Error::Divergence { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}
