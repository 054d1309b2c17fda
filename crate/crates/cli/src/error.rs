use std::fmt;

use feat_core::Error;

/// Every failure maps to one machine-parsable line, `error[<code>]: <message>`,
/// and an exit status: 2 for configuration and artifact problems, 3 for
/// numerical or data failures.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    MissingArtifact(String),
    Core(Error),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingArtifact(_) => "missing-artifact",
            CliError::Core(e) => match e {
                Error::Shape(_) => "shape",
                Error::Range(_) => "range",
                Error::Config(_) => "config",
                Error::Numerical(_) => "numerical",
                Error::Parse { .. } => "parse",
                Error::Unavailable(_) => "unavailable",
                Error::Unsupported(_) => "unsupported",
                Error::Empty(_) => "empty-ledger",
                Error::Io(_) => "io",
            },
        }
    }

    pub fn exit_status(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::MissingArtifact(_) => 2,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::Parse { .. } | Error::Unsupported(_) | Error::Unavailable(_) => 2,
                Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
                _ => 3,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            CliError::Config(m) | CliError::MissingArtifact(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        };
        // Keep the diagnostic on one line.
        write!(f, "error[{}]: {}", self.code(), msg.replace('\n', " "))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}
