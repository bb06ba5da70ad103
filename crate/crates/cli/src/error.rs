use std::fmt;

/// Exit status for a failed run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 2,
    Numerical = 3,
    Io = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            kind: ExitKind::Usage,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            kind: ExitKind::Io,
            message: message.into(),
        }
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<noma_secrecy::Error> for CliError {
    fn from(e: noma_secrecy::Error) -> Self {
        use noma_secrecy::Error as E;
        let kind = match &e {
            E::Io { .. } | E::Format { .. } => ExitKind::Io,
            E::InvalidInput(_) | E::Shape(_) | E::UnsupportedDimension(_) | E::ContextMismatch(_) => ExitKind::Usage,
            E::NonFinite | E::NotPositiveDefinite { .. } | E::NotPsd { .. } => ExitKind::Numerical,
        };
        CliError {
            kind,
            message: e.to_string(),
        }
    }
}
