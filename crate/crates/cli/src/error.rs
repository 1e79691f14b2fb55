use std::fmt;

use alignkit_core::backends::BackendError;
use alignkit_core::metric::MetricError;
use alignkit_core::promptset::PromptSetError;
use alignkit_core::records::RecordError;

/// What went wrong, as reported through the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    /// Missing or unreadable files, bad flags or configuration.
    Input,
    /// A model backend failed or returned unusable output.
    Backend,
    /// Input records violate their schema.
    Validation,
}

impl Failure {
    pub fn exit_code(self) -> u8 {
        match self {
            Failure::Input => 2,
            Failure::Backend => 3,
            Failure::Validation => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Failure,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn input(error: anyhow::Error) -> Self {
        CliError {
            kind: Failure::Input,
            error,
        }
    }

    pub fn backend(error: anyhow::Error) -> Self {
        CliError {
            kind: Failure::Backend,
            error,
        }
    }

    pub fn validation(error: anyhow::Error) -> Self {
        CliError {
            kind: Failure::Validation,
            error,
        }
    }

    pub fn context(self, ctx: impl fmt::Display + Send + Sync + 'static) -> Self {
        CliError {
            kind: self.kind,
            error: self.error.context(ctx),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl std::error::Error for CliError {}

pub(crate) fn record_error(e: RecordError) -> CliError {
    match e {
        RecordError::Io { .. } => CliError::input(e.into()),
        _ => CliError::validation(e.into()),
    }
}

pub(crate) fn backend_error(e: BackendError) -> CliError {
    match e {
        BackendError::Config(_) => CliError::input(e.into()),
        _ => CliError::backend(e.into()),
    }
}

pub(crate) fn metric_error(e: MetricError) -> CliError {
    match e {
        MetricError::Config(_) => CliError::input(e.into()),
        MetricError::Backend(b) => backend_error(b),
        _ => CliError::backend(e.into()),
    }
}

pub(crate) fn promptset_error(e: PromptSetError) -> CliError {
    match e {
        PromptSetError::Backend(b) => backend_error(b),
        PromptSetError::EmptyOutput(_) => CliError::backend(e.into()),
        _ => CliError::input(e.into()),
    }
}
