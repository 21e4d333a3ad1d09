use std::fmt::Display;
use std::path::Path;
use std::process::ExitCode;

/// Exit classes: 1 usage, 2 data, 3 internal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Data,
    Internal,
}

impl Kind {
    pub fn exit_code(self) -> ExitCode {
        ExitCode::from(match self {
            Kind::Usage => 1,
            Kind::Data => 2,
            Kind::Internal => 3,
        })
    }

    fn label(self) -> &'static str {
        match self {
            Kind::Usage => "usage error",
            Kind::Data => "data error",
            Kind::Internal => "internal error",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: Kind, message: impl Display) -> Self {
        Self {
            kind,
            message: message.to_string(),
        }
    }

    pub fn usage(message: impl Display) -> Self {
        Self::new(Kind::Usage, message)
    }

    pub fn data(message: impl Display) -> Self {
        Self::new(Kind::Data, message)
    }

    pub fn internal(message: impl Display) -> Self {
        Self::new(Kind::Internal, message)
    }

    /// One line: newlines inside wrapped messages are flattened.
    pub fn line(&self) -> String {
        format!(
            "cotton-yield: {}: {}",
            self.kind.label(),
            self.message.replace('\n', " ")
        )
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Extension for attaching a file path and an exit class to a library error.
pub trait Context<T> {
    fn data_at(self, path: &Path) -> CliResult<T>;
    fn write_at(self, path: &Path) -> CliResult<T>;
}

impl<T, E: Display> Context<T> for Result<T, E> {
    fn data_at(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    fn write_at(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| CliError::internal(format!("writing {}: {e}", path.display())))
    }
}
