use std::fmt;

/// Failure class of a command, mapped onto the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    Config,
    Data,
    Numeric,
}

impl Failure {
    pub fn exit_code(self) -> i32 {
        match self {
            Failure::Config => 2,
            Failure::Data => 3,
            Failure::Numeric => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Failure,
    pub messages: Vec<String>,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: Failure::Config,
            messages: vec![message.into()],
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: Failure::Data,
            messages: vec![message.into()],
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self.kind {
            Failure::Config => "config error",
            Failure::Data => "data error",
            Failure::Numeric => "numeric failure",
        };
        for (i, m) in self.messages.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{label}: {m}")?;
        }
        Ok(())
    }
}

impl std::error::Error for CliError {}

impl From<bnn_mcmc::Error> for CliError {
    fn from(e: bnn_mcmc::Error) -> Self {
        let kind = if e.is_numeric() {
            Failure::Numeric
        } else if e.is_config() {
            Failure::Config
        } else {
            Failure::Data
        };
        Self {
            kind,
            messages: vec![e.to_string()],
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
