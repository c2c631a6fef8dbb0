use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}", config_message(*line, key, msg))]
    Config { line: Option<usize>, key: String, msg: String },

    #[error(transparent)]
    Core(#[from] eqalign_core::Error),

    #[error("theory check failed: {0}")]
    TheoryViolation(String),
}

fn config_message(line: Option<usize>, key: &str, msg: &str) -> String {
    match line {
        Some(l) => format!("config line {l}: `{key}`: {msg}"),
        None => format!("config: `{key}`: {msg}"),
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn config(line: Option<usize>, key: impl Into<String>, msg: impl Into<String>) -> Self {
        CliError::Config {
            line,
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// 0 success, 2 configuration or input error, 3 numeric failure, 4 theory-check violation.
    pub fn exit_code(&self) -> i32 {
        use eqalign_core::Error as E;
        match self {
            CliError::Config { .. } => 2,
            CliError::TheoryViolation(_) => 4,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(E::Singularity { .. }) => 3,
            CliError::Core(
                E::Config { .. } | E::Schema(_) | E::Io(_) | E::EmptySystem | E::InsufficientSamples { .. },
            ) => 2,
            CliError::Core(_) => 1,
        }
    }
}
