use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),

    /// A verification property or a run failed.
    #[error("failure: {0}")]
    Failed(String),
}

impl CliError {
    /// 1 for failed checks or runs, 2 for configuration problems, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Failed(m) => m,
        }
    }
}

impl From<ortho_shot::Error> for CliError {
    fn from(e: ortho_shot::Error) -> Self {
        use ortho_shot::Error as E;
        match e {
            E::Config(_) | E::InvalidArgument(_) | E::Infeasible(_) | E::Geometry(_) => CliError::Config(e.to_string()),
            E::Io { .. } | E::Image { .. } | E::Checkpoint(_) | E::Data(_) => CliError::Io(e.to_string()),
            E::Numeric(_) => CliError::Failed(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
