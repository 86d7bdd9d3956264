use cmvspec_core::CmvError;

/// Failure classes, one per exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Hypothesis(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Numeric(_) => 3,
            Self::Hypothesis(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(m) => write!(f, "config error: {m}"),
            Self::Numeric(m) => write!(f, "numeric failure: {m}"),
            Self::Hypothesis(m) => write!(f, "hypothesis failure: {m}"),
        }
    }
}

/// Errors raised once computation has started.
impl From<CmvError> for CliError {
    fn from(e: CmvError) -> Self {
        match e {
            CmvError::Hypothesis(m) => Self::Hypothesis(m),
            other => Self::Numeric(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Config(format!("i/o: {e}"))
    }
}
