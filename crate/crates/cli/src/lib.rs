//! The `slap` command-line tool: scenario runs, attack suites, benchmarks,
//! test vectors and byte accounting.

pub mod accounting;
pub mod attacks;
pub mod bench;
pub mod fixture;
pub mod report;
pub mod run;
pub mod scenario;
pub mod stats;
pub mod vectors;

/// Failure classes, each with a stable exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// An honest scenario saw a protocol rejection.
    #[error("rejected: {0}")]
    Rejected(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] scenario::ScenarioError),
    #[error("internal: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Rejected(_) | CliError::Internal(_) => 1,
            CliError::Config(_) | CliError::Scenario(_) | CliError::Io(_) => 2,
        }
    }
}
