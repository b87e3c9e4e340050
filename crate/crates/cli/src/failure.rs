//! Process-level failure classes and their exit codes.

use std::fmt;
use std::process::ExitCode;
use wardsense_core::actigraphy::ActigraphyError;
use wardsense_core::deteval::DetevalError;
use wardsense_core::environs::EnvironsError;
use wardsense_core::ingest::IngestError;
use wardsense_core::posture::PostureError;
use wardsense_core::stats::StatsError;

/// Everything a subcommand can fail with, sorted into the three exit
/// classes: configuration (2), input data (3), internal (4).
#[derive(Debug)]
pub enum Failure {
    /// Invalid configuration; every detected problem, reported together.
    Config(Vec<String>),
    /// Missing or malformed input data.
    Data(String),
    /// I/O or invariant failures that are not the user's fault.
    Internal(String),
}

impl Failure {
    pub fn config(problem: impl Into<String>) -> Self {
        Failure::Config(vec![problem.into()])
    }

    pub fn data(problem: impl Into<String>) -> Self {
        Failure::Data(problem.into())
    }

    pub fn internal(problem: impl Into<String>) -> Self {
        Failure::Internal(problem.into())
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Config(_) => ExitCode::from(2),
            Failure::Data(_) => ExitCode::from(3),
            Failure::Internal(_) => ExitCode::from(4),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(problems) => {
                writeln!(f, "{} configuration problem(s):", problems.len())?;
                for p in problems {
                    writeln!(f, "  - {p}")?;
                }
                Ok(())
            }
            Failure::Data(msg) => writeln!(f, "data error: {msg}"),
            Failure::Internal(msg) => writeln!(f, "internal error: {msg}"),
        }
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<ActigraphyError> for Failure {
    fn from(e: ActigraphyError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<EnvironsError> for Failure {
    fn from(e: EnvironsError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<PostureError> for Failure {
    fn from(e: PostureError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<DetevalError> for Failure {
    fn from(e: DetevalError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<StatsError> for Failure {
    fn from(e: StatsError) -> Self {
        Failure::Data(e.to_string())
    }
}
