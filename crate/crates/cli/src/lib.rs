//! Scenario runner for `hmpc`: TOML scenarios in, CSV tables and JSON
//! manifests out.

pub mod bundles;
pub mod commands;
pub mod config;
pub mod manifest;

pub use bundles::{reproduce, BundleReport, SummaryRow, BUNDLES};
pub use config::ScenarioConfig;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
struct Guide;

/// Process exit status of a subcommand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    CheckFailed = 1,
    Stalled = 2,
    Diverged = 3,
    Inconclusive = 4,
}

impl Status {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_verdict(v: hmpc::mpc::Verdict) -> Self {
        use hmpc::mpc::Verdict;
        match v {
            Verdict::Converged => Status::Success,
            Verdict::Stalled => Status::Stalled,
            Verdict::Diverged => Status::Diverged,
            Verdict::Inconclusive => Status::Inconclusive,
        }
    }
}

/// Bad invocation or input (exit 64).
pub const EXIT_USAGE: u8 = 64;
/// Failure reading or writing files (exit 74).
pub const EXIT_IO: u8 = 74;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] hmpc::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Model(e) => match e {
                hmpc::Error::Integration { .. } | hmpc::Error::OriginNotEquilibrium(_) => Status::CheckFailed.code(),
                _ => EXIT_USAGE,
            },
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

pub(crate) fn write_file(path: &std::path::Path, contents: &str) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, contents).map_err(io)
}
