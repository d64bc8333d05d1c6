//! Command-line front end. Every number it reports comes from `slds_mse`;
//! this crate only loads scenarios, dispatches and formats.

pub mod args;
pub mod chart;
pub mod commands;
pub mod output;

use std::process::ExitCode;

pub use args::Cli;
pub use commands::{run, Outcome};

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_CAPACITY: u8 = 3;
pub const EXIT_FAIL: u8 = 4;

/// Exit status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use slds_mse::Error;
    match err.downcast_ref::<Error>() {
        Some(Error::CapExceeded { .. } | Error::NonUniformChain) => EXIT_CAPACITY,
        Some(
            Error::Invalid(_)
            | Error::Json(_)
            | Error::Dimension { .. }
            | Error::InvalidArgument(_)
            | Error::ZeroStep,
        ) => EXIT_VALIDATION,
        Some(Error::SingularInnovation { .. }) | None => EXIT_RUNTIME,
    }
}

impl Outcome {
    pub fn exit_code(self) -> ExitCode {
        match self {
            Outcome::Done | Outcome::Pass => ExitCode::SUCCESS,
            Outcome::Fail => ExitCode::from(EXIT_FAIL),
        }
    }
}
