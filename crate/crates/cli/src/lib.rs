//! Configuration-driven scenario runner for `foilfem`.
//!
//! The binary is a thin `clap` front end over these functions, which the
//! acceptance tests call directly.

pub mod config;
pub mod run;
pub mod sweep;

use std::path::Path;

use thiserror::Error;

pub use config::{load_config, parse_config, RunConfig};
pub use run::{cmd_mesh, cmd_run, execute, RunOutcome};
pub use sweep::{cmd_compare, cmd_sweep, CompareReport, SweepAxis, SweepReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    /// Process exit code: 2 configuration, 3 solver, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<foilfem::Error> for CliError {
    fn from(e: foilfem::Error) -> Self {
        use foilfem::Error as E;
        match e {
            E::Io(_) | E::Json(_) => CliError::Io(e.to_string()),
            E::Solver(_) => CliError::Solver(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

macro_rules! via_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                foilfem::Error::from(e).into()
            }
        }
    )*};
}

via_core!(
    foilfem::mesh::GeometryError,
    foilfem::formulations::AssemblyError,
    foilfem::solver::SolverError
);

impl From<foilfem::postproc::PostprocError> for CliError {
    fn from(e: foilfem::postproc::PostprocError) -> Self {
        CliError::Solver(e.to_string())
    }
}
