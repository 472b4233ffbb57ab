use thiserror::Error;

use crate::foil::FoilError;
use crate::formulations::AssemblyError;
use crate::materials::MaterialError;
use crate::mesh::msh::MshError;
use crate::mesh::GeometryError;
use crate::solver::SolverError;
use crate::spaces::SpaceError;

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Msh(#[from] MshError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Foil(#[from] FoilError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
