//! Finite-element simulation of AC losses in insulated HTS coil cross-sections.
//!
//! The crate provides two homogenized foil-conductor models of a tape stack
//! (an `A-V` form driven by a power-law conductivity and a mixed `J-A-V` form
//! driven by the power-law resistivity) together with a fully resolved
//! per-layer reference model. All three share the same meshing, function
//! spaces, constraint machinery and Newton/transient driver:
//!
//! * [`mesh`]: tagged triangle meshes, coil-section generation, MSH 4.1 I/O.
//! * [`spaces`]: P1 / hierarchically enriched P2 / P0 scalar spaces and
//!   triangle quadrature.
//! * [`materials`]: power-law constitutive laws and the shell transformation.
//! * [`foil`]: the 1D voltage-gradient basis across the stack and the
//!   weakly imposed per-turn current constraint.
//! * [`formulations`]: residual/Jacobian assembly and boundary conditions.
//! * [`solver`]: sparse LU, damped Newton, and the time-stepping driver.
//! * [`postproc`]: losses, error metrics and CSV/VTK/JSON export.

pub mod error;
pub mod foil;
pub mod formulations;
pub mod materials;
pub mod mesh;
pub mod postproc;
pub mod solver;
pub mod spaces;
pub mod sparse;

pub use error::{Error, Result};

/// Vacuum permeability (H/m).
pub const MU_0: f64 = 4.0e-7 * std::f64::consts::PI;

/// Free-space reluctivity `1/μ0` (m/H).
pub const NU_0: f64 = 1.0 / MU_0;
