//! Single-run pipeline: mesh → problem → transient → artifacts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use foilfem::formulations::{build_problem, Formulation, Problem, ProblemOptions, StepInput};
use foilfem::mesh::msh::{read_msh_ascii, write_msh};
use foilfem::mesh::{generate_coil_mesh, Mesh, MeshMode};
use foilfem::postproc::{
    export_csv, export_vtk, field_snapshot, formulation_name, Summary, TransientResult,
};
use foilfem::solver::run_transient;

use crate::config::{family_name, MeshSource, RunConfig};
use crate::CliError;

/// Outcome of a successful run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: Summary,
    pub result: TransientResult,
}

/// Failure record written to `summary.json` when a run aborts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureRecord {
    pub formulation: Formulation,
    pub label: String,
    pub failure: String,
    pub exit_code: i32,
}

pub fn mesh_mode(f: Formulation) -> MeshMode {
    match f {
        Formulation::AvResolved => MeshMode::Resolved,
        _ => MeshMode::Homogenized,
    }
}

/// Generates or reads the mesh named by the configuration.
pub fn load_mesh(cfg: &RunConfig) -> Result<Mesh, CliError> {
    match &cfg.mesh {
        MeshSource::Generate => Ok(generate_coil_mesh(&cfg.geometry, mesh_mode(cfg.formulation))?),
        MeshSource::Msh(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            read_msh_ascii(&text).map_err(|e| CliError::Config(format!("mesh: {e}")))
        }
    }
}

/// Builds the discrete problem of a configuration.
pub fn build(cfg: &RunConfig) -> Result<Problem, CliError> {
    let mesh = load_mesh(cfg)?;
    let stacks = cfg.geometry.meshed_stacks()?;
    let n = &cfg.numerics;
    let opts = ProblemOptions {
        formulation: cfg.formulation,
        basis: cfg.basis,
        params: cfg.material.clone(),
        a_space: n.a_space,
        theta: n.theta,
        quad_conductor: n.quad_conductor,
        quad_shell: n.quad_shell,
        dirichlet: n.dirichlet.clone(),
        shell_radii: n
            .shell_transform
            .then_some((cfg.geometry.air_radius, cfg.geometry.shell_radius)),
        symmetry_factor: cfg.geometry.symmetry.factor(),
    };
    Ok(build_problem(mesh, &stacks, &opts)?)
}

/// Runs the transient without touching the disk.
pub fn execute(cfg: &RunConfig) -> Result<(Problem, RunOutcome), CliError> {
    let problem = build(cfg)?;
    let result = run_transient(&problem, &cfg.transient, &cfg.newton, &cfg.snapshots)?;
    let summary = Summary::from_result(
        &result,
        cfg.turns(),
        cfg.basis.n_p,
        family_name(cfg.basis.family),
    );
    Ok((problem, RunOutcome { summary, result }))
}

/// Runs a configuration and, when `out` is given, writes the echoed config,
/// `summary.json`, `steps.csv`, `steps_summary.csv` and snapshot VTK files.
/// A failed run still leaves a `summary.json` with a failure record.
pub fn cmd_run(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutcome, CliError> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        write_json(&dir.join("config.json"), cfg)?;
    }
    let (problem, outcome) = match execute(cfg) {
        Ok(v) => v,
        Err(e) => {
            if let Some(dir) = out {
                let record = FailureRecord {
                    formulation: cfg.formulation,
                    label: cfg.label(),
                    failure: e.to_string(),
                    exit_code: e.exit_code(),
                };
                write_json(&dir.join("summary.json"), &record)?;
            }
            return Err(e);
        }
    };
    if let Some(dir) = out {
        write_json(&dir.join("summary.json"), &outcome.summary)?;
        export_csv(&outcome.result, &dir.join("steps.csv"))
            .map_err(|e| CliError::Io(e.to_string()))?;
        if cfg.output.vtk {
            for (k, z, z_prev, dt, current) in &outcome.result.snapshot_states {
                let step = StepInput::new(z_prev, *dt, *current);
                let t = *k as f64 * cfg.transient.dt();
                let snap = field_snapshot(&problem, t, z, &step)?;
                export_vtk(&snap, &problem.mesh, &dir.join(format!("snapshot_{k:05}.vtk")))
                    .map_err(|e| CliError::Io(e.to_string()))?;
            }
        }
    }
    Ok(outcome)
}

/// Writes the mesh of a configuration as MSH 4.1 and returns its size.
pub fn cmd_mesh(cfg: &RunConfig, out: &Path) -> Result<(usize, usize), CliError> {
    let mesh = load_mesh(cfg)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let name = format!("mesh_{}.msh", formulation_name(cfg.formulation));
    let path = out.join(name);
    std::fs::write(&path, write_msh(&mesh)).map_err(|e| CliError::io(&path, e))?;
    Ok((mesh.nodes.len(), mesh.triangles.len()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}
