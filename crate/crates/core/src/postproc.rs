//! Losses, error metrics, field snapshots and file export.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formulations::{AssemblyError, Formulation, Problem, StepInput};
use crate::mesh::Mesh;

#[derive(Debug, Error)]
pub enum PostprocError {
    #[error("cycle {cycle} incomplete: {have} of {need} steps present")]
    IncompleteCycle { cycle: usize, have: usize, need: usize },
    #[error("reference loss must be > 0 (got {0})")]
    NonPositiveReference(f64),
    #[error("snapshot does not match the mesh: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Quantities of one converged time step (full cross-section, per unit
/// length).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    /// Imposed current per turn at the step's evaluation time (A).
    pub current: f64,
    /// Voltage per turn and unit length of each stack (V/m).
    pub voltages: Vec<f64>,
    /// Joule power (W/m).
    pub joule_power: f64,
    /// Power delivered by the sources (W/m).
    pub source_power: f64,
    /// Discrete rate of magnetic energy (W/m).
    pub magnetic_power: f64,
    pub newton_iterations: usize,
    pub final_residual: f64,
    pub damping_activations: usize,
    /// 1, or 2 when the step was bisected.
    pub substeps: usize,
    /// Worst relative total-current deviation over the stacks.
    pub current_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransientResult {
    pub formulation: Formulation,
    pub steps_per_cycle: usize,
    pub period: f64,
    pub records: Vec<StepRecord>,
    /// Free DoFs per block `[a, j, u]`.
    pub dofs: [usize; 3],
    pub wall_time_s: f64,
    pub final_state: Vec<f64>,
    /// `(step, z, z_prev, dt, current)` for every scheduled snapshot.
    pub snapshot_states: Vec<(usize, Vec<f64>, Vec<f64>, f64, f64)>,
}

impl TransientResult {
    pub fn total_dofs(&self) -> usize {
        self.dofs.iter().sum()
    }

    pub fn cycles(&self) -> usize {
        self.records.len() / self.steps_per_cycle
    }

    pub fn newton_iterations_total(&self) -> usize {
        self.records.iter().map(|r| r.newton_iterations).sum()
    }

    /// Losses of every complete cycle.
    pub fn cycle_losses(&self) -> Vec<f64> {
        (0..self.cycles())
            .map(|c| cycle_loss(self, c).expect("complete cycle"))
            .collect()
    }

    /// Loss of the last complete cycle (the reported value).
    pub fn final_cycle_loss(&self) -> f64 {
        *self.cycle_losses().last().unwrap_or(&0.0)
    }
}

/// Joule power `∫ J·E` over the conductors of the full cross-section (W/m).
pub fn instantaneous_loss(
    problem: &Problem,
    z: &[f64],
    step: &StepInput,
) -> Result<f64, AssemblyError> {
    Ok(problem.symmetry_factor * problem.joule_power(z, step)?)
}

fn cycle_integral(
    result: &TransientResult,
    cycle: usize,
    f: impl Fn(&StepRecord) -> f64,
) -> Result<f64, PostprocError> {
    let m = result.steps_per_cycle;
    let lo = cycle * m;
    let have = result.records.len().saturating_sub(lo).min(m);
    if have < m {
        return Err(PostprocError::IncompleteCycle {
            cycle,
            have,
            need: m,
        });
    }
    // left end: the previous record, or the zero initial state
    let (mut t0, mut p0) = if lo == 0 {
        (0.0, 0.0)
    } else {
        let r = &result.records[lo - 1];
        (r.t, f(r))
    };
    let mut sum = 0.0;
    for r in &result.records[lo..lo + m] {
        let p = f(r);
        sum += 0.5 * (p0 + p) * (r.t - t0);
        t0 = r.t;
        p0 = p;
    }
    Ok(sum)
}

/// Trapezoidal integral of the Joule power over cycle `cycle` (0-based),
/// J/cycle/m. The first cycle starts from the zero initial state.
pub fn cycle_loss(result: &TransientResult, cycle: usize) -> Result<f64, PostprocError> {
    cycle_integral(result, cycle, |r| r.joule_power)
}

/// Same integral of the source power `Σ N·I·V`.
pub fn cycle_source_energy(result: &TransientResult, cycle: usize) -> Result<f64, PostprocError> {
    cycle_integral(result, cycle, |r| r.source_power)
}

/// `|p − p_ref| / p_ref`.
pub fn relative_error(p: f64, p_ref: f64) -> Result<f64, PostprocError> {
    if !(p_ref > 0.0) {
        return Err(PostprocError::NonPositiveReference(p_ref));
    }
    Ok((p - p_ref).abs() / p_ref)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub t: f64,
    /// Element-averaged current density (A/m²), zero outside conductors.
    pub j_z: Vec<f64>,
    /// Nodal vector potential (V·s/m).
    pub a_z: Vec<f64>,
    /// Flux density at element centroids (T).
    pub b: Vec<[f64; 2]>,
}

pub fn field_snapshot(
    problem: &Problem,
    t: f64,
    z: &[f64],
    step: &StepInput,
) -> Result<FieldSnapshot, AssemblyError> {
    Ok(FieldSnapshot {
        t,
        j_z: problem.element_current_density(z, step)?,
        a_z: problem.nodal_a(z),
        b: problem.element_b(z),
    })
}

/// Legacy ASCII VTK unstructured grid.
pub fn export_vtk(snap: &FieldSnapshot, mesh: &Mesh, path: &Path) -> Result<(), PostprocError> {
    let nt = mesh.triangles.len();
    if snap.j_z.len() != nt || snap.b.len() != nt || snap.a_z.len() != mesh.nodes.len() {
        return Err(PostprocError::Mismatch(format!(
            "{} triangles / {} nodes vs {} J, {} B, {} A values",
            nt,
            mesh.nodes.len(),
            snap.j_z.len(),
            snap.b.len(),
            snap.a_z.len()
        )));
    }
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 2.0\n");
    let _ = writeln!(s, "foilfem t={:e}", snap.t);
    s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", mesh.nodes.len());
    for p in &mesh.nodes {
        let _ = writeln!(s, "{:.17e} {:.17e} 0", p.x, p.y);
    }
    let _ = writeln!(s, "CELLS {} {}", nt, 4 * nt);
    for t in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        s.push_str("5\n");
    }
    let _ = writeln!(s, "CELL_DATA {nt}");
    s.push_str("SCALARS J_z double 1\nLOOKUP_TABLE default\n");
    for v in &snap.j_z {
        let _ = writeln!(s, "{v:.17e}");
    }
    s.push_str("SCALARS B_norm double 1\nLOOKUP_TABLE default\n");
    for b in &snap.b {
        let _ = writeln!(s, "{:.17e}", b[0].hypot(b[1]));
    }
    s.push_str("SCALARS region int 1\nLOOKUP_TABLE default\n");
    for r in &mesh.triangle_region {
        let _ = writeln!(s, "{r}");
    }
    let _ = writeln!(s, "POINT_DATA {}", mesh.nodes.len());
    s.push_str("SCALARS A_z double 1\nLOOKUP_TABLE default\n");
    for v in &snap.a_z {
        let _ = writeln!(s, "{v:.17e}");
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Formats with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Per-step CSV: `t,I,V_0..V_k,P`.
pub fn steps_csv(result: &TransientResult) -> String {
    let nv = result.records.first().map_or(0, |r| r.voltages.len());
    let mut s = String::from("t,I");
    for k in 0..nv {
        let _ = write!(s, ",V_{k}");
    }
    s.push_str(",P\n");
    for r in &result.records {
        s.push_str(&fmt17(r.t));
        s.push(',');
        s.push_str(&fmt17(r.current));
        for v in &r.voltages {
            s.push(',');
            s.push_str(&fmt17(*v));
        }
        s.push(',');
        s.push_str(&fmt17(r.joule_power));
        s.push('\n');
    }
    s
}

/// Header of [`summary_csv_row`].
pub const SUMMARY_CSV_HEADER: &str =
    "label,formulation,cycle_loss,source_energy,dofs_a,dofs_j,dofs_u,dofs,newton_iters_total";

/// One summary row: last-cycle loss and source energy, DoF counts and the
/// Newton iteration total. Wall time is left out so that repeated runs give
/// identical files.
pub fn summary_csv_row(label: &str, result: &TransientResult) -> String {
    let last = result.cycles().saturating_sub(1);
    let src = cycle_source_energy(result, last).unwrap_or(f64::NAN);
    format!(
        "{},{},{},{},{},{},{},{},{}",
        label,
        formulation_name(result.formulation),
        fmt17(result.final_cycle_loss()),
        fmt17(src),
        result.dofs[0],
        result.dofs[1],
        result.dofs[2],
        result.total_dofs(),
        result.newton_iterations_total()
    )
}

/// Writes `<stem>.csv` (per step) and `<stem>_summary.csv` next to `path`.
pub fn export_csv(result: &TransientResult, path: &Path) -> Result<(), PostprocError> {
    std::fs::write(path, steps_csv(result))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let summary = path.with_file_name(format!("{stem}_summary.csv"));
    let mut s = String::from(SUMMARY_CSV_HEADER);
    s.push('\n');
    s.push_str(&summary_csv_row(stem, result));
    s.push('\n');
    std::fs::write(summary, s)?;
    Ok(())
}

pub fn formulation_name(f: Formulation) -> &'static str {
    match f {
        Formulation::AvHomog => "av_homog",
        Formulation::JavHomog => "jav_homog",
        Formulation::AvResolved => "av_resolved",
    }
}

/// Machine-readable run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub formulation: Formulation,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "N_p")]
    pub n_p: usize,
    pub basis_family: String,
    pub dofs: usize,
    pub dof_blocks: [usize; 3],
    pub wall_time_s: f64,
    pub newton_iters_total: usize,
    pub cycle_losses: Vec<f64>,
    pub source_energies: Vec<f64>,
    pub max_current_error: f64,
    pub substeps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl Summary {
    pub fn from_result(result: &TransientResult, n: usize, n_p: usize, basis_family: &str) -> Self {
        Summary {
            formulation: result.formulation,
            n,
            n_p,
            basis_family: basis_family.to_string(),
            dofs: result.total_dofs(),
            dof_blocks: result.dofs,
            wall_time_s: result.wall_time_s,
            newton_iters_total: result.newton_iterations_total(),
            cycle_losses: result.cycle_losses(),
            source_energies: (0..result.cycles())
                .map(|c| cycle_source_energy(result, c).expect("complete cycle"))
                .collect(),
            max_current_error: result
                .records
                .iter()
                .map(|r| r.current_error)
                .fold(0.0, f64::max),
            substeps: result.records.iter().filter(|r| r.substeps > 1).count(),
            failure: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result_from(p: impl Fn(f64) -> f64, m: usize, cycles: usize) -> TransientResult {
        let period = 0.02;
        let dt = period / m as f64;
        TransientResult {
            formulation: Formulation::JavHomog,
            steps_per_cycle: m,
            period,
            records: (1..=m * cycles)
                .map(|k| {
                    let t = k as f64 * dt;
                    StepRecord {
                        t,
                        current: 0.0,
                        voltages: vec![1.0],
                        joule_power: p(t),
                        source_power: p(t),
                        magnetic_power: 0.0,
                        newton_iterations: 2,
                        final_residual: 0.0,
                        damping_activations: 0,
                        substeps: 1,
                        current_error: 0.0,
                    }
                })
                .collect(),
            dofs: [10, 5, 2],
            wall_time_s: 0.5,
            final_state: vec![],
            snapshot_states: vec![],
        }
    }

    #[test]
    fn constant_power() {
        let r = result_from(|_| 3.0, 50, 2);
        assert!((cycle_loss(&r, 1).unwrap() - 3.0 * 0.02).abs() < 1e-15);
        assert!(matches!(
            cycle_loss(&r, 2),
            Err(PostprocError::IncompleteCycle { .. })
        ));
    }

    #[test]
    fn abs_sine_integral() {
        let w = 2.0 * std::f64::consts::PI / 0.02;
        let r = result_from(|t| (w * t).sin().abs(), 100, 1);
        let exact = 2.0 * 0.02 / std::f64::consts::PI;
        assert!(relative_error(cycle_loss(&r, 0).unwrap(), exact).unwrap() < 1e-3);
    }

    #[test]
    fn relative_error_values() {
        assert_eq!(relative_error(1.0, 1.0).unwrap(), 0.0);
        assert!((relative_error(1.1, 1.0).unwrap() - 0.1).abs() < 1e-15);
        assert!(relative_error(1.0, 0.0).is_err());
    }

    #[test]
    fn csv_lines_and_format() {
        let r = result_from(|_| 1.0 / 3.0, 8, 1);
        let mut short = r.clone();
        short.records.truncate(2);
        let s = steps_csv(&short);
        assert_eq!(s.lines().count(), 3);
        assert_eq!(s.lines().next().unwrap(), "t,I,V_0,P");
        let last = s.lines().nth(1).unwrap().split(',').last().unwrap();
        assert_eq!(last, "3.3333333333333331e-1");
        assert_eq!(last.parse::<f64>().unwrap(), 1.0 / 3.0);
    }
}
