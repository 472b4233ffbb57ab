//! Sparse linear solve, damped Newton iteration and the transient driver.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formulations::{
    apply_boundary_conditions, AssemblyError, Formulation, Problem, StepInput, Tangent,
};
use crate::postproc::{StepRecord, TransientResult};
use crate::sparse::{norm, DirectSolver, SparseMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("singular matrix (pivot {pivot})")]
    Singular { pivot: usize },
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("Newton did not converge in {iterations} iterations (residual history {history:?})")]
    NotConverged { iterations: usize, history: Vec<f64> },
    #[error("step {step} failed after sub-stepping: {reason}")]
    StepFailed { step: usize, reason: String },
    #[error("total current {got} differs from target {want} at t = {t}")]
    CurrentMismatch { t: f64, got: f64, want: f64 },
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("invalid settings: {0}")]
    Invalid(String),
}

/// Solves `a·x = r` with a fresh factorization.
pub fn linear_solve(a: &SparseMatrix, r: &[f64]) -> Result<Vec<f64>, SolverError> {
    DirectSolver::new().solve(a, r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Damping {
    None,
    Backtracking { factor: f64, min_step: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonSettings {
    /// Absolute residual threshold (A); `None` scales it with the largest
    /// constraint right-hand side.
    pub abs_tol: Option<f64>,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub damping: Damping,
    /// When backtracking along the Newton direction must go below this step
    /// length, a secant-slope (fixed-point) direction is tried instead.
    /// `None` disables the fallback.
    pub secant_below: Option<f64>,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            abs_tol: None,
            rel_tol: 1e-6,
            max_iter: 50,
            damping: Damping::Backtracking {
                factor: 0.5,
                min_step: 1.0 / 1024.0,
            },
            secant_below: Some(1.0 / 16.0),
        }
    }
}

impl NewtonSettings {
    pub fn validate(&self) -> Result<(), SolverError> {
        if let Some(a) = self.abs_tol {
            if !(a > 0.0) {
                return Err(SolverError::Invalid("abs_tol must be > 0".into()));
            }
        }
        if !(self.rel_tol > 0.0) {
            return Err(SolverError::Invalid("rel_tol must be > 0".into()));
        }
        if self.max_iter < 1 {
            return Err(SolverError::Invalid("max_iter must be >= 1".into()));
        }
        if let Damping::Backtracking { factor, min_step } = self.damping {
            if !(factor > 0.0 && factor < 1.0 && min_step > 0.0 && min_step <= 1.0) {
                return Err(SolverError::Invalid(
                    "backtracking needs 0 < factor < 1 and 0 < min_step <= 1".into(),
                ));
            }
        }
        if let Some(s) = self.secant_below {
            if !(s > 0.0 && s <= 1.0) {
                return Err(SolverError::Invalid("secant_below must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NewtonStats {
    pub iterations: usize,
    pub final_residual: f64,
    pub damping_activations: usize,
    pub secant_steps: usize,
    pub residual_history: Vec<f64>,
}

/// What the Newton driver asks of the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Request {
    Residual,
    Jacobian(Tangent),
}

/// Damped Newton iteration on `x` for a system returning `r(x)` and, on
/// request, `∂r/∂x` (or its secant variant).
///
/// Converged when `‖r‖ ≤ max(abs_tol, rel_tol·‖r₀‖)`. A damped step is
/// accepted as soon as it lowers `‖r‖`; at the minimum step length it is
/// taken regardless.
pub fn newton_solve<F>(
    mut system: F,
    x: &mut [f64],
    settings: &NewtonSettings,
    abs_tol: f64,
    lin: &mut DirectSolver,
) -> Result<NewtonStats, SolverError>
where
    F: FnMut(&[f64], Request) -> Result<(Vec<f64>, Option<SparseMatrix>), SolverError>,
{
    let (factor, min_step) = match settings.damping {
        Damping::None => (1.0, 1.0),
        Damping::Backtracking { factor, min_step } => (factor, min_step),
    };
    let mut stats = NewtonStats::default();
    let (mut r, mut jac) = system(x, Request::Jacobian(Tangent::Differential))?;
    let mut rn = norm(&r);
    let tol = abs_tol.max(settings.rel_tol * rn);
    stats.residual_history.push(rn);
    let mut trial = vec![0.0; x.len()];
    while rn > tol || !rn.is_finite() {
        if stats.iterations == settings.max_iter || !rn.is_finite() {
            return Err(SolverError::NotConverged {
                iterations: stats.iterations,
                history: stats.residual_history,
            });
        }
        stats.iterations += 1;
        let j = jac.take().expect("Jacobian requested");
        let mut dx = lin.solve(&j, &r)?;
        let mut floor = settings.secant_below.unwrap_or(min_step).max(min_step);
        let mut secant = false;
        let mut alpha = 1.0;
        loop {
            for i in 0..x.len() {
                trial[i] = x[i] - alpha * dx[i];
            }
            let (rt, _) = system(&trial, Request::Residual)?;
            let rtn = norm(&rt);
            if rtn.is_finite() && rtn < rn {
                break;
            }
            if alpha * factor < floor * (1.0 - 1e-12) {
                if !secant && floor > min_step {
                    // switch to the fixed-point direction
                    let (_, js) = system(x, Request::Jacobian(Tangent::Secant))?;
                    dx = lin.solve(&js.expect("Jacobian requested"), &r)?;
                    secant = true;
                    stats.secant_steps += 1;
                    floor = min_step;
                    alpha = 1.0;
                    continue;
                }
                break;
            }
            alpha *= factor;
            stats.damping_activations += 1;
        }
        x.copy_from_slice(&trial);
        let (rr, jj) = system(x, Request::Jacobian(Tangent::Differential))?;
        r = rr;
        jac = jj;
        rn = norm(&r);
        stats.residual_history.push(rn);
    }
    stats.final_residual = rn;
    Ok(stats)
}

/// Newton iteration with an exact line search for residuals that are the
/// gradient of a convex potential (after scaling row `i` by `weights[i]`).
///
/// The step length solves `d/dα F(x + α·s) = 0` on `(0, 1]` by safeguarded
/// regula falsi, so every accepted step lowers the potential even where the
/// residual norm would grow — the power law makes `‖r‖` a poor merit
/// function. Stops on the same residual test as [`newton_solve`].
pub fn newton_solve_convex<F>(
    mut system: F,
    x: &mut [f64],
    weights: &[f64],
    settings: &NewtonSettings,
    abs_tol: f64,
    lin: &mut DirectSolver,
) -> Result<NewtonStats, SolverError>
where
    F: FnMut(&[f64], Request) -> Result<(Vec<f64>, Option<SparseMatrix>), SolverError>,
{
    let mut stats = NewtonStats::default();
    let (mut r, mut jac) = system(x, Request::Jacobian(Tangent::Differential))?;
    let mut rn = norm(&r);
    let tol = abs_tol.max(settings.rel_tol * rn);
    stats.residual_history.push(rn);
    let mut trial = vec![0.0; x.len()];
    let slope = |r: &[f64], s: &[f64]| -> f64 { r.iter().zip(s).zip(weights).map(|((r, s), w)| r * s * w).sum() };
    while rn > tol || !rn.is_finite() {
        if stats.iterations == settings.max_iter || !rn.is_finite() {
            return Err(SolverError::NotConverged {
                iterations: stats.iterations,
                history: stats.residual_history,
            });
        }
        stats.iterations += 1;
        let j = jac.take().expect("Jacobian requested");
        let mut s: Vec<f64> = lin.solve(&j, &r)?.into_iter().map(|v| -v).collect();
        let mut d0 = slope(&r, &s);
        if !(d0 < 0.0) {
            // not a descent direction (lost definiteness): fixed-point step
            let (_, js) = system(x, Request::Jacobian(Tangent::Secant))?;
            s = lin.solve(&js.expect("Jacobian requested"), &r)?.into_iter().map(|v| -v).collect();
            stats.secant_steps += 1;
            d0 = slope(&r, &s);
            if !(d0 < 0.0) {
                return Err(SolverError::NotConverged {
                    iterations: stats.iterations,
                    history: stats.residual_history,
                });
            }
        }
        let mut dphi = |alpha: f64| -> Result<f64, SolverError> {
            for i in 0..x.len() {
                trial[i] = x[i] + alpha * s[i];
            }
            let (rt, _) = system(&trial, Request::Residual)?;
            let d = slope(&rt, &s);
            Ok(if d.is_finite() { d } else { f64::INFINITY })
        };
        let alpha = match settings.damping {
            Damping::None => 1.0,
            Damping::Backtracking { .. } => {
                let d1 = dphi(1.0)?;
                if d1 <= 0.1 * d0.abs() {
                    1.0
                } else {
                    stats.damping_activations += 1;
                    line_minimum(d0, d1, &mut dphi)?
                }
            }
        };
        for i in 0..x.len() {
            x[i] += alpha * s[i];
        }
        let (rr, jj) = system(x, Request::Jacobian(Tangent::Differential))?;
        r = rr;
        jac = jj;
        rn = norm(&r);
        stats.residual_history.push(rn);
    }
    stats.final_residual = rn;
    Ok(stats)
}

/// Root of the increasing function `φ'` on `(0, 1)` given `φ'(0) = d0 < 0`
/// and `φ'(1) = d1 > 0`, by Illinois regula falsi with bisection fallback.
/// Stops once `|φ'| ≤ 0.1·|d0|`.
fn line_minimum<G>(d0: f64, d1: f64, dphi: &mut G) -> Result<f64, SolverError>
where
    G: FnMut(f64) -> Result<f64, SolverError>,
{
    let (mut lo, mut dlo, mut hi, mut dhi) = (0.0, d0, 1.0, d1);
    let mut side = 0;
    for _ in 0..30 {
        let width = hi - lo;
        let mut a = if dhi.is_finite() {
            (lo * dhi - hi * dlo) / (dhi - dlo)
        } else {
            lo + 0.5 * width
        };
        a = a.clamp(lo + 0.01 * width, hi - 0.01 * width);
        let d = dphi(a)?;
        if d.abs() <= 0.1 * d0.abs() {
            return Ok(a);
        }
        if d < 0.0 {
            lo = a;
            dlo = d;
            if side == -1 {
                dhi *= 0.5;
            }
            side = -1;
        } else {
            hi = a;
            dhi = d;
            if side == 1 {
                dlo *= 0.5;
            }
            side = 1;
        }
    }
    Ok(if lo > 0.0 { lo } else { hi })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransientSettings {
    pub frequency: f64,
    pub cycles: usize,
    pub steps_per_cycle: usize,
    /// Current amplitude per turn (A).
    pub amplitude: f64,
    /// Start each Newton solve from a linear extrapolation of the two
    /// previous states instead of the previous state.
    pub extrapolate: bool,
    /// Relative tolerance of the per-step total-current check.
    pub current_tol: f64,
}

impl Default for TransientSettings {
    fn default() -> Self {
        Self {
            frequency: 50.0,
            cycles: 2,
            steps_per_cycle: 100,
            amplitude: 96.0,
            extrapolate: false,
            current_tol: 1e-3,
        }
    }
}

impl TransientSettings {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(SolverError::Invalid("frequency must be > 0".into()));
        }
        if self.cycles < 1 {
            return Err(SolverError::Invalid("cycles must be >= 1".into()));
        }
        if self.steps_per_cycle < 8 {
            return Err(SolverError::Invalid("steps_per_cycle must be >= 8".into()));
        }
        if !self.amplitude.is_finite() {
            return Err(SolverError::Invalid("amplitude must be finite".into()));
        }
        Ok(())
    }

    pub fn current(&self, t: f64) -> f64 {
        self.amplitude * (2.0 * std::f64::consts::PI * self.frequency * t).sin()
    }

    pub fn dt(&self) -> f64 {
        1.0 / (self.frequency * self.steps_per_cycle as f64)
    }
}

/// Times at which full field states are kept.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnapshotSchedule {
    /// Step indices (1-based, counted over the whole run).
    pub steps: Vec<usize>,
}

/// Solves one step `t_prev → t_prev + dt` in place on `z`.
pub fn solve_step(
    problem: &Problem,
    z: &mut [f64],
    z_prev: &[f64],
    t_prev: f64,
    dt: f64,
    transient: &TransientSettings,
    newton: &NewtonSettings,
    lin: &mut DirectSolver,
) -> Result<NewtonStats, SolverError> {
    let current = transient.current(t_prev + problem.theta * dt);
    let step = StepInput::new(z_prev, dt, current);
    let scale = problem
        .stacks
        .iter()
        .map(|s| s.target_current(transient.amplitude).abs())
        .fold(0.0, f64::max);
    let abs_tol = newton.abs_tol.unwrap_or(1e-10 * scale.max(1e-30));
    let free = free_indices(problem);
    let mut x: Vec<f64> = free.iter().map(|&i| z[i]).collect();
    let mut full = z.to_vec();
    let system = |xr: &[f64], req: Request| {
        for (k, &i) in free.iter().enumerate() {
            full[i] = xr[k];
        }
        let tangent = match req {
            Request::Jacobian(t) => t,
            Request::Residual => Tangent::Differential,
        };
        let sys = problem.assemble(&full, &StepInput { tangent, ..step })?;
        let r: Vec<f64> = free.iter().map(|&i| sys.residual[i]).collect();
        match req {
            Request::Residual => Ok((r, None)),
            Request::Jacobian(_) => Ok((r, Some(apply_boundary_conditions(&sys, problem).jacobian))),
        }
    };
    let stats = if problem.formulation == Formulation::JavHomog {
        newton_solve(system, &mut x, newton, abs_tol, lin)?
    } else {
        // the A–V step minimizes a convex functional once the Φ rows are
        // multiplied by dt
        let u0 = problem.layout.n_a + problem.layout.n_j;
        let w: Vec<f64> = free.iter().map(|&i| if i >= u0 { dt } else { 1.0 }).collect();
        newton_solve_convex(system, &mut x, &w, newton, abs_tol, lin)?
    };
    for (k, &i) in free.iter().enumerate() {
        z[i] = x[k];
    }
    Ok(stats)
}

fn free_indices(problem: &Problem) -> Vec<usize> {
    problem
        .fixed
        .iter()
        .enumerate()
        .filter(|(_, f)| !**f)
        .map(|(i, _)| i)
        .collect()
}

/// Steps through `cycles` periods of the imposed sinusoid from a zero state.
///
/// A failed step is retried once as two half steps. After each step the
/// total current of every stack is checked against `N·I` (both basis
/// families span the constants).
pub fn run_transient(
    problem: &Problem,
    transient: &TransientSettings,
    newton: &NewtonSettings,
    snapshots: &SnapshotSchedule,
) -> Result<TransientResult, SolverError> {
    transient.validate()?;
    newton.validate()?;
    let start = Instant::now();
    let dt = transient.dt();
    let n_steps = transient.cycles * transient.steps_per_cycle;
    let mut lin = DirectSolver::new();
    let mut z_prev = problem.zero_state();
    let mut z_prev2: Option<Vec<f64>> = None;
    let mut records = Vec::with_capacity(n_steps);
    let mut states = Vec::new();
    for k in 1..=n_steps {
        let t_prev = (k - 1) as f64 * dt;
        let mut z = match (&z_prev2, transient.extrapolate) {
            (Some(p2), true) => z_prev.iter().zip(p2).map(|(a, b)| 2.0 * a - b).collect(),
            _ => z_prev.clone(),
        };
        let mut substeps = 1;
        let (stats, mid) = match solve_step(problem, &mut z, &z_prev, t_prev, dt, transient, newton, &mut lin) {
            Ok(s) => (s, None),
            Err(first) => {
                substeps = 2;
                let h = 0.5 * dt;
                let mut zm = z_prev.clone();
                let s1 = solve_step(problem, &mut zm, &z_prev, t_prev, h, transient, newton, &mut lin)
                    .map_err(|e| SolverError::StepFailed {
                        step: k,
                        reason: format!("{first}; half step 1: {e}"),
                    })?;
                let mut z2 = zm.clone();
                let s2 = solve_step(problem, &mut z2, &zm, t_prev + h, h, transient, newton, &mut lin)
                    .map_err(|e| SolverError::StepFailed {
                        step: k,
                        reason: format!("{first}; half step 2: {e}"),
                    })?;
                z = z2;
                let mut s = s2;
                s.iterations += s1.iterations;
                s.damping_activations += s1.damping_activations;
                s.secant_steps += s1.secant_steps;
                (s, Some((zm, h)))
            }
        };
        // quantities of the final (sub)step
        let (zp, h) = match &mid {
            Some((zm, h)) => (zm.as_slice(), *h),
            None => (z_prev.as_slice(), dt),
        };
        let t_theta = k as f64 * dt - h + problem.theta * h;
        let current = transient.current(t_theta);
        let step = StepInput::new(zp, h, current);
        let fs = problem.symmetry_factor;
        let mut joule = fs * problem.joule_power(&z, &step)?;
        let mut source = fs * problem.source_power(&z, current);
        let mut work = fs * problem.magnetic_work(&z, zp) / h;
        if let Some((zm, h)) = &mid {
            // average over both half steps
            let s1 = StepInput::new(&z_prev, *h, transient.current(t_prev + problem.theta * h));
            joule = 0.5 * (joule + fs * problem.joule_power(zm, &s1)?);
            source = 0.5 * (source + fs * problem.source_power(zm, s1.current));
            work = 0.5 * (work + fs * problem.magnetic_work(zm, &z_prev) / h);
        }
        let currents = problem.group_currents(&z, &step)?;
        let mut worst = 0.0f64;
        for (g, got) in problem.stacks.iter().zip(&currents) {
            let want = g.target_current(current);
            let floor = 1e-3 * g.target_current(transient.amplitude).abs();
            let err = (got - want).abs() / want.abs().max(floor).max(1e-300);
            worst = worst.max(err);
            if err > transient.current_tol {
                return Err(SolverError::CurrentMismatch {
                    t: t_theta,
                    got: *got,
                    want,
                });
            }
        }
        records.push(StepRecord {
            t: k as f64 * dt,
            current,
            voltages: problem.stack_voltages(&z),
            joule_power: joule,
            source_power: source,
            magnetic_power: work,
            newton_iterations: stats.iterations,
            final_residual: stats.final_residual,
            damping_activations: stats.damping_activations,
            substeps,
            current_error: worst,
        });
        if snapshots.steps.contains(&k) {
            states.push((k, z.clone(), zp.to_vec(), h, current));
        }
        z_prev2 = Some(std::mem::replace(&mut z_prev, z));
    }
    let (a, j, u) = problem.dof_blocks();
    Ok(TransientResult {
        formulation: problem.formulation,
        steps_per_cycle: transient.steps_per_cycle,
        period: 1.0 / transient.frequency,
        records,
        dofs: [a, j, u],
        wall_time_s: start.elapsed().as_secs_f64(),
        final_state: z_prev,
        snapshot_states: states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x0: f64, s: &NewtonSettings) -> (f64, NewtonStats) {
        let mut x = vec![x0];
        let stats = newton_solve(
            |x, _req| {
                let mut j = SparseMatrix::new(1);
                j.push(0, 0, 3.0 * x[0] * x[0]);
                Ok((vec![x[0].powi(3) - 8.0], Some(j)))
            },
            &mut x,
            s,
            1e-14,
            &mut DirectSolver::new(),
        )
        .unwrap();
        (x[0], stats)
    }

    #[test]
    fn cubic_root_quadratic_tail() {
        let s = NewtonSettings {
            rel_tol: 1e-15,
            ..Default::default()
        };
        let mut x = 3.0f64;
        let mut errs = vec![(x - 2.0).abs()];
        for _ in 0..6 {
            x -= (x.powi(3) - 8.0) / (3.0 * x * x);
            errs.push((x - 2.0).abs());
        }
        // hand iteration from x0 = 3: x1 = 3 − 19/27 = 62/27
        assert!((errs[1] - 8.0 / 27.0).abs() < 1e-15);
        for w in errs.windows(2).take(4) {
            if w[1] > 1e-12 {
                assert!(w[1] / (w[0] * w[0]) < 1.0);
            }
        }
        let (root, stats) = scalar(3.0, &s);
        assert!((root - 2.0).abs() < 1e-14);
        assert!(stats.iterations <= 7);
        let h = &stats.residual_history;
        assert!(h.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn linear_converges_in_one() {
        let mut x = vec![0.0, 0.0];
        let stats = newton_solve(
            |x, _req| {
                let mut j = SparseMatrix::new(2);
                j.push(0, 0, 2.0);
                j.push(0, 1, 1.0);
                j.push(1, 0, 1.0);
                j.push(1, 1, 2.0);
                let r = vec![2.0 * x[0] + x[1] - 3.0, x[0] + 2.0 * x[1] - 3.0];
                Ok((r, Some(j)))
            },
            &mut x,
            &NewtonSettings::default(),
            1e-12,
            &mut DirectSolver::new(),
        )
        .unwrap();
        assert_eq!(stats.iterations, 1);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn iteration_cap_reports_history() {
        let s = NewtonSettings {
            max_iter: 2,
            rel_tol: 1e-15,
            ..Default::default()
        };
        let mut x = vec![30.0];
        let e = newton_solve(
            |x, _req| {
                let mut j = SparseMatrix::new(1);
                j.push(0, 0, 3.0 * x[0] * x[0]);
                Ok((vec![x[0].powi(3) - 8.0], Some(j)))
            },
            &mut x,
            &s,
            1e-14,
            &mut DirectSolver::new(),
        )
        .unwrap_err();
        match e {
            SolverError::NotConverged { iterations, history } => {
                assert_eq!(iterations, 2);
                assert_eq!(history.len(), 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn settings_validation() {
        assert!(TransientSettings {
            steps_per_cycle: 4,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(NewtonSettings {
            max_iter: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!((TransientSettings::default().dt() - 2e-4).abs() < 1e-18);
    }
}
