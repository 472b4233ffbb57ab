//! Parameter sweeps and homogenized-vs-resolved comparisons.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use foilfem::foil::BasisFamily;
use foilfem::formulations::Formulation;
use foilfem::postproc::{fmt17, relative_error, Summary};

use crate::config::RunConfig;
use crate::run::{cmd_run, write_json, RunOutcome};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NP,
    BasisFamily,
    Frequency,
    Amplitude,
    Formulation,
}

impl std::str::FromStr for SweepAxis {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| CliError::Config(format!("unknown sweep axis '{s}'")))
    }
}

impl SweepAxis {
    /// Whether the reference run must follow the swept value (physical
    /// scenario parameters) or stays fixed (discretization choices).
    fn moves_reference(self) -> bool {
        matches!(self, SweepAxis::Frequency | SweepAxis::Amplitude)
    }
}

/// Returns `cfg` with the swept parameter set to `value`.
pub fn apply_axis(cfg: &RunConfig, axis: SweepAxis, value: &str) -> Result<RunConfig, CliError> {
    let mut c = cfg.clone();
    let bad = || CliError::Config(format!("sweep value '{value}' does not fit axis {axis:?}"));
    match axis {
        SweepAxis::NP => c.basis.n_p = value.parse().map_err(|_| bad())?,
        SweepAxis::BasisFamily => {
            c.basis.family = match value {
                "pc" | "piecewise_constant" => BasisFamily::PiecewiseConstant,
                "poly" | "global_polynomial" => BasisFamily::GlobalPolynomial,
                _ => return Err(bad()),
            }
        }
        SweepAxis::Frequency => c.transient.frequency = value.parse().map_err(|_| bad())?,
        SweepAxis::Amplitude => c.transient.amplitude = value.parse().map_err(|_| bad())?,
        SweepAxis::Formulation => {
            c.formulation = serde_json::from_value(serde_json::Value::String(value.into()))
                .map_err(|_| bad())?
        }
    }
    c.output.label = Some(format!("{}={value}", axis_name(axis)));
    c.validate()?;
    Ok(c)
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::NP => "n_p",
        SweepAxis::BasisFamily => "basis_family",
        SweepAxis::Frequency => "frequency",
        SweepAxis::Amplitude => "amplitude",
        SweepAxis::Formulation => "formulation",
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub summary: Option<Summary>,
    pub reference_loss: Option<f64>,
    pub rel_err: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("value,formulation,cycle_loss,reference_loss,rel_err,dofs,newton_iters_total,failure\n");
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
            let (f, loss, dofs, it) = match &r.summary {
                Some(sm) => (
                    foilfem::postproc::formulation_name(sm.formulation).to_string(),
                    sm.cycle_losses.last().copied(),
                    sm.dofs.to_string(),
                    sm.newton_iters_total.to_string(),
                ),
                None => (String::new(), None, String::new(), String::new()),
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.value,
                f,
                opt(loss),
                opt(r.reference_loss),
                opt(r.rel_err),
                dofs,
                it,
                r.failure.as_deref().unwrap_or("").replace(',', ";")
            );
        }
        s
    }
}

/// Cache of reference runs keyed by their configuration.
#[derive(Default)]
pub struct ReferenceCache {
    entries: Vec<(RunConfig, Result<f64, String>)>,
}

impl ReferenceCache {
    /// Final-cycle loss of `cfg`, computed once per distinct config.
    pub fn loss(&mut self, cfg: &RunConfig, out: Option<&Path>) -> Result<f64, String> {
        if let Some((_, v)) = self.entries.iter().find(|(c, _)| c == cfg) {
            return v.clone();
        }
        let v = cmd_run(cfg, out)
            .map(|o| o.result.final_cycle_loss())
            .map_err(|e| e.to_string());
        self.entries.push((cfg.clone(), v.clone()));
        v
    }
}

/// Runs every sweep variant (on up to `threads` workers) and the reference
/// run(s). A failing variant is recorded in its row; the sweep continues.
pub fn cmd_sweep(
    cfg: &RunConfig,
    axis: SweepAxis,
    values: &[String],
    reference: Option<&RunConfig>,
    out: Option<&Path>,
    threads: usize,
) -> Result<SweepReport, CliError> {
    let variants: Vec<RunConfig> = values
        .iter()
        .map(|v| apply_axis(cfg, axis, v))
        .collect::<Result<_, _>>()?;
    let dir = |i: usize| out.map(|o| o.join(format!("variant_{i:02}")));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<RunOutcome, CliError>> = pool.install(|| {
        use rayon::prelude::*;
        variants
            .par_iter()
            .enumerate()
            .map(|(i, v)| cmd_run(v, dir(i).as_deref()))
            .collect()
    });
    let mut cache = ReferenceCache::default();
    let mut rows = Vec::with_capacity(values.len());
    for (i, (value, outcome)) in values.iter().zip(outcomes).enumerate() {
        let reference_loss = match reference {
            None => None,
            Some(r) => {
                let rc = if axis.moves_reference() { apply_axis(r, axis, value)? } else { r.clone() };
                let rdir: Option<PathBuf> = out.map(|o| o.join(format!("reference_{i:02}")));
                cache.loss(&rc, rdir.as_deref()).ok()
            }
        };
        rows.push(match outcome {
            Ok(o) => {
                let loss = o.result.final_cycle_loss();
                SweepRow {
                    value: value.clone(),
                    rel_err: reference_loss.and_then(|r| relative_error(loss, r).ok()),
                    reference_loss,
                    summary: Some(o.summary),
                    failure: None,
                }
            }
            Err(e) => SweepRow {
                value: value.clone(),
                summary: None,
                reference_loss,
                rel_err: None,
                failure: Some(e.to_string()),
            },
        });
    }
    let report = SweepReport { axis, rows };
    if let Some(o) = out {
        std::fs::create_dir_all(o).map_err(|e| CliError::io(o, e))?;
        write_json(&o.join("sweep.json"), &report)?;
        std::fs::write(o.join("sweep.csv"), report.to_csv()).map_err(|e| CliError::io(o, e))?;
    }
    Ok(report)
}

/// One Table-II style comparison row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub homogenized: Summary,
    pub reference: Summary,
    pub rel_err: f64,
    /// Homogenized over reference DoF count.
    pub dof_ratio: f64,
    pub homogenized_faster: bool,
}

impl CompareReport {
    pub fn table(&self) -> String {
        let row = |name: &str, s: &Summary, err: Option<f64>| {
            format!(
                "{:<12} {:>8.1} {:>8} {:>14.6e} {:>10}\n",
                name,
                s.wall_time_s,
                s.dofs,
                s.cycle_losses.last().copied().unwrap_or(f64::NAN),
                err.map_or("-".into(), |e| format!("{e:.2e}"))
            )
        };
        let mut t = format!(
            "{:<12} {:>8} {:>8} {:>14} {:>10}\n",
            "model", "time_s", "dofs", "loss_J/m", "rel_err"
        );
        t += &row("reference", &self.reference, None);
        t += &row(
            foilfem::postproc::formulation_name(self.homogenized.formulation),
            &self.homogenized,
            Some(self.rel_err),
        );
        t
    }
}

/// Refuses comparisons whose physical scenarios differ.
pub fn check_comparable(a: &RunConfig, b: &RunConfig) -> Result<(), CliError> {
    let g = (&a.geometry, &b.geometry);
    let same_geometry = g.0.stacks == g.1.stacks
        && g.0.air_radius == g.1.air_radius
        && g.0.shell_radius == g.1.shell_radius
        && g.0.symmetry == g.1.symmetry;
    let (m, n) = (&a.material, &b.material);
    let same_material = m.j_c == n.j_c && m.fill_factor == n.fill_factor && m.e_c == n.e_c && m.n == n.n;
    if !same_geometry {
        return Err(CliError::Config("compared runs have different geometries".into()));
    }
    if !same_material {
        return Err(CliError::Config("compared runs have different materials".into()));
    }
    if a.transient != b.transient {
        return Err(CliError::Config("compared runs have different transient settings".into()));
    }
    Ok(())
}

/// Runs a homogenized model and its reference and reports the Table-II row.
pub fn cmd_compare(
    homog: &RunConfig,
    reference: &RunConfig,
    out: Option<&Path>,
) -> Result<CompareReport, CliError> {
    check_comparable(homog, reference)?;
    if homog.formulation == Formulation::AvResolved {
        return Err(CliError::Config("the first configuration must be a homogenized model".into()));
    }
    let h = cmd_run(homog, out.map(|o| o.join("homogenized")).as_deref())?;
    let r = cmd_run(reference, out.map(|o| o.join("reference")).as_deref())?;
    let report = CompareReport {
        rel_err: relative_error(h.result.final_cycle_loss(), r.result.final_cycle_loss())?,
        dof_ratio: h.summary.dofs as f64 / r.summary.dofs as f64,
        homogenized_faster: h.summary.wall_time_s < r.summary.wall_time_s,
        homogenized: h.summary,
        reference: r.summary,
    };
    if let Some(o) = out {
        write_json(&o.join("compare.json"), &report)?;
    }
    Ok(report)
}
