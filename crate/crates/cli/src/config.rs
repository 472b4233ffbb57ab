//! Run configuration: strict JSON parsing, environment overrides and
//! cross-field validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use foilfem::foil::{BasisFamily, FoilBasisSpec};
use foilfem::formulations::Formulation;
use foilfem::materials::PowerLawParams;
use foilfem::mesh::GeometrySpec;
use foilfem::solver::{NewtonSettings, SnapshotSchedule, TransientSettings};
use foilfem::spaces::SpaceKind;

use crate::CliError;

/// Prefix of environment variables that override configuration keys:
/// `FOILFEM_SET__TRANSIENT__FREQUENCY=10` sets `transient.frequency`.
pub const ENV_PREFIX: &str = "FOILFEM_SET__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometrySpec,
    #[serde(default)]
    pub material: PowerLawParams,
    #[serde(default = "default_formulation")]
    pub formulation: Formulation,
    #[serde(default)]
    pub basis: FoilBasisSpec,
    #[serde(default)]
    pub transient: TransientSettings,
    #[serde(default)]
    pub newton: NewtonSettings,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub mesh: MeshSource,
    #[serde(default)]
    pub output: OutputSettings,
    #[serde(default)]
    pub snapshots: SnapshotSchedule,
}

fn default_formulation() -> Formulation {
    Formulation::JavHomog
}

/// Discretization knobs that are not part of the physical scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    /// Time-stepping weight θ ∈ (0, 1].
    pub theta: f64,
    /// A-space inside the conductors; `None` keeps the formulation default.
    pub a_space: Option<SpaceKind>,
    pub quad_conductor: usize,
    pub quad_shell: usize,
    /// Dirichlet boundary names; `None` means `outer` (+ `sym_x`).
    pub dirichlet: Option<Vec<String>>,
    /// Apply the shell transformation in the outer annulus.
    pub shell_transform: bool,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            theta: 1.0,
            a_space: None,
            quad_conductor: 5,
            quad_shell: 4,
            dirichlet: None,
            shell_transform: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MeshSource {
    #[default]
    Generate,
    /// ASCII MSH 4.1 file; relative paths resolve against the config file.
    Msh(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSettings {
    /// Artifact directory; the `--out` flag takes precedence.
    pub dir: Option<PathBuf>,
    /// Write VTK files for the snapshot steps.
    pub vtk: bool,
    /// Label used in summary tables.
    pub label: Option<String>,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self {
            dir: None,
            vtk: true,
            label: None,
        }
    }
}

impl RunConfig {
    pub fn label(&self) -> String {
        self.output.label.clone().unwrap_or_else(|| {
            format!(
                "{}_{}{}",
                foilfem::postproc::formulation_name(self.formulation),
                family_name(self.basis.family),
                self.basis.n_p
            )
        })
    }

    /// Turn count of the first stack (the `N` of summaries).
    pub fn turns(&self) -> usize {
        self.geometry.stacks.first().map_or(0, |s| s.turns)
    }

    /// Range and cross-field checks that do not need a mesh.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |path: &str, msg: String| CliError::Config(format!("{path}: {msg}"));
        self.material
            .validate()
            .map_err(|e| cfg("material", e.to_string()))?;
        self.transient
            .validate()
            .map_err(|e| cfg("transient", e.to_string()))?;
        self.newton.validate().map_err(|e| cfg("newton", e.to_string()))?;
        if self.geometry.stacks.is_empty() {
            return Err(cfg("geometry.stacks", "at least one stack is required".into()));
        }
        if self.basis.n_p == 0 {
            return Err(cfg("basis.n_p", "must be >= 1".into()));
        }
        if !(self.numerics.theta > 0.0 && self.numerics.theta <= 1.0) {
            return Err(cfg("numerics.theta", "must lie in (0, 1]".into()));
        }
        if self.formulation != Formulation::JavHomog
            && self.material.eps_sigma == 0.0
            && self.material.n > 1.0
        {
            return Err(cfg(
                "material.eps_sigma",
                "the σ-based formulations need eps_sigma > 0 when n > 1".into(),
            ));
        }
        if self.numerics.a_space == Some(SpaceKind::P0) {
            return Err(cfg("numerics.a_space", "A needs a nodal space".into()));
        }
        if self.formulation == Formulation::JavHomog && self.numerics.a_space == Some(SpaceKind::P1) {
            return Err(cfg(
                "numerics.a_space",
                "the J–A–V formulation needs the enriched space".into(),
            ));
        }
        for (k, s) in self.geometry.stacks.iter().enumerate() {
            let lambda = s.hts_thickness / s.pitch;
            if (lambda - self.material.fill_factor).abs() > 1e-6 * lambda {
                return Err(cfg(
                    &format!("geometry.stacks[{k}]"),
                    format!(
                        "hts_thickness/pitch = {lambda} disagrees with material.fill_factor = {}",
                        self.material.fill_factor
                    ),
                ));
            }
        }
        Ok(())
    }
}

pub fn family_name(f: BasisFamily) -> &'static str {
    match f {
        BasisFamily::PiecewiseConstant => "pc",
        BasisFamily::GlobalPolynomial => "poly",
    }
}

/// Parses and validates a JSON configuration; errors carry the key path.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
    from_value(value)
}

fn from_value(value: Value) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("{path}: {}", e.into_inner()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads `path`, applies `overrides` (`(dotted.key, value)` pairs) and
/// validates. Relative MSH paths are made relative to the config file.
pub fn load_config(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
    for (key, raw) in overrides {
        apply_override(&mut value, key, raw)?;
    }
    let mut cfg = from_value(value)?;
    if let MeshSource::Msh(p) = &mut cfg.mesh {
        if p.is_relative() {
            if let Some(dir) = path.parent() {
                *p = dir.join(&*p);
            }
        }
    }
    Ok(cfg)
}

/// Collects `FOILFEM_SET__A__B=v` variables as `("a.b", "v")`.
pub fn env_overrides() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::env::vars()
        .filter_map(|(k, v)| {
            k.strip_prefix(ENV_PREFIX)
                .map(|rest| (rest.to_lowercase().replace("__", "."), v))
        })
        .collect();
    out.sort();
    out
}

/// Sets `key` (dotted, array indices as numbers) in `root`. The value is
/// taken as JSON when it parses, as a string otherwise.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<(), CliError> {
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), parsed);
                    return Ok(());
                }
                map.entry(part.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| CliError::Config(format!("{key}: '{part}' is not an index")))?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| {
                    CliError::Config(format!("{key}: index {idx} out of range ({len})"))
                })?;
                if last {
                    *slot = parsed;
                    return Ok(());
                }
                slot
            }
            _ => return Err(CliError::Config(format!("{key}: cannot descend into a scalar"))),
        };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "geometry": {
            "stacks": [{"x_min": 0.005, "y_min": -0.006, "turns": 20,
                        "pitch": 1e-4, "tape_width": 0.012}],
            "air_radius": 0.02, "shell_radius": 0.03
        }
    }"#;

    #[test]
    fn minimal_fills_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.material, PowerLawParams::default());
        assert_eq!(c.transient.frequency, 50.0);
        assert_eq!(c.basis.n_p, 4);
        assert_eq!(c.formulation, Formulation::JavHomog);
    }

    #[test]
    fn unknown_key_is_rejected_with_path() {
        let text = MINIMAL.replacen("\"air_radius\"", "\"frequncy\": 5, \"air_radius\"", 1);
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("frequncy"), "{err}");
        assert!(err.contains("geometry"), "{err}");
    }

    #[test]
    fn range_error_names_key() {
        let mut v: Value = serde_json::from_str(MINIMAL).unwrap();
        apply_override(&mut v, "material.n", "0").unwrap();
        let err = from_value(v).unwrap_err().to_string();
        assert!(err.contains("material") && err.contains("n"), "{err}");
    }

    #[test]
    fn overrides_reach_nested_and_indexed_keys() {
        let mut v: Value = serde_json::from_str(MINIMAL).unwrap();
        apply_override(&mut v, "transient.frequency", "10").unwrap();
        apply_override(&mut v, "geometry.stacks.0.turns", "7").unwrap();
        apply_override(&mut v, "formulation", "av_homog").unwrap();
        apply_override(&mut v, "material.eps_sigma", "1e-4").unwrap();
        let c = from_value(v).unwrap();
        assert_eq!(c.transient.frequency, 10.0);
        assert_eq!(c.geometry.stacks[0].turns, 7);
        assert_eq!(c.formulation, Formulation::AvHomog);
    }

    #[test]
    fn av_without_regularization_is_refused() {
        let mut v: Value = serde_json::from_str(MINIMAL).unwrap();
        apply_override(&mut v, "formulation", "av_homog").unwrap();
        apply_override(&mut v, "material.eps_sigma", "0").unwrap();
        assert!(matches!(from_value(v), Err(CliError::Config(_))));
    }

    #[test]
    fn echo_round_trips() {
        let c = parse_config(MINIMAL).unwrap();
        let echoed = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(parse_config(&echoed).unwrap(), c);
    }
}
