//! Constitutive laws: regularized power-law conductivity, power-law
//! resistivity and the shell-transformation tensor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::Point2;

#[derive(Debug, Error, PartialEq)]
pub enum MaterialError {
    #[error("invalid material parameter {field}: {msg}")]
    Invalid { field: &'static str, msg: String },
    #[error("conductivity is singular at |E| = 0 without regularization (eps_sigma = 0)")]
    SingularSigma,
    #[error("point at radius {r} lies outside the shell annulus [{r_int}, {r_ext})")]
    OutsideShell { r: f64, r_int: f64, r_ext: f64 },
}

/// Current density that normalizes the base of the resistivity power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RhoNormalization {
    /// `(|J|/J_c,eng)^(n-1)`: exact inverse of the conductivity law.
    #[default]
    Engineering,
    /// `(|J|/J_c)^(n-1)` as sometimes printed; breaks the inverse relation
    /// for λ < 1.
    Material,
}

/// Power-law parameters of a (possibly homogenized) superconductor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerLawParams {
    /// Critical current density of the HTS layer (A/m²).
    pub j_c: f64,
    /// Fill factor λ.
    pub fill_factor: f64,
    /// Threshold field (V/m).
    pub e_c: f64,
    pub n: f64,
    pub eps_sigma: f64,
    pub rho_normalization: RhoNormalization,
}

impl Default for PowerLawParams {
    fn default() -> Self {
        Self {
            j_c: 1e10,
            fill_factor: 0.01,
            e_c: 1e-4,
            n: 25.0,
            eps_sigma: 1e-12,
            rho_normalization: RhoNormalization::Engineering,
        }
    }
}

impl PowerLawParams {
    pub fn j_c_eng(&self) -> f64 {
        self.fill_factor * self.j_c
    }

    /// Same material seen without homogenization (λ = 1).
    pub fn unscaled(&self) -> Self {
        Self {
            fill_factor: 1.0,
            ..self.clone()
        }
    }

    /// `J_c,eng / E_c`, the conductivity at `|E| = E_c` without
    /// regularization; also the row scale used to bring `E`-type equations
    /// to current units.
    pub fn sigma_c(&self) -> f64 {
        self.j_c_eng() / self.e_c
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        let bad = |field, msg: &str| {
            Err(MaterialError::Invalid {
                field,
                msg: msg.to_string(),
            })
        };
        if !(self.j_c > 0.0 && self.j_c.is_finite()) {
            return bad("j_c", "must be > 0");
        }
        if !(self.fill_factor > 0.0 && self.fill_factor <= 1.0) {
            return bad("fill_factor", "must lie in (0, 1]");
        }
        if !(self.e_c > 0.0 && self.e_c.is_finite()) {
            return bad("e_c", "must be > 0");
        }
        if !(self.n >= 1.0 && self.n.is_finite()) {
            return bad("n", "must be >= 1");
        }
        if !(self.eps_sigma >= 0.0 && self.eps_sigma.is_finite()) {
            return bad("eps_sigma", "must be >= 0");
        }
        Ok(())
    }

    fn rho_base(&self) -> f64 {
        match self.rho_normalization {
            RhoNormalization::Engineering => self.j_c_eng(),
            RhoNormalization::Material => self.j_c,
        }
    }
}

/// Regularized power-law conductivity and its derivative `dσ/d|E|`.
///
/// For `n > 1` the derivative is unbounded at `|E| = 0`; Newton assembly
/// uses [`sigma_differential`] instead, which stays finite.
pub fn sigma_power_law(e_norm: f64, p: &PowerLawParams) -> Result<(f64, f64), MaterialError> {
    let m = (p.n - 1.0) / p.n;
    let s = e_norm / p.e_c;
    let sm = s.powf(m);
    let den = p.eps_sigma + sm;
    if den == 0.0 {
        return Err(MaterialError::SingularSigma);
    }
    let sigma = p.sigma_c() / den;
    let dsm = if m == 0.0 {
        0.0
    } else if s == 0.0 {
        f64::INFINITY
    } else {
        m * sm / s / p.e_c
    };
    Ok((sigma, -p.sigma_c() * dsm / (den * den)))
}

/// `d(σ(|E|)·E)/dE` for a scalar out-of-plane field, finite at `E = 0`:
/// `σ_c·(ε + s^m/n)/(ε + s^m)²` with `s = |E|/E_c`, `m = (n-1)/n`.
pub fn sigma_differential(e_norm: f64, p: &PowerLawParams) -> Result<f64, MaterialError> {
    let m = (p.n - 1.0) / p.n;
    let sm = (e_norm / p.e_c).powf(m);
    let den = p.eps_sigma + sm;
    if den == 0.0 {
        return Err(MaterialError::SingularSigma);
    }
    Ok(p.sigma_c() * (p.eps_sigma + sm / p.n) / (den * den))
}

/// Power-law resistivity and its derivative `dρ/d|J|`.
pub fn rho_power_law(j_norm: f64, p: &PowerLawParams) -> (f64, f64) {
    let base = p.rho_base();
    let r0 = p.e_c / p.j_c_eng();
    let q = j_norm / base;
    let rho = r0 * q.powf(p.n - 1.0);
    let drho = if p.n == 1.0 {
        0.0
    } else {
        r0 * (p.n - 1.0) / base * q.powf(p.n - 2.0)
    };
    (rho, drho)
}

/// `d(ρ(|J|)·J)/dJ` for a scalar out-of-plane current: `n·ρ` in the
/// engineering normalization (any normalization: `ρ + |J|·ρ'`).
pub fn rho_differential(j_norm: f64, p: &PowerLawParams) -> f64 {
    let (rho, drho) = rho_power_law(j_norm, p);
    if j_norm == 0.0 {
        rho
    } else {
        rho + j_norm * drho
    }
}

/// Field `E` with `σ(|E|)·E = j` (signed inverse of the regularized
/// conductivity law).
///
/// Solved in `t = ln(|E|/E_c)`, where `t − ln q − ln(ε + e^{m t})` is
/// increasing and concave: Newton from the ε = 0 estimate (which lies left
/// of the root) converges monotonically.
pub fn e_from_j(j: f64, p: &PowerLawParams) -> f64 {
    if j == 0.0 {
        return 0.0;
    }
    let q = j.abs() / p.j_c_eng();
    let m = (p.n - 1.0) / p.n;
    let s = if p.eps_sigma == 0.0 || m == 0.0 {
        q.powf(p.n) * if m == 0.0 { 1.0 + p.eps_sigma } else { 1.0 }
    } else {
        let lq = q.ln();
        let mut t = p.n * lq;
        for _ in 0..100 {
            let em = (m * t).exp();
            let f = t - lq - (p.eps_sigma + em).ln();
            let df = 1.0 - m * em / (p.eps_sigma + em);
            let dt = f / df;
            t -= dt;
            if dt.abs() < 1e-15 * t.abs().max(1.0) {
                break;
            }
        }
        t.exp()
    };
    (s * p.e_c).copysign(j)
}

/// `|ρ(σ(E)·E)·σ(E)·E − E| / E`; zero up to rounding when ε_σ = 0 and the
/// engineering normalization is used.
pub fn inverse_consistency_check(e_norm: f64, p: &PowerLawParams) -> Result<f64, MaterialError> {
    let (sigma, _) = sigma_power_law(e_norm, p)?;
    let j = sigma * e_norm;
    let (rho, _) = rho_power_law(j, p);
    Ok((rho * j - e_norm).abs() / e_norm)
}

/// Radius reached by the shell map `R(r) = R_int·(R_ext − R_int)/(R_ext − r)`.
pub fn shell_mapped_radius(r: f64, r_int: f64, r_ext: f64) -> f64 {
    r_int * (r_ext - r_int) / (r_ext - r)
}

/// Tensor `T` such that the shell contribution to the curl-curl form is
/// `ν₀ ∫ ∇a · T ∇a'` over the annulus.
///
/// In polar components `T = diag((R_ext − r)/r, r/(R_ext − r))`, i.e.
/// `det(F)·F⁻¹F⁻ᵀ` for the radial map `F`. It reduces to the identity at the
/// inner radius only when `R_ext = 2·R_int`.
pub fn shell_map_tensor(
    p: Point2,
    r_int: f64,
    r_ext: f64,
) -> Result<[[f64; 2]; 2], MaterialError> {
    let r = p.norm();
    // tolerate straight-edged elements whose quadrature points sit a hair
    // inside the polygonal inner circle
    if !(r > 0.9 * r_int && r < r_ext) {
        return Err(MaterialError::OutsideShell { r, r_int, r_ext });
    }
    let t_rr = (r_ext - r) / r;
    let t_tt = r / (r_ext - r);
    let (c, s) = (p.x / r, p.y / r);
    Ok([
        [t_rr * c * c + t_tt * s * s, (t_rr - t_tt) * c * s],
        [(t_rr - t_tt) * c * s, t_rr * s * s + t_tt * c * c],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_at_threshold() {
        let p = PowerLawParams {
            eps_sigma: 0.0,
            ..Default::default()
        };
        let (s, _) = sigma_power_law(p.e_c, &p).unwrap();
        assert!((s - 1e12).abs() < 1e-3);
    }

    #[test]
    fn sigma_plateau_and_singularity() {
        let p = PowerLawParams::default();
        let (s, _) = sigma_power_law(0.0, &p).unwrap();
        assert_eq!(s, p.j_c_eng() / (p.e_c * 1e-12));
        let q = PowerLawParams {
            eps_sigma: 0.0,
            ..p
        };
        assert_eq!(sigma_power_law(0.0, &q), Err(MaterialError::SingularSigma));
    }

    #[test]
    fn rho_values() {
        let p = PowerLawParams::default();
        let (r, _) = rho_power_law(p.j_c_eng(), &p);
        assert!((r - 1e-12).abs() < 1e-27);
        assert_eq!(rho_power_law(0.0, &p).0, 0.0);
        let (r, _) = rho_power_law(2.0 * p.j_c_eng(), &p);
        assert!((r / 1.6777216e-5 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn printed_normalization_differs() {
        let p = PowerLawParams {
            rho_normalization: RhoNormalization::Material,
            eps_sigma: 0.0,
            ..Default::default()
        };
        assert!(inverse_consistency_check(10.0 * p.e_c, &p).unwrap() > 0.5);
    }

    #[test]
    fn shell_radius_and_tensor() {
        assert_eq!(shell_mapped_radius(1.5, 1.0, 2.0), 2.0);
        assert_eq!(shell_mapped_radius(1.0, 1.0, 2.0), 1.0);
        let t = shell_map_tensor(Point2::new(1.0 + 1e-12, 0.0), 1.0, 2.0).unwrap();
        assert!((t[0][0] - 1.0).abs() < 1e-9 && (t[1][1] - 1.0).abs() < 1e-9);
        assert!(t[0][1].abs() < 1e-12);
        assert!(shell_map_tensor(Point2::new(0.0, 2.5), 1.0, 2.0).is_err());
    }

    #[test]
    fn inverse_field() {
        for eps in [0.0, 1e-12, 1e-6, 1e-2] {
            let p = PowerLawParams {
                eps_sigma: eps,
                ..Default::default()
            };
            for e in [1e-12, 1e-7, 1e-4, 3e-3, -2e-4] {
                let (s, _) = sigma_power_law(f64::abs(e), &p).unwrap();
                let back = e_from_j(s * e, &p);
                assert!((back - e).abs() <= 1e-12 * e.abs(), "{eps} {e} {back}");
            }
        }
        let lin = PowerLawParams {
            n: 1.0,
            eps_sigma: 0.5,
            ..Default::default()
        };
        let (s, _) = sigma_power_law(2e-4, &lin).unwrap();
        assert!((e_from_j(s * 2e-4, &lin) - 2e-4).abs() < 1e-18);
    }

    #[test]
    fn validation() {
        assert!(PowerLawParams::default().validate().is_ok());
        let p = PowerLawParams {
            n: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            p.validate(),
            Err(MaterialError::Invalid { field: "n", .. })
        ));
    }
}
