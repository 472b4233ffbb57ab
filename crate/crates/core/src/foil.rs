//! Foil-conductor machinery: the 1D basis for the voltage-gradient amplitude
//! Φ(x) across a stack, the current-constraint right-hand side, coupling
//! blocks and stack-current integrals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::materials::PowerLawParams;
use crate::mesh::{Mesh, MeshedStack, Point2};
use crate::spaces::{eval_basis_into, FunctionSpace, QuadRule, TriGeom};

#[derive(Debug, Error, PartialEq)]
pub enum FoilError {
    #[error("invalid foil basis: {0}")]
    InvalidBasis(String),
    #[error("x = {x} lies outside the stack [{x_min}, {x_max}]")]
    OutsideStack { x: f64, x_min: f64, x_max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFamily {
    /// Indicators of `n_p` groups of consecutive turns.
    PiecewiseConstant,
    /// Legendre polynomials of order `0..n_p` on the stack extent.
    GlobalPolynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoilBasisSpec {
    pub family: BasisFamily,
    /// Number of basis functions (order + 1 for polynomials).
    pub n_p: usize,
}

impl Default for FoilBasisSpec {
    fn default() -> Self {
        Self {
            family: BasisFamily::GlobalPolynomial,
            n_p: 4,
        }
    }
}

/// A homogenized stack, or a single resolved layer seen as a one-turn stack.
#[derive(Debug, Clone, PartialEq)]
pub struct FoilStack {
    /// Mesh region holding the stack.
    pub region: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub turns: usize,
    pub pitch: f64,
    /// Meshed tape width.
    pub width: f64,
    /// Share of the turn current flowing in the meshed part, with sign.
    pub current_scale: f64,
    pub basis: FoilBasisSpec,
    pub params: PowerLawParams,
}

impl FoilStack {
    pub fn new(
        region: usize,
        stack: &MeshedStack,
        basis: FoilBasisSpec,
        params: PowerLawParams,
    ) -> Result<Self, FoilError> {
        let s = Self {
            region,
            x_min: stack.x_min,
            x_max: stack.x_max,
            turns: stack.turns,
            pitch: stack.pitch,
            width: stack.width(),
            current_scale: stack.polarity * stack.width_fraction,
            basis,
            params,
        };
        s.check()?;
        Ok(s)
    }

    /// HTS layer `layer` of `stack` as a one-turn stack with unscaled
    /// critical current density.
    pub fn resolved_layer(
        region: usize,
        stack: &MeshedStack,
        layer: usize,
        params: &PowerLawParams,
    ) -> Self {
        let (lo, hi) = stack.layer_bounds(layer);
        Self {
            region,
            x_min: lo,
            x_max: hi,
            turns: 1,
            pitch: hi - lo,
            width: stack.width(),
            current_scale: stack.polarity * stack.width_fraction,
            basis: FoilBasisSpec {
                family: BasisFamily::GlobalPolynomial,
                n_p: 1,
            },
            params: params.unscaled(),
        }
    }

    pub fn check(&self) -> Result<(), FoilError> {
        let lx = self.x_max - self.x_min;
        if self.turns == 0 || !(self.pitch > 0.0) {
            return Err(FoilError::InvalidBasis("stack needs turns >= 1 and pitch > 0".into()));
        }
        if (lx - self.turns as f64 * self.pitch).abs() > 1e-12 * lx {
            return Err(FoilError::InvalidBasis(format!(
                "stack extent {lx} differs from turns x pitch"
            )));
        }
        if self.basis.n_p == 0 {
            return Err(FoilError::InvalidBasis("n_p must be >= 1".into()));
        }
        if self.basis.family == BasisFamily::PiecewiseConstant && self.basis.n_p > self.turns {
            return Err(FoilError::InvalidBasis(format!(
                "piecewise-constant basis needs n_p <= N ({} > {})",
                self.basis.n_p, self.turns
            )));
        }
        Ok(())
    }

    pub fn n_p(&self) -> usize {
        self.basis.n_p
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    /// Turn ranges `[lo, hi)` of each piecewise-constant group. Group `g`
    /// holds turns `⌊g·N/N_p⌋ .. ⌊(g+1)·N/N_p⌋`, so no group is empty.
    pub fn groups(&self) -> Vec<(usize, usize)> {
        let (n, np) = (self.turns, self.basis.n_p);
        (0..np).map(|g| (g * n / np, (g + 1) * n / np)).collect()
    }

    /// Interior `x` positions where the basis is discontinuous.
    pub fn discontinuities(&self) -> Vec<f64> {
        match self.basis.family {
            BasisFamily::GlobalPolynomial => Vec::new(),
            BasisFamily::PiecewiseConstant => self
                .groups()
                .iter()
                .skip(1)
                .map(|&(lo, _)| self.x_min + lo as f64 * self.pitch)
                .collect(),
        }
    }

    /// Turn boundaries strictly inside the stack.
    pub fn turn_boundaries(&self) -> Vec<f64> {
        (1..self.turns)
            .map(|i| self.x_min + i as f64 * self.pitch)
            .collect()
    }

    /// Basis values at `x`, which is clamped onto the stack.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let np = self.basis.n_p;
        let x = x.clamp(self.x_min, self.x_max);
        match self.basis.family {
            BasisFamily::GlobalPolynomial => {
                let xi = 2.0 * (x - self.x_min) / self.length() - 1.0;
                out[0] = 1.0;
                if np > 1 {
                    out[1] = xi;
                }
                for k in 2..np {
                    let kf = k as f64;
                    out[k] = ((2.0 * kf - 1.0) * xi * out[k - 1] - (kf - 1.0) * out[k - 2]) / kf;
                }
            }
            BasisFamily::PiecewiseConstant => {
                let turn = (((x - self.x_min) / self.pitch).floor() as usize).min(self.turns - 1);
                // group g starts at ⌊g·N/N_p⌋; invert by search
                let g = (0..np)
                    .rev()
                    .find(|&g| g * self.turns / np <= turn)
                    .unwrap_or(0);
                out[..np].fill(0.0);
                out[g] = 1.0;
            }
        }
    }

    /// ∫ p_i dx over the stack, exact for both families.
    pub fn basis_integrals(&self) -> Vec<f64> {
        match self.basis.family {
            BasisFamily::GlobalPolynomial => {
                let mut v = vec![0.0; self.basis.n_p];
                v[0] = self.length();
                v
            }
            BasisFamily::PiecewiseConstant => self
                .groups()
                .iter()
                .map(|&(lo, hi)| (hi - lo) as f64 * self.pitch)
                .collect(),
        }
    }

    /// Current through the meshed part of the stack when every turn carries
    /// `i_now`.
    pub fn target_current(&self, i_now: f64) -> f64 {
        self.current_scale * self.turns as f64 * i_now
    }
}

/// Values `p_1(x) .. p_{N_p}(x)`.
pub fn eval_foil_basis(stack: &FoilStack, x: f64) -> Result<Vec<f64>, FoilError> {
    let tol = 1e-12 * stack.length();
    if !(x >= stack.x_min - tol && x <= stack.x_max + tol) {
        return Err(FoilError::OutsideStack {
            x,
            x_min: stack.x_min,
            x_max: stack.x_max,
        });
    }
    let mut v = vec![0.0; stack.n_p()];
    stack.eval_into(x, &mut v);
    Ok(v)
}

/// `b_i = (I/d)·∫ p_i dx`, scaled by the meshed share of the current.
pub fn foil_constraint_rhs(stack: &FoilStack, i_now: f64) -> Vec<f64> {
    let f = stack.current_scale * i_now / stack.pitch;
    stack.basis_integrals().into_iter().map(|v| f * v).collect()
}

/// Quadrature over a triangle split along vertical lines `x = c` so that
/// integrands discontinuous across those lines are integrated exactly.
///
/// Returns `(barycentric coordinates in the parent, absolute weight)`.
pub fn cut_quadrature(geom: &TriGeom, cuts: &[f64], rule: &QuadRule) -> Vec<([f64; 3], f64)> {
    let xs = geom.pts.map(|p| p.x);
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * (hi - lo).max(f64::MIN_POSITIVE);
    let mut inner: Vec<f64> = cuts
        .iter()
        .copied()
        .filter(|&c| c > lo + tol && c < hi - tol)
        .collect();
    let mut out = Vec::with_capacity(rule.points.len() * (1 + 2 * inner.len()));
    if inner.is_empty() {
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            out.push((*l, w * geom.area));
        }
        return out;
    }
    inner.sort_by(f64::total_cmp);
    let mut strips = vec![lo];
    strips.extend(inner);
    strips.push(hi);
    let p0 = geom.pts[0];
    let bary = |q: Point2| -> [f64; 3] {
        let dx = q.x - p0.x;
        let dy = q.y - p0.y;
        let l1 = geom.grad[1][0] * dx + geom.grad[1][1] * dy;
        let l2 = geom.grad[2][0] * dx + geom.grad[2][1] * dy;
        [1.0 - l1 - l2, l1, l2]
    };
    for w in strips.windows(2) {
        let poly = clip_strip(&geom.pts, w[0], w[1]);
        for k in 1..poly.len().saturating_sub(1) {
            let (a, b, c) = (poly[0], poly[k], poly[k + 1]);
            let area = 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
            if area <= 1e-14 * geom.area {
                continue;
            }
            for (l, wq) in rule.points.iter().zip(&rule.weights) {
                let q = Point2::new(
                    l[0] * a.x + l[1] * b.x + l[2] * c.x,
                    l[0] * a.y + l[1] * b.y + l[2] * c.y,
                );
                out.push((bary(q), wq * area));
            }
        }
    }
    out
}

/// Part of a CCW triangle with `lo <= x <= hi` as a convex CCW polygon.
fn clip_strip(tri: &[Point2; 3], lo: f64, hi: f64) -> Vec<Point2> {
    let clip = |poly: Vec<Point2>, keep: &dyn Fn(Point2) -> f64| -> Vec<Point2> {
        // keep where keep(p) >= 0
        let mut out = Vec::with_capacity(poly.len() + 2);
        for i in 0..poly.len() {
            let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
            let (fp, fq) = (keep(p), keep(q));
            if fp >= 0.0 {
                out.push(p);
            }
            if (fp >= 0.0) != (fq >= 0.0) {
                let t = fp / (fp - fq);
                out.push(Point2::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)));
            }
        }
        out
    };
    let poly = clip(tri.to_vec(), &|p: Point2| p.x - lo);
    clip(poly, &|p: Point2| hi - p.x)
}

/// Coupling between a field space and the Φ basis of one stack.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlocks {
    /// `(field DoF, i, ∫ w·N·p_i)`, duplicates summed by the consumer.
    pub field_phi: Vec<(usize, usize, f64)>,
    /// `∫ w·p_i·p_j`.
    pub gram: Vec<Vec<f64>>,
}

/// Assembles `∫ w N_k p_i` and `∫ w p_i p_j` over the stack region, with
/// `w(t, x)` a scalar weight (σ for the A–V variant, 1 for J–A–V).
pub fn foil_coupling_blocks(
    stack: &FoilStack,
    space: &FunctionSpace,
    mesh: &Mesh,
    rule: &QuadRule,
    weight: impl Fn(usize, Point2) -> f64,
) -> CouplingBlocks {
    let np = stack.n_p();
    let mut gram = vec![vec![0.0; np]; np];
    let mut field_phi = Vec::new();
    let cuts = stack.discontinuities();
    let mut p = vec![0.0; np];
    let mut basis = Vec::new();
    let mut local = vec![vec![0.0; np]; space.local_size()];
    for t in 0..mesh.triangles.len() {
        if mesh.triangle_region[t] != stack.region {
            continue;
        }
        let geom = TriGeom::new(mesh, t);
        let dofs = space.local_dofs(mesh, t);
        local.iter_mut().for_each(|r| r.fill(0.0));
        for (l, w) in cut_quadrature(&geom, &cuts, rule) {
            let x = geom.point(&l);
            stack.eval_into(x.x, &mut p);
            let wk = w * weight(t, x);
            eval_basis_into(space.kind, &geom, &l, &mut basis);
            for i in 0..np {
                for j in 0..np {
                    gram[i][j] += wk * p[i] * p[j];
                }
                for (k, b) in basis.iter().enumerate() {
                    local[k][i] += wk * b.value * p[i];
                }
            }
        }
        for (k, row) in local.iter().enumerate() {
            if let Some(d) = dofs[k] {
                for (i, &v) in row.iter().enumerate() {
                    field_phi.push((d, i, v));
                }
            }
        }
    }
    CouplingBlocks { field_phi, gram }
}

/// Net current through the stack region, `∫∫ J dx dy`, for a current
/// density given per triangle and barycentric point.
pub fn total_current(
    stack: &FoilStack,
    mesh: &Mesh,
    rule: &QuadRule,
    j_at: impl Fn(usize, &[f64; 3]) -> f64,
) -> f64 {
    turn_currents_impl(stack, mesh, rule, &[], j_at)[0]
}

/// Current through each turn slab `[x_min + i·d, x_min + (i+1)·d]`.
pub fn turn_currents(
    stack: &FoilStack,
    mesh: &Mesh,
    rule: &QuadRule,
    j_at: impl Fn(usize, &[f64; 3]) -> f64,
) -> Vec<f64> {
    turn_currents_impl(stack, mesh, rule, &stack.turn_boundaries(), j_at)
}

fn turn_currents_impl(
    stack: &FoilStack,
    mesh: &Mesh,
    rule: &QuadRule,
    cuts: &[f64],
    j_at: impl Fn(usize, &[f64; 3]) -> f64,
) -> Vec<f64> {
    let bins = cuts.len() + 1;
    let mut out = vec![0.0; bins];
    for t in 0..mesh.triangles.len() {
        if mesh.triangle_region[t] != stack.region {
            continue;
        }
        let geom = TriGeom::new(mesh, t);
        for (l, w) in cut_quadrature(&geom, cuts, rule) {
            let bin = if bins == 1 {
                0
            } else {
                let x = geom.point(&l).x;
                (((x - stack.x_min) / stack.pitch).floor().max(0.0) as usize).min(bins - 1)
            };
            out[bin] += w * j_at(t, &l);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::quad_rule;

    fn stack(family: BasisFamily, n_p: usize) -> FoilStack {
        FoilStack {
            region: 0,
            x_min: 5e-3,
            x_max: 7e-3,
            turns: 20,
            pitch: 100e-6,
            width: 12e-3,
            current_scale: 1.0,
            basis: FoilBasisSpec { family, n_p },
            params: PowerLawParams::default(),
        }
    }

    #[test]
    fn polynomial_values() {
        let s = stack(BasisFamily::GlobalPolynomial, 1);
        assert_eq!(eval_foil_basis(&s, 6.3e-3).unwrap(), vec![1.0]);
        let s = stack(BasisFamily::GlobalPolynomial, 4);
        let v = eval_foil_basis(&s, 6e-3).unwrap();
        assert_eq!(v.len(), 4);
        assert!(v[1].abs() < 1e-12 && v[3].abs() < 1e-12);
        assert!((v[2] + 0.5).abs() < 1e-12);
        assert!(eval_foil_basis(&s, 8e-3).is_err());
    }

    #[test]
    fn indicator_per_layer() {
        let s = stack(BasisFamily::PiecewiseConstant, 20);
        let v = eval_foil_basis(&s, 5e-3 + 7.5 * 100e-6).unwrap();
        let mut e = vec![0.0; 20];
        e[7] = 1.0;
        assert_eq!(v, e);
    }

    #[test]
    fn groups_cover_all_turns() {
        for np in 1..=20 {
            let s = stack(BasisFamily::PiecewiseConstant, np);
            let g = s.groups();
            assert_eq!(g[0].0, 0);
            assert_eq!(g[np - 1].1, 20);
            assert!(g.windows(2).all(|w| w[0].1 == w[1].0));
            assert!(g.iter().all(|(a, b)| b > a));
        }
        let mut s = stack(BasisFamily::PiecewiseConstant, 21);
        assert!(s.check().is_err());
        s.basis.n_p = 0;
        assert!(s.check().is_err());
    }

    #[test]
    fn constraint_rhs() {
        let s = stack(BasisFamily::PiecewiseConstant, 20);
        for b in foil_constraint_rhs(&s, 96.0) {
            assert!((b - 96.0).abs() < 1e-9);
        }
        let s = stack(BasisFamily::GlobalPolynomial, 4);
        let b = foil_constraint_rhs(&s, 96.0);
        assert!((b[0] - 1920.0).abs() < 1e-9);
        assert!(b[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cut_quadrature_preserves_area() {
        let m = crate::mesh::Mesh {
            nodes: vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.2), Point2::new(0.3, 1.0)],
            triangles: vec![[0, 1, 2]],
            triangle_region: vec![0],
            regions: vec![crate::mesh::Region::new("conductor_0")],
            ..Default::default()
        };
        let g = TriGeom::new(&m, 0);
        let rule = quad_rule(2).unwrap();
        let q = cut_quadrature(&g, &[0.1, 0.25, 0.5, 0.9, 2.0], &rule);
        let area: f64 = q.iter().map(|(_, w)| w).sum();
        assert!((area - g.area).abs() < 1e-14);
        // ∫ x over the triangle = area · mean vertex x
        let ix: f64 = q.iter().map(|(l, w)| w * g.point(l).x).sum();
        assert!((ix - g.area * 1.3 / 3.0).abs() < 1e-14);
        // ∫ [x > 0.5]: area of the clipped part from an independent
        // polygon computation
        let ind: f64 = q
            .iter()
            .filter(|(l, _)| g.point(l).x > 0.5)
            .map(|(_, w)| w)
            .sum();
        let poly = clip_strip(&g.pts, 0.5, 10.0);
        let shoelace = 0.5
            * (0..poly.len())
                .map(|i| {
                    let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
                    a.x * b.y - b.x * a.y
                })
                .sum::<f64>();
        assert!((ind - shoelace).abs() < 1e-14);
    }
}
