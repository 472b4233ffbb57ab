//! Scalar finite-element spaces on triangles and quadrature rules.
//!
//! Three kinds are provided: first-order nodal (`P1`), first-order nodal
//! plus hierarchical edge bubbles `4·λa·λb` (`P2Enriched`), and one constant
//! per element (`P0`). Local basis ordering is fixed: three vertex functions,
//! then (for `P2Enriched`) the bubbles of local edges `(0,1)`, `(1,2)`,
//! `(2,0)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{Mesh, Point2};

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("empty support for {0:?} space")]
    EmptySupport(SpaceKind),
    #[error("support region {0} does not exist in the mesh")]
    UnknownRegion(usize),
    #[error("unsupported quadrature degree {0} (1..=6)")]
    UnsupportedDegree(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    P1,
    P2Enriched,
    P0,
}

/// Symmetric quadrature on a triangle. Weights sum to one; an integral is
/// `area · Σ w_q f(x_q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule {
    pub degree: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

fn orbit3(a: f64, b: f64, w: f64, pts: &mut Vec<[f64; 3]>, ws: &mut Vec<f64>) {
    for p in [[a, b, b], [b, a, b], [b, b, a]] {
        pts.push(p);
        ws.push(w);
    }
}

fn orbit6(a: f64, b: f64, c: f64, w: f64, pts: &mut Vec<[f64; 3]>, ws: &mut Vec<f64>) {
    for p in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
        pts.push(p);
        ws.push(w);
    }
}

/// Gauss rule exact for polynomials of total degree `degree` (1..=6).
pub fn quad_rule(degree: usize) -> Result<QuadRule, SpaceError> {
    let mut p = Vec::new();
    let mut w = Vec::new();
    let exact = match degree {
        1 => {
            p.push([1.0 / 3.0; 3]);
            w.push(1.0);
            1
        }
        2 => {
            orbit3(2.0 / 3.0, 1.0 / 6.0, 1.0 / 3.0, &mut p, &mut w);
            2
        }
        3 | 4 => {
            orbit3(0.108103018168070, 0.445948490915965, 0.223381589678011, &mut p, &mut w);
            orbit3(0.816847572980459, 0.091576213509771, 0.109951743655322, &mut p, &mut w);
            4
        }
        5 => {
            let s = 15f64.sqrt();
            p.push([1.0 / 3.0; 3]);
            w.push(9.0 / 40.0);
            orbit3((9.0 - 2.0 * s) / 21.0, (6.0 + s) / 21.0, (155.0 + s) / 1200.0, &mut p, &mut w);
            orbit3((9.0 + 2.0 * s) / 21.0, (6.0 - s) / 21.0, (155.0 - s) / 1200.0, &mut p, &mut w);
            5
        }
        6 => {
            orbit3(0.501426509658179, 0.249286745170910, 0.116786275726379, &mut p, &mut w);
            orbit3(0.873821971016996, 0.063089014491502, 0.050844906370207, &mut p, &mut w);
            orbit6(
                0.053145049844817,
                0.310352451033784,
                0.636502499121399,
                0.082851075618374,
                &mut p,
                &mut w,
            );
            6
        }
        d => return Err(SpaceError::UnsupportedDegree(d)),
    };
    // Tabulated constants carry 15 digits; renormalize the weight sum.
    let sum: f64 = w.iter().sum();
    for x in &mut w {
        *x /= sum;
    }
    Ok(QuadRule {
        degree: exact,
        points: p,
        weights: w,
    })
}

/// Affine geometry of one triangle.
#[derive(Debug, Clone, Copy)]
pub struct TriGeom {
    pub pts: [Point2; 3],
    pub area: f64,
    /// Gradients of the barycentric coordinates.
    pub grad: [[f64; 2]; 3],
}

impl TriGeom {
    pub fn new(mesh: &Mesh, t: usize) -> Self {
        let pts = mesh.triangle_points(t);
        let [p0, p1, p2] = pts;
        let a2 = (p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y);
        let grad = [
            [(p1.y - p2.y) / a2, (p2.x - p1.x) / a2],
            [(p2.y - p0.y) / a2, (p0.x - p2.x) / a2],
            [(p0.y - p1.y) / a2, (p1.x - p0.x) / a2],
        ];
        Self {
            pts,
            area: 0.5 * a2,
            grad,
        }
    }

    pub fn point(&self, l: &[f64; 3]) -> Point2 {
        let [p0, p1, p2] = self.pts;
        Point2::new(
            l[0] * p0.x + l[1] * p1.x + l[2] * p2.x,
            l[0] * p0.y + l[1] * p1.y + l[2] * p2.y,
        )
    }
}

/// Value and physical gradient of one local basis function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisValue {
    pub value: f64,
    pub grad: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct FunctionSpace {
    pub kind: SpaceKind,
    pub support: Vec<usize>,
    pub node_dof: Vec<Option<usize>>,
    pub edge_dof: Vec<Option<usize>>,
    pub elem_dof: Vec<Option<usize>>,
    triangle_edges: Vec<[usize; 3]>,
    pub dof_count: usize,
}

/// Builds a space of `kind` over the triangles of the `support` regions.
///
/// `P1` numbers the nodes touched by the support. `P2Enriched` numbers every
/// node of the mesh and adds a bubble on each edge all of whose adjacent
/// triangles lie in the support, so the trace on the support boundary stays
/// linear. `P0` numbers the support triangles.
pub fn build_space(
    mesh: &Mesh,
    kind: SpaceKind,
    support: &[usize],
) -> Result<FunctionSpace, SpaceError> {
    if let Some(&r) = support.iter().find(|&&r| r >= mesh.regions.len()) {
        return Err(SpaceError::UnknownRegion(r));
    }
    let in_support: Vec<bool> = mesh
        .triangle_region
        .iter()
        .map(|r| support.contains(r))
        .collect();
    if !in_support.iter().any(|&b| b) {
        return Err(SpaceError::EmptySupport(kind));
    }
    let mut node_dof = vec![None; mesh.nodes.len()];
    let mut edge_dof = Vec::new();
    let mut elem_dof = vec![None; mesh.triangles.len()];
    let mut triangle_edges = Vec::new();
    let mut count = 0;
    match kind {
        SpaceKind::P1 => {
            let mut used = vec![false; mesh.nodes.len()];
            for (t, tri) in mesh.triangles.iter().enumerate() {
                if in_support[t] {
                    for &v in tri {
                        used[v] = true;
                    }
                }
            }
            for (v, u) in used.into_iter().enumerate() {
                if u {
                    node_dof[v] = Some(count);
                    count += 1;
                }
            }
        }
        SpaceKind::P2Enriched => {
            for d in node_dof.iter_mut() {
                *d = Some(count);
                count += 1;
            }
            let table = mesh.edge_table();
            edge_dof = vec![None; table.edges.len()];
            for (e, tris) in table.edge_triangles.iter().enumerate() {
                if !tris.is_empty() && tris.iter().all(|&t| in_support[t]) {
                    edge_dof[e] = Some(count);
                    count += 1;
                }
            }
            triangle_edges = table.triangle_edges;
        }
        SpaceKind::P0 => {
            for (t, d) in elem_dof.iter_mut().enumerate() {
                if in_support[t] {
                    *d = Some(count);
                    count += 1;
                }
            }
        }
    }
    Ok(FunctionSpace {
        kind,
        support: support.to_vec(),
        node_dof,
        edge_dof,
        elem_dof,
        triangle_edges,
        dof_count: count,
    })
}

impl FunctionSpace {
    /// Number of local basis functions per triangle.
    pub fn local_size(&self) -> usize {
        match self.kind {
            SpaceKind::P1 => 3,
            SpaceKind::P2Enriched => 6,
            SpaceKind::P0 => 1,
        }
    }

    /// Global DoF of each local basis function (`None` where absent).
    pub fn local_dofs(&self, mesh: &Mesh, t: usize) -> [Option<usize>; 6] {
        let mut out = [None; 6];
        match self.kind {
            SpaceKind::P1 | SpaceKind::P2Enriched => {
                for (k, &v) in mesh.triangles[t].iter().enumerate() {
                    out[k] = self.node_dof[v];
                }
                if self.kind == SpaceKind::P2Enriched {
                    for k in 0..3 {
                        out[3 + k] = self.edge_dof[self.triangle_edges[t][k]];
                    }
                }
            }
            SpaceKind::P0 => out[0] = self.elem_dof[t],
        }
        out
    }

    /// Whether triangle `t` carries any enrichment DoF.
    pub fn is_enriched(&self, t: usize) -> bool {
        self.kind == SpaceKind::P2Enriched
            && self.triangle_edges[t]
                .iter()
                .any(|&e| self.edge_dof[e].is_some())
    }
}

/// Local basis values and gradients at barycentric point `l`.
pub fn eval_basis(space: &FunctionSpace, geom: &TriGeom, l: &[f64; 3]) -> Vec<BasisValue> {
    let mut out = Vec::with_capacity(space.local_size());
    eval_basis_into(space.kind, geom, l, &mut out);
    out
}

/// Allocation-free variant of [`eval_basis`].
pub fn eval_basis_into(kind: SpaceKind, geom: &TriGeom, l: &[f64; 3], out: &mut Vec<BasisValue>) {
    out.clear();
    match kind {
        SpaceKind::P0 => out.push(BasisValue {
            value: 1.0,
            grad: [0.0; 2],
        }),
        SpaceKind::P1 | SpaceKind::P2Enriched => {
            for k in 0..3 {
                out.push(BasisValue {
                    value: l[k],
                    grad: geom.grad[k],
                });
            }
            if kind == SpaceKind::P2Enriched {
                for k in 0..3 {
                    let (a, b) = (k, (k + 1) % 3);
                    let (ga, gb) = (geom.grad[a], geom.grad[b]);
                    out.push(BasisValue {
                        value: 4.0 * l[a] * l[b],
                        grad: [
                            4.0 * (l[a] * gb[0] + l[b] * ga[0]),
                            4.0 * (l[a] * gb[1] + l[b] * ga[1]),
                        ],
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Region, Mesh};

    fn single() -> Mesh {
        Mesh {
            nodes: vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)],
            triangles: vec![[0, 1, 2]],
            triangle_region: vec![0],
            regions: vec![Region::new("air")],
            ..Default::default()
        }
    }

    fn square() -> Mesh {
        Mesh {
            nodes: vec![
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(1.0, 1.0),
                Point2::new(0.0, 1.0),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            triangle_region: vec![0, 0],
            regions: vec![Region::new("air")],
            ..Default::default()
        }
    }

    #[test]
    fn dof_counts() {
        let m = single();
        assert_eq!(build_space(&m, SpaceKind::P1, &[0]).unwrap().dof_count, 3);
        assert_eq!(build_space(&m, SpaceKind::P0, &[0]).unwrap().dof_count, 1);
        let s = square();
        assert_eq!(build_space(&s, SpaceKind::P2Enriched, &[0]).unwrap().dof_count, 9);
    }

    #[test]
    fn enrichment_stops_at_support_boundary() {
        let mut s = square();
        s.regions.push(Region::new("conductor_0"));
        s.triangle_region = vec![1, 0];
        let sp = build_space(&s, SpaceKind::P2Enriched, &[1]).unwrap();
        // triangle 0 keeps its two outer edges; the shared diagonal is dropped
        assert_eq!(sp.dof_count, 4 + 2);
        assert!(sp.is_enriched(0));
        assert!(!sp.is_enriched(1));
    }

    #[test]
    fn empty_and_unknown_support() {
        let m = single();
        assert_eq!(
            build_space(&m, SpaceKind::P0, &[]).unwrap_err(),
            SpaceError::EmptySupport(SpaceKind::P0)
        );
        assert_eq!(
            build_space(&m, SpaceKind::P1, &[3]).unwrap_err(),
            SpaceError::UnknownRegion(3)
        );
    }

    #[test]
    fn basis_values() {
        let m = single();
        let g = TriGeom::new(&m, 0);
        let sp = build_space(&m, SpaceKind::P2Enriched, &[0]).unwrap();
        let b = eval_basis(&sp, &g, &[1.0 / 3.0; 3]);
        for k in 0..3 {
            assert!((b[k].value - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(b[0].grad, [-1.0, -1.0]);
        let mid = eval_basis(&sp, &g, &[0.5, 0.5, 0.0]);
        assert!((mid[3].value - 1.0).abs() < 1e-15);
        assert_eq!(mid[4].value, 0.0);
    }

    #[test]
    fn rule_degrees() {
        for d in 1..=6 {
            let q = quad_rule(d).unwrap();
            assert!(q.degree >= d);
            assert!(q.weights.iter().all(|&w| w > 0.0));
        }
        assert!(quad_rule(0).is_err());
        assert!(quad_rule(7).is_err());
        let q = quad_rule(1).unwrap();
        assert_eq!(q.points, vec![[1.0 / 3.0; 3]]);
    }
}
