//! Tagged 2D triangle meshes of coil cross-sections.
//!
//! A [`Mesh`] stores node coordinates, counter-clockwise triangles, one
//! region index per triangle and tagged boundary edges. Region and boundary
//! names are kept in side tables; their semantic role is derived from the
//! name (`air`, `shell`, `conductor_<k>`, `layer_<k>_<i>`).

mod generate;
pub mod msh;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{
    generate_coil_mesh, GeometrySpec, MeshMode, MeshSizes, MeshedStack, StackPlacement, Symmetry,
};

/// Boundary tag names produced by the generator.
pub const BOUNDARY_OUTER: &str = "outer";
pub const BOUNDARY_SYM_X: &str = "sym_x";
pub const BOUNDARY_SYM_Y: &str = "sym_y";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Semantic role of a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionRole {
    Air,
    Shell,
    /// Homogenized stack `k`.
    Conductor(usize),
    /// Resolved HTS layer `layer` of stack `stack`.
    Layer { stack: usize, layer: usize },
    /// Named region with no solver meaning (treated as air).
    Other,
}

impl RegionRole {
    pub fn from_name(name: &str) -> Self {
        match name {
            "air" => return RegionRole::Air,
            "shell" => return RegionRole::Shell,
            _ => {}
        }
        if let Some(rest) = name.strip_prefix("conductor_") {
            if let Ok(k) = rest.parse() {
                return RegionRole::Conductor(k);
            }
        }
        if let Some(rest) = name.strip_prefix("layer_") {
            let mut parts = rest.splitn(2, '_');
            if let (Some(a), Some(b)) = (parts.next(), parts.next()) {
                if let (Ok(stack), Ok(layer)) = (a.parse(), b.parse()) {
                    return RegionRole::Layer { stack, layer };
                }
            }
        }
        RegionRole::Other
    }

    pub fn name(&self) -> String {
        match self {
            RegionRole::Air => "air".into(),
            RegionRole::Shell => "shell".into(),
            RegionRole::Conductor(k) => format!("conductor_{k}"),
            RegionRole::Layer { stack, layer } => format!("layer_{stack}_{layer}"),
            RegionRole::Other => "other".into(),
        }
    }

    pub fn is_conducting(&self) -> bool {
        matches!(self, RegionRole::Conductor(_) | RegionRole::Layer { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub name: String,
    pub role: RegionRole,
}

impl Region {
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        let role = RegionRole::from_name(&name);
        Self { name, role }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<Point2>,
    pub triangles: Vec<[usize; 3]>,
    pub triangle_region: Vec<usize>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub regions: Vec<Region>,
    pub boundaries: Vec<String>,
}

/// Unique undirected edges of a mesh and the triangle-to-edge incidence.
///
/// Local edge `k` of a triangle joins local vertices `k` and `(k + 1) % 3`.
#[derive(Debug, Clone)]
pub struct EdgeTable {
    /// Sorted node pairs.
    pub edges: Vec<[usize; 2]>,
    pub triangle_edges: Vec<[usize; 3]>,
    /// Triangles adjacent to each edge.
    pub edge_triangles: Vec<Vec<usize>>,
}

impl Mesh {
    pub fn region_index(&self, name: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.name == name)
    }

    pub fn boundary_index(&self, name: &str) -> Option<usize> {
        self.boundaries.iter().position(|b| b == name)
    }

    pub fn regions_with_role(&self, pred: impl Fn(&RegionRole) -> bool) -> Vec<usize> {
        (0..self.regions.len())
            .filter(|&r| pred(&self.regions[r].role))
            .collect()
    }

    pub fn triangle_points(&self, t: usize) -> [Point2; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    /// Signed area, positive for counter-clockwise triangles.
    pub fn signed_area(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.triangle_points(t);
        signed_area(p0, p1, p2)
    }

    pub fn centroid(&self, t: usize) -> Point2 {
        let [p0, p1, p2] = self.triangle_points(t);
        Point2::new((p0.x + p1.x + p2.x) / 3.0, (p0.y + p1.y + p2.y) / 3.0)
    }

    pub fn region_area(&self, region: usize) -> f64 {
        (0..self.triangles.len())
            .filter(|&t| self.triangle_region[t] == region)
            .map(|t| self.signed_area(t))
            .sum()
    }

    pub fn triangles_in_regions(&self, regions: &[usize]) -> Vec<usize> {
        (0..self.triangles.len())
            .filter(|&t| regions.contains(&self.triangle_region[t]))
            .collect()
    }

    pub fn edge_table(&self) -> EdgeTable {
        let mut index: HashMap<[usize; 2], usize> = HashMap::with_capacity(self.triangles.len() * 2);
        let mut edges = Vec::new();
        let mut edge_triangles: Vec<Vec<usize>> = Vec::new();
        let mut triangle_edges = Vec::with_capacity(self.triangles.len());
        for (t, tri) in self.triangles.iter().enumerate() {
            let mut local = [0usize; 3];
            for k in 0..3 {
                let key = sorted_pair(tri[k], tri[(k + 1) % 3]);
                let e = *index.entry(key).or_insert_with(|| {
                    edges.push(key);
                    edge_triangles.push(Vec::new());
                    edges.len() - 1
                });
                edge_triangles[e].push(t);
                local[k] = e;
            }
            triangle_edges.push(local);
        }
        EdgeTable {
            edges,
            triangle_edges,
            edge_triangles,
        }
    }

    /// Nodes lying on boundary edges carrying any of `tags`.
    pub fn nodes_on_boundaries(&self, tags: &[usize]) -> Vec<bool> {
        let mut on = vec![false; self.nodes.len()];
        for e in &self.boundary_edges {
            if tags.contains(&e.tag) {
                on[e.nodes[0]] = true;
                on[e.nodes[1]] = true;
            }
        }
        on
    }
}

pub(crate) fn sorted_pair(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

pub(crate) fn signed_area(p0: Point2, p1: Point2, p2: Point2) -> f64 {
    0.5 * ((p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y))
}

/// Rejected geometry description.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid geometry: {0}")]
    Invalid(String),
    #[error("stacks {0} and {1} overlap")]
    Overlap(usize, usize),
    #[error("generated mesh failed validation: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    NonFiniteNode,
    NodeOutOfRange,
    RepeatedNode,
    NegativeArea,
    ZeroArea,
    NonConformingEdge,
    UnknownRegion,
    UnknownBoundaryTag,
    BoundaryEdgeNotOnBoundary,
    UntaggedBoundaryEdge,
    DuplicateConductorRole,
    RegionCountMismatch,
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DiagnosticKind::NonFiniteNode => "non-finite node coordinate",
            DiagnosticKind::NodeOutOfRange => "node index out of range",
            DiagnosticKind::RepeatedNode => "repeated node in triangle",
            DiagnosticKind::NegativeArea => "negative area",
            DiagnosticKind::ZeroArea => "zero area",
            DiagnosticKind::NonConformingEdge => "non-conforming edge",
            DiagnosticKind::UnknownRegion => "unknown region tag",
            DiagnosticKind::UnknownBoundaryTag => "unknown boundary tag",
            DiagnosticKind::BoundaryEdgeNotOnBoundary => "tagged edge is not a boundary edge",
            DiagnosticKind::UntaggedBoundaryEdge => "untagged boundary edge",
            DiagnosticKind::DuplicateConductorRole => "duplicate conductor region",
            DiagnosticKind::RegionCountMismatch => "region array length mismatch",
        };
        f.write_str(s)
    }
}

/// One invariant violation found by [`validate_mesh`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// Offending triangle, node, edge or region index (depending on kind).
    pub element: Option<usize>,
    pub kind: DiagnosticKind,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.element {
            Some(e) => write!(f, "{} (entity {e})", self.kind),
            None => write!(f, "{}", self.kind),
        }
    }
}

/// Checks every mesh invariant and reports one diagnostic per violation.
pub fn validate_mesh(m: &Mesh) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut push = |element: Option<usize>, kind| out.push(Diagnostic { element, kind });

    for (i, p) in m.nodes.iter().enumerate() {
        if !p.is_finite() {
            push(Some(i), DiagnosticKind::NonFiniteNode);
        }
    }
    if m.triangle_region.len() != m.triangles.len() {
        push(None, DiagnosticKind::RegionCountMismatch);
    }

    let mut topo_ok = true;
    for (t, tri) in m.triangles.iter().enumerate() {
        if tri.iter().any(|&n| n >= m.nodes.len()) {
            push(Some(t), DiagnosticKind::NodeOutOfRange);
            topo_ok = false;
            continue;
        }
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            push(Some(t), DiagnosticKind::RepeatedNode);
            topo_ok = false;
            continue;
        }
        let a = m.signed_area(t);
        if a < 0.0 {
            push(Some(t), DiagnosticKind::NegativeArea);
        } else if a == 0.0 || !a.is_finite() {
            push(Some(t), DiagnosticKind::ZeroArea);
        }
        if let Some(&r) = m.triangle_region.get(t) {
            if r >= m.regions.len() {
                push(Some(t), DiagnosticKind::UnknownRegion);
            }
        }
    }

    if topo_ok {
        let table = m.edge_table();
        let mut boundary: HashMap<[usize; 2], bool> = HashMap::new();
        for (e, tris) in table.edge_triangles.iter().enumerate() {
            if tris.len() > 2 {
                push(Some(e), DiagnosticKind::NonConformingEdge);
            } else if tris.len() == 1 {
                boundary.insert(table.edges[e], false);
            }
        }
        for (i, be) in m.boundary_edges.iter().enumerate() {
            if be.tag >= m.boundaries.len() {
                push(Some(i), DiagnosticKind::UnknownBoundaryTag);
            }
            match boundary.get_mut(&sorted_pair(be.nodes[0], be.nodes[1])) {
                Some(seen) => *seen = true,
                None => push(Some(i), DiagnosticKind::BoundaryEdgeNotOnBoundary),
            }
        }
        let mut untagged: Vec<_> = boundary.iter().filter(|(_, &s)| !s).map(|(k, _)| *k).collect();
        untagged.sort_unstable();
        for k in untagged {
            let e = table.edges.iter().position(|x| *x == k);
            push(e, DiagnosticKind::UntaggedBoundaryEdge);
        }
    }

    let mut seen = HashMap::new();
    for (r, region) in m.regions.iter().enumerate() {
        if region.role.is_conducting() && seen.insert(region.role, r).is_some() {
            push(Some(r), DiagnosticKind::DuplicateConductorRole);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Mesh {
        Mesh {
            nodes: vec![
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(1.0, 1.0),
                Point2::new(0.0, 1.0),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            triangle_region: vec![0, 0],
            boundary_edges: [[0, 1], [1, 2], [2, 3], [3, 0]]
                .into_iter()
                .map(|nodes| BoundaryEdge { nodes, tag: 0 })
                .collect(),
            regions: vec![Region::new("air")],
            boundaries: vec![BOUNDARY_OUTER.into()],
        }
    }

    #[test]
    fn valid_mesh_has_no_diagnostics() {
        assert!(validate_mesh(&unit_square()).is_empty());
    }

    #[test]
    fn clockwise_triangle_reports_negative_area() {
        let mut m = unit_square();
        m.triangles[1] = [0, 3, 2];
        let d = validate_mesh(&m);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagnosticKind::NegativeArea);
        assert_eq!(d[0].element, Some(1));
        assert_eq!(d[0].kind.to_string(), "negative area");
    }

    #[test]
    fn duplicated_triangle_is_non_conforming() {
        let mut m = unit_square();
        m.triangles.push([0, 1, 2]);
        m.triangle_region.push(0);
        let d = validate_mesh(&m);
        // edges (0,1), (1,2), (0,2) are now shared by three triangles
        assert_eq!(
            d.iter().filter(|d| d.kind == DiagnosticKind::NonConformingEdge).count(),
            1
        );
        assert!(d.iter().any(|d| d.kind.to_string() == "non-conforming edge"));
    }

    #[test]
    fn repeated_and_out_of_range_nodes() {
        let mut m = unit_square();
        m.triangles.push([0, 0, 1]);
        m.triangles.push([0, 1, 99]);
        m.triangle_region.extend([0, 0]);
        let kinds: Vec<_> = validate_mesh(&m).into_iter().map(|d| d.kind).collect();
        assert!(kinds.contains(&DiagnosticKind::RepeatedNode));
        assert!(kinds.contains(&DiagnosticKind::NodeOutOfRange));
    }

    #[test]
    fn untagged_boundary_is_reported() {
        let mut m = unit_square();
        m.boundary_edges.pop();
        let d = validate_mesh(&m);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagnosticKind::UntaggedBoundaryEdge);
    }

    #[test]
    fn duplicate_conductor_region() {
        let mut m = unit_square();
        m.regions = vec![Region::new("conductor_0"), Region::new("conductor_0")];
        m.triangle_region = vec![0, 1];
        let d = validate_mesh(&m);
        assert_eq!(d[0].kind, DiagnosticKind::DuplicateConductorRole);
    }

    #[test]
    fn role_names_round_trip() {
        for role in [
            RegionRole::Air,
            RegionRole::Shell,
            RegionRole::Conductor(3),
            RegionRole::Layer { stack: 1, layer: 17 },
        ] {
            assert_eq!(RegionRole::from_name(&role.name()), role);
        }
        assert_eq!(RegionRole::from_name("iron"), RegionRole::Other);
    }

    #[test]
    fn edge_table_of_square() {
        let t = unit_square().edge_table();
        assert_eq!(t.edges.len(), 5);
        let shared = t.edge_triangles.iter().filter(|v| v.len() == 2).count();
        assert_eq!(shared, 1);
    }
}
