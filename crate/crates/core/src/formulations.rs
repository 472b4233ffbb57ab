//! Residuals and Jacobians of the homogenized A–V, homogenized J–A–V and
//! resolved A–V problems.
//!
//! Unknowns are ordered `[a | j | u]`: A-space coefficients, element-wise
//! current densities (J–A–V only) and the Φ-basis amplitudes of every stack.
//! The resolved model reuses the A–V path with one single-function stack per
//! HTS layer.
//!
//! Time stepping is a θ-scheme: the curl-curl term acts on
//! `a_θ = θ·a + (1−θ)·a_prev`, the electric field uses the backward
//! difference `E = −(a − a_prev)/dt − Φ`, and the imposed current is taken
//! at `t_prev + θ·dt`. With θ = 1 this is implicit Euler; θ = ½ makes the
//! discrete magnetic energy balance exact.
//!
//! All rows are in amperes: A and Φ rows naturally, J rows after scaling by
//! `σ_c = J_c,eng/E_c`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::foil::{cut_quadrature, FoilBasisSpec, FoilError, FoilStack};
use crate::materials::{
    rho_differential, rho_power_law, shell_map_tensor, sigma_differential, sigma_power_law,
    MaterialError, PowerLawParams,
};
use crate::mesh::{Mesh, MeshedStack, Point2, RegionRole};
use crate::sparse::SparseMatrix;
use crate::spaces::{
    build_space, eval_basis_into, quad_rule, FunctionSpace, SpaceError, SpaceKind, TriGeom,
};
use crate::NU_0;

#[derive(Debug, Error, PartialEq)]
pub enum AssemblyError {
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Foil(#[from] FoilError),
    #[error("region '{0}' missing from the mesh")]
    MissingRegion(String),
    #[error("Dirichlet boundary '{0}' missing from the mesh")]
    MissingBoundary(String),
    #[error("invalid problem: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    AvHomog,
    JavHomog,
    AvResolved,
}

impl Formulation {
    pub fn is_homogenized(&self) -> bool {
        !matches!(self, Formulation::AvResolved)
    }
}

/// Shell annulus on which the radial map to infinity is applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShellSpec {
    pub region: usize,
    pub r_int: f64,
    pub r_ext: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemOptions {
    pub formulation: Formulation,
    pub basis: FoilBasisSpec,
    pub params: PowerLawParams,
    /// A-space inside the conductors; `None` picks enriched P2 for the
    /// homogenized problems and P1 for the resolved one.
    pub a_space: Option<SpaceKind>,
    pub theta: f64,
    /// Quadrature degree for the nonlinear conductor terms.
    pub quad_conductor: usize,
    /// Quadrature degree inside the shell (non-polynomial tensor).
    pub quad_shell: usize,
    /// Boundary names carrying `A = 0`; `None` means `outer` plus `sym_x`
    /// when present.
    pub dirichlet: Option<Vec<String>>,
    /// Shell radii; `None` treats the shell region as plain air.
    pub shell_radii: Option<(f64, f64)>,
    /// Ratio of the full cross-section to the meshed part.
    pub symmetry_factor: f64,
}

impl Default for ProblemOptions {
    fn default() -> Self {
        Self {
            formulation: Formulation::JavHomog,
            basis: FoilBasisSpec::default(),
            params: PowerLawParams::default(),
            a_space: None,
            theta: 1.0,
            quad_conductor: 5,
            quad_shell: 4,
            dirichlet: None,
            shell_radii: None,
            symmetry_factor: 1.0,
        }
    }
}

/// Position of each unknown block in the monolithic vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub n_a: usize,
    pub n_j: usize,
    pub n_u: usize,
    /// First Φ unknown of each stack, relative to the Φ block.
    pub u_offset: Vec<usize>,
}

impl Layout {
    /// Size of the global system.
    pub fn len(&self) -> usize {
        self.n_a + self.n_j + self.n_u
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn j(&self, k: usize) -> usize {
        self.n_a + k
    }

    pub fn u(&self, stack: usize, i: usize) -> usize {
        self.n_a + self.n_j + self.u_offset[stack] + i
    }
}

#[derive(Debug, Clone)]
struct CondQp {
    w: f64,
    n: [f64; 6],
    p: Vec<f64>,
}

/// Precomputed data of one conducting triangle.
#[derive(Debug, Clone)]
struct CondElem {
    t: usize,
    stack: usize,
    a_dofs: [Option<usize>; 6],
    nloc: usize,
    area: f64,
    qps: Vec<CondQp>,
    j_dof: Option<usize>,
    int_n: [f64; 6],
    int_p: Vec<f64>,
}

/// A fully specified discrete problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub formulation: Formulation,
    pub mesh: Mesh,
    pub a_space: FunctionSpace,
    pub j_space: Option<FunctionSpace>,
    /// Constraint groups: homogenized stacks, or resolved layers.
    pub stacks: Vec<FoilStack>,
    /// Geometry stack of each constraint group.
    pub stack_of: Vec<usize>,
    pub layout: Layout,
    /// Unknowns fixed to zero by Dirichlet conditions.
    pub fixed: Vec<bool>,
    pub theta: f64,
    pub symmetry_factor: f64,
    pub quad_conductor: usize,
    pub shell: Option<ShellSpec>,
    stiffness: SparseMatrix,
    cond: Vec<CondElem>,
}

/// Slope used for the material law in the Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Tangent {
    /// Exact derivative (Newton).
    #[default]
    Differential,
    /// Secant value `σ(|E|)` or `ρ(|J|)` (fixed-point / Kačanov step).
    Secant,
}

/// Data of the time step being solved.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub z_prev: &'a [f64],
    pub dt: f64,
    /// Imposed current per turn at `t_prev + θ·dt`.
    pub current: f64,
    pub tangent: Tangent,
}

impl<'a> StepInput<'a> {
    pub fn new(z_prev: &'a [f64], dt: f64, current: f64) -> Self {
        Self {
            z_prev,
            dt,
            current,
            tangent: Tangent::Differential,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub residual: Vec<f64>,
    pub jacobian: SparseMatrix,
}

/// System restricted to the free unknowns.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub residual: Vec<f64>,
    pub jacobian: SparseMatrix,
    /// Full index of each reduced unknown.
    pub free: Vec<usize>,
}

/// Builds the problem for `mesh` and the clipped stacks `stacks`.
pub fn build_problem(
    mesh: Mesh,
    stacks: &[MeshedStack],
    opts: &ProblemOptions,
) -> Result<Problem, AssemblyError> {
    opts.params.validate()?;
    if !(opts.theta > 0.0 && opts.theta <= 1.0) {
        return Err(AssemblyError::Invalid("theta must lie in (0, 1]".into()));
    }
    if opts.formulation == Formulation::AvHomog && opts.params.eps_sigma == 0.0 && opts.params.n > 1.0
    {
        return Err(AssemblyError::Material(MaterialError::SingularSigma));
    }
    let region = |name: String| -> Result<usize, AssemblyError> {
        mesh.region_index(&name)
            .ok_or(AssemblyError::MissingRegion(name))
    };

    let mut groups = Vec::new();
    let mut stack_of = Vec::new();
    for (k, s) in stacks.iter().enumerate() {
        match opts.formulation {
            Formulation::AvHomog | Formulation::JavHomog => {
                let r = region(RegionRole::Conductor(s.index).name())?;
                groups.push(FoilStack::new(r, s, opts.basis, opts.params.clone())?);
                stack_of.push(k);
            }
            Formulation::AvResolved => {
                for layer in 0..s.turns {
                    let r = region(RegionRole::Layer { stack: s.index, layer }.name())?;
                    groups.push(FoilStack::resolved_layer(r, s, layer, &opts.params));
                    stack_of.push(k);
                }
            }
        }
    }
    if groups.is_empty() {
        return Err(AssemblyError::Invalid("no conductor in the problem".into()));
    }
    let conductor_regions: Vec<usize> = groups.iter().map(|g| g.region).collect();
    let a_kind = opts.a_space.unwrap_or(match opts.formulation {
        Formulation::JavHomog | Formulation::AvHomog => SpaceKind::P2Enriched,
        Formulation::AvResolved => SpaceKind::P1,
    });
    if a_kind == SpaceKind::P0 {
        return Err(AssemblyError::Invalid("A needs a nodal space".into()));
    }
    let all: Vec<usize> = (0..mesh.regions.len()).collect();
    let a_space = match a_kind {
        SpaceKind::P2Enriched => build_space(&mesh, a_kind, &conductor_regions)?,
        _ => build_space(&mesh, SpaceKind::P1, &all)?,
    };
    let j_space = match opts.formulation {
        Formulation::JavHomog => Some(build_space(&mesh, SpaceKind::P0, &conductor_regions)?),
        _ => None,
    };
    let mut u_offset = Vec::with_capacity(groups.len());
    let mut n_u = 0;
    for g in &groups {
        u_offset.push(n_u);
        n_u += g.n_p();
    }
    let layout = Layout {
        n_a: a_space.dof_count,
        n_j: j_space.as_ref().map_or(0, |s| s.dof_count),
        n_u,
        u_offset,
    };

    // Dirichlet DoFs: nodes on the tagged edges, plus bubbles of such edges.
    let names: Vec<String> = match &opts.dirichlet {
        Some(v) => v.clone(),
        None => ["outer", "sym_x"]
            .iter()
            .filter(|n| mesh.boundary_index(n).is_some() || **n == "outer")
            .map(|s| s.to_string())
            .collect(),
    };
    let mut tags = Vec::new();
    for n in &names {
        tags.push(
            mesh.boundary_index(n)
                .ok_or_else(|| AssemblyError::MissingBoundary(n.clone()))?,
        );
    }
    let mut fixed = vec![false; layout.len()];
    let on = mesh.nodes_on_boundaries(&tags);
    for (v, &b) in on.iter().enumerate() {
        if b {
            if let Some(d) = a_space.node_dof[v] {
                fixed[d] = true;
            }
        }
    }
    if a_space.kind == SpaceKind::P2Enriched {
        let table = mesh.edge_table();
        let mut tagged = std::collections::HashSet::new();
        for e in &mesh.boundary_edges {
            if tags.contains(&e.tag) {
                tagged.insert(crate::mesh::sorted_pair(e.nodes[0], e.nodes[1]));
            }
        }
        for (e, nodes) in table.edges.iter().enumerate() {
            if let Some(d) = a_space.edge_dof[e] {
                if tagged.contains(nodes) {
                    fixed[d] = true;
                }
            }
        }
    }

    let shell = match opts.shell_radii {
        Some((r_int, r_ext)) => {
            let region = mesh
                .regions_with_role(|r| *r == RegionRole::Shell)
                .first()
                .copied()
                .ok_or_else(|| AssemblyError::MissingRegion("shell".into()))?;
            Some(ShellSpec {
                region,
                r_int,
                r_ext,
            })
        }
        None => None,
    };
    let stiffness = assemble_stiffness(&mesh, &a_space, shell, opts.quad_shell)?;
    let mut p = Problem {
        formulation: opts.formulation,
        mesh,
        a_space,
        j_space,
        stacks: groups,
        stack_of,
        layout,
        fixed,
        theta: opts.theta,
        symmetry_factor: opts.symmetry_factor,
        quad_conductor: opts.quad_conductor,
        shell,
        stiffness,
        cond: Vec::new(),
    };
    p.cond = p.precompute_conductors()?;
    Ok(p)
}

/// `ν₀ ∫ ∇N_k · T ∇N_l` over the whole mesh (`T` the shell tensor inside the
/// shell, identity elsewhere), indexed by A-space DoFs.
pub fn assemble_stiffness(
    mesh: &Mesh,
    space: &FunctionSpace,
    shell: Option<ShellSpec>,
    quad_shell: usize,
) -> Result<SparseMatrix, AssemblyError> {
    let mut k = SparseMatrix::new(space.dof_count);
    let lin = quad_rule(2)?;
    let sh = quad_rule(quad_shell)?;
    let mut basis = Vec::new();
    for t in 0..mesh.triangles.len() {
        let dofs = space.local_dofs(mesh, t);
        let nloc = space.local_size();
        let geom = TriGeom::new(mesh, t);
        let in_shell = shell.filter(|s| mesh.triangle_region[t] == s.region);
        let mut local = [[0.0; 6]; 6];
        if in_shell.is_none() && !space.is_enriched(t) {
            for a in 0..3 {
                for b in 0..3 {
                    let (ga, gb) = (geom.grad[a], geom.grad[b]);
                    local[a][b] = NU_0 * geom.area * (ga[0] * gb[0] + ga[1] * gb[1]);
                }
            }
        } else {
            let rule = if in_shell.is_some() { &sh } else { &lin };
            for (l, w) in rule.points.iter().zip(&rule.weights) {
                let tensor = match in_shell {
                    Some(s) => shell_map_tensor(geom.point(l), s.r_int, s.r_ext)?,
                    None => [[1.0, 0.0], [0.0, 1.0]],
                };
                eval_basis_into(space.kind, &geom, l, &mut basis);
                let wk = NU_0 * w * geom.area;
                for a in 0..nloc {
                    let ga = basis[a].grad;
                    for b in 0..nloc {
                        let gb = basis[b].grad;
                        let tg = [
                            tensor[0][0] * gb[0] + tensor[0][1] * gb[1],
                            tensor[1][0] * gb[0] + tensor[1][1] * gb[1],
                        ];
                        local[a][b] += wk * (ga[0] * tg[0] + ga[1] * tg[1]);
                    }
                }
            }
        }
        for a in 0..nloc {
            let Some(da) = dofs[a] else { continue };
            for b in 0..nloc {
                if let Some(db) = dofs[b] {
                    k.push(da, db, local[a][b]);
                }
            }
        }
    }
    Ok(k)
}

impl Problem {
    fn precompute_conductors(&self) -> Result<Vec<CondElem>, AssemblyError> {
        let rule = quad_rule(self.quad_conductor)?;
        let mut stack_of_region = vec![None; self.mesh.regions.len()];
        for (s, g) in self.stacks.iter().enumerate() {
            stack_of_region[g.region] = Some(s);
        }
        let mut out = Vec::new();
        let mut basis = Vec::new();
        for t in 0..self.mesh.triangles.len() {
            let Some(s) = stack_of_region[self.mesh.triangle_region[t]] else {
                continue;
            };
            let stack = &self.stacks[s];
            let geom = TriGeom::new(&self.mesh, t);
            let nloc = self.a_space.local_size();
            let mut qps = Vec::new();
            let mut int_n = [0.0; 6];
            let mut int_p = vec![0.0; stack.n_p()];
            for (l, w) in cut_quadrature(&geom, &stack.discontinuities(), &rule) {
                eval_basis_into(self.a_space.kind, &geom, &l, &mut basis);
                let mut n = [0.0; 6];
                for k in 0..nloc {
                    n[k] = basis[k].value;
                    int_n[k] += w * n[k];
                }
                let mut p = vec![0.0; stack.n_p()];
                stack.eval_into(geom.point(&l).x, &mut p);
                for (i, v) in p.iter().enumerate() {
                    int_p[i] += w * v;
                }
                qps.push(CondQp { w, n, p });
            }
            out.push(CondElem {
                t,
                stack: s,
                a_dofs: self.a_space.local_dofs(&self.mesh, t),
                nloc,
                area: geom.area,
                qps,
                j_dof: self
                    .j_space
                    .as_ref()
                    .and_then(|js| js.elem_dof[t])
                    .map(|k| self.layout.j(k)),
                int_n,
                int_p,
            });
        }
        Ok(out)
    }

    /// Number of conductor quadrature points.
    pub fn point_count(&self) -> usize {
        self.cond.iter().map(|e| e.qps.len()).sum()
    }

    /// `σ(|E|)·E` at every conductor quadrature point.
    pub fn point_currents(&self, z: &[f64], step: &StepInput) -> Result<Vec<f64>, AssemblyError> {
        let mut out = Vec::with_capacity(self.point_count());
        for e in &self.cond {
            let params = &self.stacks[e.stack].params;
            for q in &e.qps {
                let ef = self.e_field(z, step, e, q);
                out.push(sigma_power_law(ef.abs(), params)?.0 * ef);
            }
        }
        Ok(out)
    }

    pub fn zero_state(&self) -> Vec<f64> {
        vec![0.0; self.layout.len()]
    }

    /// Number of unknowns left after Dirichlet elimination.
    pub fn dof_count(&self) -> usize {
        self.fixed.iter().filter(|f| !**f).count()
    }

    /// Free DoFs per block `(a, j, u)`.
    pub fn dof_blocks(&self) -> (usize, usize, usize) {
        let free_a = self.fixed[..self.layout.n_a].iter().filter(|f| !**f).count();
        (free_a, self.layout.n_j, self.layout.n_u)
    }

    pub fn assemble(&self, z: &[f64], step: &StepInput) -> Result<AssembledSystem, AssemblyError> {
        match self.formulation {
            Formulation::JavHomog => assemble_jav(self, z, step),
            Formulation::AvHomog => assemble_av(self, z, step),
            Formulation::AvResolved => assemble_resolved(self, z, step),
        }
    }

    fn a_at(&self, z: &[f64], e: &CondElem, n: &[f64; 6]) -> f64 {
        let mut v = 0.0;
        for k in 0..e.nloc {
            if let Some(d) = e.a_dofs[k] {
                v += n[k] * z[d];
            }
        }
        v
    }

    fn phi_at(&self, z: &[f64], s: usize, p: &[f64]) -> f64 {
        p.iter()
            .enumerate()
            .map(|(i, pi)| pi * z[self.layout.u(s, i)])
            .sum()
    }

    /// Out-of-plane current density at every conductor quadrature point,
    /// with the point weight: `(triangle, weight, J, E)`. For A–V problems
    /// the point currents stored in the state are used, `E = e(J)`.
    fn conductor_fields(
        &self,
        z: &[f64],
        step: &StepInput,
    ) -> Result<Vec<(usize, f64, f64, f64)>, AssemblyError> {
        let mut out = Vec::new();
        for e in &self.cond {
            let params = &self.stacks[e.stack].params;
            match e.j_dof {
                Some(jd) => {
                    let j = z[jd];
                    let (rho, _) = rho_power_law(j.abs(), params);
                    out.push((e.t, e.area, j, rho * j));
                }
                None => {
                    for q in &e.qps {
                        let ef = self.e_field(z, step, e, q);
                        let (sigma, _) = sigma_power_law(ef.abs(), params)?;
                        out.push((e.t, q.w, sigma * ef, ef));
                    }
                }
            }
        }
        Ok(out)
    }

    fn e_field(&self, z: &[f64], step: &StepInput, e: &CondElem, q: &CondQp) -> f64 {
        let da = self.a_at(z, e, &q.n) - self.a_at(step.z_prev, e, &q.n);
        -da / step.dt - self.phi_at(z, e.stack, &q.p)
    }

    /// Joule power `∫ J·E` over the meshed conductors (W/m).
    pub fn joule_power(&self, z: &[f64], step: &StepInput) -> Result<f64, AssemblyError> {
        Ok(self
            .conductor_fields(z, step)?
            .iter()
            .map(|(_, w, j, e)| w * j * e)
            .sum())
    }

    /// Net current through each constraint group (A, meshed part).
    pub fn group_currents(&self, z: &[f64], step: &StepInput) -> Result<Vec<f64>, AssemblyError> {
        let mut out = vec![0.0; self.stacks.len()];
        let fields = self.conductor_fields(z, step)?;
        let mut group = vec![usize::MAX; self.mesh.triangles.len()];
        for e in &self.cond {
            group[e.t] = e.stack;
        }
        for (t, w, j, _) in fields {
            out[group[t]] += w * j;
        }
        Ok(out)
    }

    /// Element-averaged current density per conducting triangle.
    pub fn element_current_density(
        &self,
        z: &[f64],
        step: &StepInput,
    ) -> Result<Vec<f64>, AssemblyError> {
        let mut jz = vec![0.0; self.mesh.triangles.len()];
        for (t, w, j, _) in self.conductor_fields(z, step)? {
            jz[t] += w * j;
        }
        for e in &self.cond {
            jz[e.t] /= e.area;
        }
        Ok(jz)
    }

    /// Voltage per turn and unit length of each constraint group,
    /// `V = −(1/L_x)∫Φ dx`.
    pub fn group_voltages(&self, z: &[f64]) -> Vec<f64> {
        self.stacks
            .iter()
            .enumerate()
            .map(|(s, g)| {
                let ints = g.basis_integrals();
                let mean: f64 = ints
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * z[self.layout.u(s, i)])
                    .sum::<f64>()
                    / g.length();
                -mean
            })
            .collect()
    }

    /// Voltage per turn of each geometry stack (mean over its groups,
    /// weighted by turns).
    pub fn stack_voltages(&self, z: &[f64]) -> Vec<f64> {
        let n = self.stack_of.iter().copied().max().map_or(0, |m| m + 1);
        let mut sum = vec![0.0; n];
        let mut turns = vec![0.0; n];
        for ((g, v), &s) in self.stacks.iter().zip(self.group_voltages(z)).zip(&self.stack_of) {
            sum[s] += v * g.turns as f64;
            turns[s] += g.turns as f64;
        }
        sum.iter().zip(&turns).map(|(s, t)| s / t).collect()
    }

    /// Power delivered by the imposed currents to the meshed part,
    /// `Σ scale·N·I·V`.
    pub fn source_power(&self, z: &[f64], current: f64) -> f64 {
        self.stacks
            .iter()
            .zip(self.group_voltages(z))
            .map(|(g, v)| g.target_current(current) * v)
            .sum()
    }

    /// `½ aᵀ K a` over the meshed domain.
    pub fn magnetic_energy(&self, z: &[f64]) -> f64 {
        let a = &z[..self.layout.n_a];
        0.5 * a
            .iter()
            .zip(self.stiffness.mul_vec(a))
            .map(|(x, y)| x * y)
            .sum::<f64>()
    }

    /// `Δaᵀ K a_θ`, the discrete magnetic energy change of one step.
    pub fn magnetic_work(&self, z: &[f64], z_prev: &[f64]) -> f64 {
        let n = self.layout.n_a;
        let a_theta: Vec<f64> = (0..n)
            .map(|i| self.theta * z[i] + (1.0 - self.theta) * z_prev[i])
            .collect();
        let ka = self.stiffness.mul_vec(&a_theta);
        (0..n).map(|i| (z[i] - z_prev[i]) * ka[i]).sum()
    }

    /// Nodal A values (the vertex coefficients of the A-space).
    pub fn nodal_a(&self, z: &[f64]) -> Vec<f64> {
        self.a_space
            .node_dof
            .iter()
            .map(|d| d.map_or(0.0, |d| z[d]))
            .collect()
    }

    /// Flux density `B = curl(A e_z) = (∂A/∂y, −∂A/∂x)` at each triangle
    /// centroid.
    pub fn element_b(&self, z: &[f64]) -> Vec<[f64; 2]> {
        let mut basis = Vec::new();
        (0..self.mesh.triangles.len())
            .map(|t| {
                let geom = TriGeom::new(&self.mesh, t);
                eval_basis_into(self.a_space.kind, &geom, &[1.0 / 3.0; 3], &mut basis);
                let dofs = self.a_space.local_dofs(&self.mesh, t);
                let mut g = [0.0; 2];
                for (k, b) in basis.iter().enumerate() {
                    if let Some(d) = dofs[k] {
                        g[0] += b.grad[0] * z[d];
                        g[1] += b.grad[1] * z[d];
                    }
                }
                [g[1], -g[0]]
            })
            .collect()
    }

    /// Adds the curl-curl rows `K·a_θ` and Jacobian `θ·K`.
    fn add_stiffness(&self, z: &[f64], step: &StepInput, sys: &mut AssembledSystem) {
        let n = self.layout.n_a;
        let a_theta: Vec<f64> = (0..n)
            .map(|i| self.theta * z[i] + (1.0 - self.theta) * step.z_prev[i])
            .collect();
        let k = &self.stiffness;
        for idx in 0..k.vals.len() {
            let (r, c, v) = (k.rows[idx], k.cols[idx], k.vals[idx]);
            sys.residual[r] += v * a_theta[c];
            sys.jacobian.push(r, c, self.theta * v);
        }
    }

    fn new_system(&self) -> AssembledSystem {
        let n = self.layout.len();
        let mut jac = SparseMatrix::new(n);
        let est = self.stiffness.vals.len() + self.cond.len() * 64;
        jac.rows.reserve(est);
        jac.cols.reserve(est);
        jac.vals.reserve(est);
        AssembledSystem {
            residual: vec![0.0; n],
            jacobian: jac,
        }
    }
}

fn check_formulation(p: &Problem, allowed: &[Formulation]) -> Result<(), AssemblyError> {
    if allowed.contains(&p.formulation) {
        Ok(())
    } else {
        Err(AssemblyError::Invalid(format!(
            "{:?} problem passed to the wrong assembler",
            p.formulation
        )))
    }
}

fn assemble_sigma(p: &Problem, z: &[f64], step: &StepInput) -> Result<AssembledSystem, AssemblyError> {
    let mut sys = p.new_system();
    p.add_stiffness(z, step, &mut sys);
    // Φ rows: b − ∫ J p
    for (s, g) in p.stacks.iter().enumerate() {
        for (i, b) in crate::foil::foil_constraint_rhs(g, step.current).into_iter().enumerate() {
            sys.residual[p.layout.u(s, i)] += b;
        }
    }
    let inv_dt = 1.0 / step.dt;
    for e in &p.cond {
        let params = &p.stacks[e.stack].params;
        let np = p.stacks[e.stack].n_p();
        let m = e.nloc + np;
        // local unknowns: A basis functions then Φ basis functions
        let mut jac = vec![0.0; m * m];
        let mut v = vec![0.0; m];
        let mut dj = vec![0.0; m];
        for q in &e.qps {
            let ef = p.e_field(z, step, e, q);
            let (sigma, _) = sigma_power_law(ef.abs(), params)?;
            let j = sigma * ef;
            let sd = match step.tangent {
                Tangent::Differential => sigma_differential(ef.abs(), params)?,
                Tangent::Secant => sigma,
            };
            // ∂J/∂a_l = −sd·n_l/dt, ∂J/∂u_i = −sd·p_i
            for k in 0..e.nloc {
                v[k] = q.n[k];
                dj[k] = q.n[k] * inv_dt;
            }
            for i in 0..np {
                v[e.nloc + i] = q.p[i];
                dj[e.nloc + i] = q.p[i];
            }
            for k in 0..e.nloc {
                if let Some(d) = e.a_dofs[k] {
                    sys.residual[d] -= q.w * j * q.n[k];
                }
            }
            for i in 0..np {
                sys.residual[p.layout.u(e.stack, i)] -= q.w * j * q.p[i];
            }
            let ws = q.w * sd;
            for r in 0..m {
                let wr = ws * v[r];
                for c in 0..m {
                    jac[r * m + c] += wr * dj[c];
                }
            }
        }
        let global = |k: usize| -> Option<usize> {
            if k < e.nloc {
                e.a_dofs[k]
            } else {
                Some(p.layout.u(e.stack, k - e.nloc))
            }
        };
        for r in 0..m {
            let Some(gr) = global(r) else { continue };
            for c in 0..m {
                if let Some(gc) = global(c) {
                    sys.jacobian.push(gr, gc, jac[r * m + c]);
                }
            }
        }
    }
    Ok(sys)
}

/// Homogenized A–V residual and Jacobian.
pub fn assemble_av(p: &Problem, z: &[f64], step: &StepInput) -> Result<AssembledSystem, AssemblyError> {
    check_formulation(p, &[Formulation::AvHomog])?;
    assemble_sigma(p, z, step)
}

/// Resolved A–V reference: every HTS layer constrained to carry the turn
/// current through its own Φ unknown.
pub fn assemble_resolved(
    p: &Problem,
    z: &[f64],
    step: &StepInput,
) -> Result<AssembledSystem, AssemblyError> {
    check_formulation(p, &[Formulation::AvResolved])?;
    assemble_sigma(p, z, step)
}

/// Homogenized J–A–V residual and Jacobian.
pub fn assemble_jav(p: &Problem, z: &[f64], step: &StepInput) -> Result<AssembledSystem, AssemblyError> {
    check_formulation(p, &[Formulation::JavHomog])?;
    let mut sys = p.new_system();
    p.add_stiffness(z, step, &mut sys);
    // Φ rows: ∫ J p − b
    for (s, g) in p.stacks.iter().enumerate() {
        for (i, b) in crate::foil::foil_constraint_rhs(g, step.current).into_iter().enumerate() {
            sys.residual[p.layout.u(s, i)] -= b;
        }
    }
    let inv_dt = 1.0 / step.dt;
    for e in &p.cond {
        let jd = e.j_dof.expect("J DoF on every conductor element");
        let params = &p.stacks[e.stack].params;
        let sc = params.sigma_c();
        let j = z[jd];
        let (rho, _) = rho_power_law(j.abs(), params);
        let rd = match step.tangent {
            Tangent::Differential => rho_differential(j.abs(), params),
            Tangent::Secant => rho,
        };

        let mut rj = rho * j * e.area;
        for k in 0..e.nloc {
            if let Some(d) = e.a_dofs[k] {
                sys.residual[d] -= j * e.int_n[k];
                sys.jacobian.push(d, jd, -e.int_n[k]);
                rj += e.int_n[k] * (z[d] - step.z_prev[d]) * inv_dt;
                sys.jacobian.push(jd, d, sc * e.int_n[k] * inv_dt);
            }
        }
        for (i, ip) in e.int_p.iter().enumerate() {
            let u = p.layout.u(e.stack, i);
            rj += ip * z[u];
            sys.jacobian.push(jd, u, sc * ip);
            sys.residual[u] += j * ip;
            sys.jacobian.push(u, jd, *ip);
        }
        sys.residual[jd] += sc * rj;
        sys.jacobian.push(jd, jd, sc * rd * e.area);
    }
    Ok(sys)
}

/// Eliminates the Dirichlet unknowns (fixed at zero) symmetrically.
pub fn apply_boundary_conditions(sys: &AssembledSystem, p: &Problem) -> ReducedSystem {
    let mut map = vec![usize::MAX; p.fixed.len()];
    let mut free = Vec::with_capacity(p.fixed.len());
    for (i, &f) in p.fixed.iter().enumerate() {
        if !f {
            map[i] = free.len();
            free.push(i);
        }
    }
    let mut jac = SparseMatrix::new(free.len());
    let j = &sys.jacobian;
    for k in 0..j.vals.len() {
        let (r, c) = (map[j.rows[k]], map[j.cols[k]]);
        if r != usize::MAX && c != usize::MAX {
            jac.push(r, c, j.vals[k]);
        }
    }
    ReducedSystem {
        residual: free.iter().map(|&i| sys.residual[i]).collect(),
        jacobian: jac,
        free,
    }
}

/// Linear magnetostatics with P1 elements: `∫ ν ∇a·T∇a' = ∫ J a'` for a
/// prescribed source density, `A = 0` on `dirichlet`. Returns nodal A.
pub fn solve_magnetostatic(
    mesh: &Mesh,
    dirichlet: &[&str],
    shell: Option<ShellSpec>,
    source: impl Fn(usize, Point2) -> f64,
) -> Result<Vec<f64>, crate::Error> {
    let all: Vec<usize> = (0..mesh.regions.len()).collect();
    let space = build_space(mesh, SpaceKind::P1, &all)?;
    let k = assemble_stiffness(mesh, &space, shell, 4)?;
    let mut tags = Vec::new();
    for d in dirichlet {
        tags.push(
            mesh.boundary_index(d)
                .ok_or_else(|| AssemblyError::MissingBoundary(d.to_string()))?,
        );
    }
    let on = mesh.nodes_on_boundaries(&tags);
    let mut fixed = vec![false; space.dof_count];
    for (v, b) in on.iter().enumerate() {
        if *b {
            fixed[space.node_dof[v].expect("P1 over the whole mesh")] = true;
        }
    }
    let rule = quad_rule(2)?;
    let mut rhs = vec![0.0; space.dof_count];
    for t in 0..mesh.triangles.len() {
        let geom = TriGeom::new(mesh, t);
        let dofs = space.local_dofs(mesh, t);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let f = source(t, geom.point(l));
            if f == 0.0 {
                continue;
            }
            for a in 0..3 {
                rhs[dofs[a].unwrap()] += w * geom.area * f * l[a];
            }
        }
    }
    let n = space.dof_count;
    let sys = AssembledSystem {
        residual: rhs,
        jacobian: k,
    };
    let mut map = vec![usize::MAX; n];
    let mut free = Vec::new();
    for i in 0..n {
        if !fixed[i] {
            map[i] = free.len();
            free.push(i);
        }
    }
    let mut jac = SparseMatrix::new(free.len());
    for idx in 0..sys.jacobian.vals.len() {
        let (r, c) = (map[sys.jacobian.rows[idx]], map[sys.jacobian.cols[idx]]);
        if r != usize::MAX && c != usize::MAX {
            jac.push(r, c, sys.jacobian.vals[idx]);
        }
    }
    let b: Vec<f64> = free.iter().map(|&i| sys.residual[i]).collect();
    let x = crate::sparse::DirectSolver::new().solve(&jac, &b)?;
    let mut a = vec![0.0; n];
    for (k, &i) in free.iter().enumerate() {
        a[i] = x[k];
    }
    Ok(mesh
        .nodes
        .iter()
        .enumerate()
        .map(|(v, _)| a[space.node_dof[v].unwrap()])
        .collect())
}
