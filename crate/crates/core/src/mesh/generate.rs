//! Structured generator for coil cross-section meshes.
//!
//! The stacks sit in a rectangular box meshed by a tensor-product grid whose
//! lines follow every stack (and, in resolved mode, every HTS layer) edge.
//! The box is joined to the air circle of radius `air_radius` by a graded
//! ring, and an outer annulus up to `shell_radius` is tagged `shell` for the
//! coordinate transformation. Symmetry planes clip the domain to a half or a
//! quarter disk.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use super::{
    validate_mesh, BoundaryEdge, GeometryError, Mesh, Point2, Region, RegionRole,
    BOUNDARY_OUTER, BOUNDARY_SYM_X, BOUNDARY_SYM_Y,
};

/// Placement of one tape stack in the full (unclipped) cross-section.
///
/// The stacking direction is `x`: turn `i` occupies
/// `[x_min + i·pitch, x_min + (i+1)·pitch]` and its HTS layer is centred in
/// that interval. The tape width runs along `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackPlacement {
    pub x_min: f64,
    pub y_min: f64,
    pub turns: usize,
    pub pitch: f64,
    pub tape_width: f64,
    #[serde(default = "default_hts_thickness")]
    pub hts_thickness: f64,
    /// +1 or -1: direction of the imposed current.
    #[serde(default = "default_polarity")]
    pub polarity: f64,
}

fn default_hts_thickness() -> f64 {
    1e-6
}

fn default_polarity() -> f64 {
    1.0
}

impl StackPlacement {
    pub fn thickness(&self) -> f64 {
        self.turns as f64 * self.pitch
    }
}

/// Symmetry planes of the cross-section.
///
/// `reflect_x`: the plane `x = 0` separates the two legs of a racetrack
/// (mirror current of opposite sign); only `x >= 0` is meshed.
/// `reflect_y`: the plane `y = 0` bisects the tape width; only `y >= 0` is
/// meshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Symmetry {
    pub reflect_x: bool,
    pub reflect_y: bool,
}

impl Default for Symmetry {
    fn default() -> Self {
        Self {
            reflect_x: true,
            reflect_y: true,
        }
    }
}

impl Symmetry {
    /// Ratio of the full cross-section to the meshed part.
    pub fn factor(&self) -> f64 {
        let mut f = 1.0;
        if self.reflect_x {
            f *= 2.0;
        }
        if self.reflect_y {
            f *= 2.0;
        }
        f
    }
}

/// Target element sizes and ring/shell resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshSizes {
    /// Element size across a homogenized stack (stacking direction).
    pub conductor_x: f64,
    /// Element size along the tape width, shared by both mesh modes.
    pub conductor_y: f64,
    /// Elements across one resolved HTS layer.
    pub layer_elements: usize,
    /// Elements across the non-superconducting gap between resolved layers.
    pub gap_elements: usize,
    /// Largest element size inside the box.
    pub air: f64,
    /// Geometric growth ratio of graded air intervals.
    pub grading: f64,
    /// Air margin between the stacks and the box edge.
    pub box_margin: f64,
    pub ring_layers: usize,
    pub shell_layers: usize,
    /// Segments along the meshed arc of the air/shell interface circle.
    pub arc_segments: usize,
}

impl Default for MeshSizes {
    fn default() -> Self {
        Self {
            conductor_x: 0.4e-3,
            conductor_y: 0.3e-3,
            layer_elements: 1,
            gap_elements: 1,
            air: 2e-3,
            grading: 1.5,
            box_margin: 3e-3,
            ring_layers: 6,
            shell_layers: 4,
            arc_segments: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub stacks: Vec<StackPlacement>,
    /// Radius of the air disk (inner radius of the shell).
    pub air_radius: f64,
    /// Outer radius of the shell; mapped to infinity.
    pub shell_radius: f64,
    #[serde(default)]
    pub symmetry: Symmetry,
    #[serde(default)]
    pub sizes: MeshSizes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshMode {
    Homogenized,
    Resolved,
}

/// A stack after clipping to the meshed part of the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshedStack {
    /// Index into [`GeometrySpec::stacks`].
    pub index: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub turns: usize,
    pub pitch: f64,
    pub hts_thickness: f64,
    /// Meshed share of the tape width (1 or 1/2).
    pub width_fraction: f64,
    pub polarity: f64,
}

impl MeshedStack {
    pub fn width(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// `x` extent of HTS layer `i`.
    pub fn layer_bounds(&self, i: usize) -> (f64, f64) {
        let c = self.x_min + (i as f64 + 0.5) * self.pitch;
        (c - 0.5 * self.hts_thickness, c + 0.5 * self.hts_thickness)
    }

    fn contains(&self, p: Point2) -> bool {
        p.x > self.x_min && p.x < self.x_max && p.y > self.y_min && p.y < self.y_max
    }
}

impl GeometrySpec {
    /// One racetrack leg of `turns` tapes at distance `inner_x` from the
    /// mirror plane, centred on `y = 0`.
    pub fn single_racetrack(turns: usize, pitch: f64, tape_width: f64, inner_x: f64) -> Self {
        Self::stacked_racetracks(1, turns, pitch, tape_width, inner_x, 0.0)
    }

    /// `count` identical racetracks stacked axially (along the tape width,
    /// `y`) with `gap` between neighbours, centred on `y = 0`.
    pub fn stacked_racetracks(
        count: usize,
        turns: usize,
        pitch: f64,
        tape_width: f64,
        inner_x: f64,
        gap: f64,
    ) -> Self {
        let thickness = turns as f64 * pitch;
        let height = count as f64 * tape_width + count.saturating_sub(1) as f64 * gap;
        let stacks = (0..count)
            .map(|k| StackPlacement {
                x_min: inner_x,
                y_min: -0.5 * height + k as f64 * (tape_width + gap),
                turns,
                pitch,
                tape_width,
                hts_thickness: default_hts_thickness(),
                polarity: 1.0,
            })
            .collect::<Vec<_>>();
        let corner = (inner_x + thickness + 3e-3).hypot(0.5 * height + 3e-3);
        let air_radius = (1.5 * corner).max(20e-3);
        Self {
            stacks,
            air_radius,
            shell_radius: 1.5 * air_radius,
            symmetry: Symmetry::default(),
            sizes: MeshSizes::default(),
        }
    }

    /// Extent of all stacks along the stacking direction.
    pub fn stacking_extent(&self) -> f64 {
        let lo = self.stacks.iter().map(|s| s.x_min).fold(f64::INFINITY, f64::min);
        let hi = self
            .stacks
            .iter()
            .map(|s| s.x_min + s.thickness())
            .fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }

    /// Stacks clipped to the meshed half/quarter domain.
    pub fn meshed_stacks(&self) -> Result<Vec<MeshedStack>, GeometryError> {
        let tol = 1e-12 * self.air_radius.abs().max(1e-3);
        let mut out = Vec::new();
        for (index, s) in self.stacks.iter().enumerate() {
            if s.turns == 0 {
                return Err(invalid(format!("stack {index}: turn count must be >= 1")));
            }
            if !(s.pitch > 0.0 && s.tape_width > 0.0) {
                return Err(invalid(format!("stack {index}: pitch and tape width must be > 0")));
            }
            if !(s.hts_thickness > 0.0 && s.hts_thickness <= s.pitch) {
                return Err(invalid(format!(
                    "stack {index}: HTS thickness must lie in (0, pitch]"
                )));
            }
            if s.polarity.abs() != 1.0 {
                return Err(invalid(format!("stack {index}: polarity must be +1 or -1")));
            }
            let (x_min, x_max) = (s.x_min, s.x_min + s.thickness());
            let (mut y_min, y_max) = (s.y_min, s.y_min + s.tape_width);
            let mut width_fraction = 1.0;
            if self.symmetry.reflect_x {
                if x_max <= tol {
                    continue;
                }
                if x_min < -tol {
                    return Err(invalid(format!(
                        "stack {index} straddles the x = 0 mirror plane"
                    )));
                }
            }
            if self.symmetry.reflect_y {
                if y_max <= tol {
                    continue;
                }
                if y_min < -tol {
                    if (y_min + y_max).abs() > tol {
                        return Err(invalid(format!(
                            "stack {index} crosses y = 0 without being symmetric about it"
                        )));
                    }
                    y_min = 0.0;
                    width_fraction = 0.5;
                }
            }
            out.push(MeshedStack {
                index,
                x_min,
                x_max,
                y_min,
                y_max,
                turns: s.turns,
                pitch: s.pitch,
                hts_thickness: s.hts_thickness,
                width_fraction,
                polarity: s.polarity,
            });
        }
        if out.is_empty() {
            return Err(invalid("no stack inside the meshed domain".into()));
        }
        for i in 0..out.len() {
            for j in i + 1..out.len() {
                let (a, b) = (&out[i], &out[j]);
                let ox = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
                let oy = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
                if ox > tol && oy > tol {
                    return Err(GeometryError::Overlap(a.index, b.index));
                }
            }
        }
        Ok(out)
    }

    /// Radius of the smallest origin-centred circle enclosing every stack.
    pub fn enclosing_radius(&self) -> f64 {
        self.stacks
            .iter()
            .flat_map(|s| {
                let xs = [s.x_min, s.x_min + s.thickness()];
                let ys = [s.y_min, s.y_min + s.tape_width];
                xs.into_iter().flat_map(move |x| ys.map(|y| x.hypot(y)))
            })
            .fold(0.0, f64::max)
    }

    fn check(&self) -> Result<(), GeometryError> {
        let z = &self.sizes;
        let sizes = [z.conductor_x, z.conductor_y, z.air, z.box_margin];
        if sizes.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(invalid("element sizes and box margin must be > 0".into()));
        }
        if z.layer_elements == 0 || z.gap_elements == 0 || z.ring_layers == 0 || z.shell_layers == 0
        {
            return Err(invalid("element counts must be >= 1".into()));
        }
        if z.arc_segments < 4 {
            return Err(invalid("arc_segments must be >= 4".into()));
        }
        if !(z.grading >= 1.0) {
            return Err(invalid("grading ratio must be >= 1".into()));
        }
        if !(self.shell_radius > self.air_radius && self.air_radius > self.enclosing_radius()) {
            return Err(invalid(format!(
                "radii must satisfy shell ({}) > air ({}) > stack enclosing radius ({})",
                self.shell_radius,
                self.air_radius,
                self.enclosing_radius()
            )));
        }
        Ok(())
    }
}

fn invalid(msg: String) -> GeometryError {
    GeometryError::Invalid(msg)
}

/// Builds the tagged mesh for `spec` in the requested mode.
pub fn generate_coil_mesh(spec: &GeometrySpec, mode: MeshMode) -> Result<Mesh, GeometryError> {
    spec.check()?;
    let stacks = spec.meshed_stacks()?;
    let sym = spec.symmetry;
    let z = &spec.sizes;

    // Box around the stacks, containing the origin.
    let m = z.box_margin;
    let mut bx0 = stacks.iter().map(|s| s.x_min).fold(f64::INFINITY, f64::min) - m;
    let mut bx1 = stacks.iter().map(|s| s.x_max).fold(f64::NEG_INFINITY, f64::max) + m;
    let mut by0 = stacks.iter().map(|s| s.y_min).fold(f64::INFINITY, f64::min) - m;
    let mut by1 = stacks.iter().map(|s| s.y_max).fold(f64::NEG_INFINITY, f64::max) + m;
    bx0 = if sym.reflect_x { 0.0 } else { bx0.min(-m) };
    by0 = if sym.reflect_y { 0.0 } else { by0.min(-m) };
    bx1 = bx1.max(m);
    by1 = by1.max(m);
    let corner = [bx0.hypot(by0), bx0.hypot(by1), bx1.hypot(by0), bx1.hypot(by1)]
        .into_iter()
        .fold(0.0, f64::max);
    if spec.air_radius < 1.02 * corner {
        return Err(invalid(format!(
            "air radius {} too small for the meshed box (corner radius {corner}); \
             increase air_radius or reduce box_margin",
            spec.air_radius
        )));
    }

    let xs = axis_lines(
        bx0,
        bx1,
        &x_intervals(&stacks, mode, z),
        z,
    );
    let ys = axis_lines(
        by0,
        by1,
        &stacks
            .iter()
            .map(|s| (s.y_min, s.y_max, z.conductor_y))
            .collect::<Vec<_>>(),
        z,
    );

    let mut b = Builder::new(&stacks, mode);
    let nx = xs.len();
    let ny = ys.len();
    let grid = |i: usize, j: usize| j * nx + i;
    for &y in &ys {
        for &x in &xs {
            b.nodes.push(Point2::new(x, y));
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let c = Point2::new(0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1]));
            let region = b.box_region(c);
            let (n00, n10, n11, n01) = (grid(i, j), grid(i + 1, j), grid(i + 1, j + 1), grid(i, j + 1));
            b.push(n00, n10, n11, region);
            b.push(n00, n11, n01, region);
        }
    }

    // Outer boundary of the box, counter-clockwise by polar angle.
    let (theta0, theta1, closed) = match (sym.reflect_x, sym.reflect_y) {
        (true, true) => (0.0, FRAC_PI_2, false),
        (true, false) => (-FRAC_PI_2, FRAC_PI_2, false),
        (false, true) => (0.0, PI, false),
        (false, false) => (0.0, 2.0 * PI, true),
    };
    let mut walk: Vec<(usize, usize)> = Vec::new();
    let right = |walk: &mut Vec<(usize, usize)>, from: usize, to: usize| {
        walk.extend((from..=to).map(|j| (nx - 1, j)))
    };
    let top = |walk: &mut Vec<(usize, usize)>| walk.extend((0..nx - 1).rev().map(|i| (i, ny - 1)));
    match (sym.reflect_x, sym.reflect_y) {
        (true, true) => {
            right(&mut walk, 0, ny - 1);
            top(&mut walk);
        }
        (true, false) => {
            walk.extend((0..nx).map(|i| (i, 0)));
            right(&mut walk, 1, ny - 1);
            top(&mut walk);
        }
        (false, true) => {
            right(&mut walk, 0, ny - 1);
            top(&mut walk);
            walk.extend((0..ny - 1).rev().map(|j| (0, j)));
        }
        (false, false) => {
            let j0 = ys
                .iter()
                .position(|&y| y == 0.0)
                .ok_or_else(|| invalid("full-domain grid lacks a y = 0 line".into()))?;
            right(&mut walk, j0, ny - 1);
            top(&mut walk);
            walk.extend((0..ny - 1).rev().map(|j| (0, j)));
            walk.extend((1..nx).map(|i| (i, 0)));
            right(&mut walk, 1, j0);
        }
    }
    let inner: Vec<usize> = walk.iter().map(|&(i, j)| grid(i, j)).collect();
    let mut inner_angles = Vec::with_capacity(inner.len());
    let mut prev = theta0;
    for (k, &n) in inner.iter().enumerate() {
        let p = b.nodes[n];
        let mut a = p.y.atan2(p.x);
        if k == 0 {
            a = theta0;
        } else {
            while a < prev - 1e-12 {
                a += 2.0 * PI;
            }
        }
        if k == inner.len() - 1 {
            a = theta1;
        }
        inner_angles.push(a);
        prev = a;
    }

    // Uniform-angle layers: ring (graded from the box to the air circle),
    // then the shell.
    let segs = z.arc_segments;
    let mut angles: Vec<f64> = (0..=segs)
        .map(|k| theta0 + (theta1 - theta0) * k as f64 / segs as f64)
        .collect();
    // Box corners become ring nodes too, so the zipper below never pairs a
    // node beyond one box edge with a segment of the neighbouring edge.
    for (w, &(i, j)) in walk.iter().enumerate() {
        let is_corner = (i == 0 || i == nx - 1) && (j == 0 || j == ny - 1);
        if !is_corner || w == 0 || w == walk.len() - 1 {
            continue;
        }
        let a = inner_angles[w];
        let k = (((a - theta0) / (theta1 - theta0) * segs as f64).round() as usize).clamp(1, segs - 1);
        if angles[k - 1] < a && a < angles[k + 1] {
            angles[k] = a;
        } else {
            return Err(invalid(format!(
                "arc_segments = {segs} too coarse to resolve the box corners"
            )));
        }
    }
    let ratio: f64 = 1.25;
    let k_ring = z.ring_layers;
    let ring_s = |l: usize| (ratio.powi(l as i32) - 1.0) / (ratio.powi(k_ring as i32) - 1.0);
    let n_layers = k_ring + z.shell_layers;
    let mut layer_nodes: Vec<Vec<usize>> = Vec::with_capacity(n_layers);
    for l in 1..=n_layers {
        let mut ids = Vec::with_capacity(segs + 1);
        for (k, &a) in angles.iter().enumerate() {
            if closed && k == segs {
                ids.push(ids[0]);
                continue;
            }
            let (c, s) = unit(a);
            let r = if l <= k_ring {
                let rb = ray_box(c, s, bx0, bx1, by0, by1);
                rb + ring_s(l) * (spec.air_radius - rb)
            } else {
                let f = (l - k_ring) as f64 / z.shell_layers as f64;
                spec.air_radius + f * (spec.shell_radius - spec.air_radius)
            };
            ids.push(b.nodes.len());
            b.nodes.push(Point2::new(r * c, r * s));
        }
        layer_nodes.push(ids);
    }

    // Zip the box boundary to the first uniform layer.
    let air = 0;
    let (mut i, mut j) = (0, 0);
    let (pi, pj) = (inner.len() - 1, segs);
    while i < pi || j < pj {
        let advance_outer = if i == pi {
            true
        } else if j == pj {
            false
        } else {
            angles[j + 1] < inner_angles[i + 1]
        };
        if advance_outer {
            b.push(inner[i], layer_nodes[0][j], layer_nodes[0][j + 1], air);
            j += 1;
        } else {
            b.push(inner[i], layer_nodes[0][j], inner[i + 1], air);
            i += 1;
        }
    }
    for l in 1..n_layers {
        let region = if l < k_ring { air } else { 1 };
        for k in 0..segs {
            let (p00, p10) = (layer_nodes[l - 1][k], layer_nodes[l - 1][k + 1]);
            let (p01, p11) = (layer_nodes[l][k], layer_nodes[l][k + 1]);
            b.push(p00, p01, p11, region);
            b.push(p00, p11, p10, region);
        }
    }

    let mesh = b.finish(spec, corner)?;
    let diags = validate_mesh(&mesh);
    if let Some(d) = diags.first() {
        return Err(GeometryError::Validation(format!(
            "{} diagnostics, first: {d}",
            diags.len()
        )));
    }
    Ok(mesh)
}

/// Fixed-size intervals along `x`: `(lo, hi, element size)`.
fn x_intervals(stacks: &[MeshedStack], mode: MeshMode, z: &MeshSizes) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for s in stacks {
        match mode {
            MeshMode::Homogenized => out.push((s.x_min, s.x_max, z.conductor_x)),
            MeshMode::Resolved => {
                let gap = s.pitch - s.hts_thickness;
                let h_gap = gap / z.gap_elements as f64;
                let h_layer = s.hts_thickness / z.layer_elements as f64;
                let mut prev = s.x_min;
                for i in 0..s.turns {
                    let (lo, hi) = s.layer_bounds(i);
                    if lo > prev {
                        out.push((prev, lo, h_gap));
                    }
                    out.push((lo, hi, h_layer));
                    prev = hi;
                }
                if s.x_max > prev {
                    out.push((prev, s.x_max, h_gap));
                }
            }
        }
    }
    out
}

/// Grid coordinates on `[lo, hi]` honouring fixed-size intervals and grading
/// the air in between.
fn axis_lines(lo: f64, hi: f64, fixed: &[(f64, f64, f64)], z: &MeshSizes) -> Vec<f64> {
    let mut pts: Vec<f64> = vec![lo, hi, 0.0];
    for &(a, b, _) in fixed {
        pts.push(a);
        pts.push(b);
    }
    pts.retain(|p| *p >= lo && *p <= hi);
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * (hi - lo));

    let sizes: Vec<Option<f64>> = pts
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            fixed
                .iter()
                .filter(|(a, b, _)| mid > *a && mid < *b)
                .map(|f| f.2)
                .reduce(f64::min)
        })
        .collect();

    let mut out = vec![pts[0]];
    for (k, w) in pts.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        match sizes[k] {
            Some(h) => {
                let n = ((b - a) / h - 1e-9).ceil().max(1.0) as usize;
                for i in 1..n {
                    out.push(a + (b - a) * i as f64 / n as f64);
                }
            }
            None => {
                let near = |s: Option<&Option<f64>>| match s {
                    Some(Some(h)) => h.min(z.air),
                    _ => z.air,
                };
                let h_l = if k == 0 { z.air } else { near(sizes.get(k - 1)) };
                let h_r = near(sizes.get(k + 1));
                out.extend(graded(a, b, h_l, h_r, z.air, z.grading));
            }
        }
        out.push(b);
    }
    out
}

/// Interior points of `[a, b]` growing geometrically from both ends.
fn graded(a: f64, b: f64, h_l: f64, h_r: f64, h_max: f64, ratio: f64) -> Vec<f64> {
    let (mut pa, mut pb) = (a, b);
    let (mut sl, mut sr) = (h_l, h_r);
    let mut left = Vec::new();
    let mut right = Vec::new();
    loop {
        let step = sl.min(sr);
        if pb - pa <= 1.5 * step {
            break;
        }
        if sl <= sr {
            pa += sl;
            left.push(pa);
            sl = (sl * ratio).min(h_max);
        } else {
            pb -= sr;
            right.push(pb);
            sr = (sr * ratio).min(h_max);
        }
    }
    left.extend(right.into_iter().rev());
    left
}

/// Distance from the origin to the box boundary along direction `(c, s)`.
fn ray_box(c: f64, s: f64, bx0: f64, bx1: f64, by0: f64, by1: f64) -> f64 {
    let mut t = f64::INFINITY;
    if c > 1e-15 {
        t = t.min(bx1 / c);
    } else if c < -1e-15 {
        t = t.min(bx0 / c);
    }
    if s > 1e-15 {
        t = t.min(by1 / s);
    } else if s < -1e-15 {
        t = t.min(by0 / s);
    }
    t
}

/// `(cos, sin)` with exact values on the coordinate axes.
fn unit(a: f64) -> (f64, f64) {
    let q = a / FRAC_PI_2;
    if (q - q.round()).abs() < 1e-12 {
        match (q.round() as i64).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        (a.cos(), a.sin())
    }
}

struct Builder<'a> {
    stacks: &'a [MeshedStack],
    mode: MeshMode,
    nodes: Vec<Point2>,
    triangles: Vec<[usize; 3]>,
    triangle_region: Vec<usize>,
    regions: Vec<Region>,
}

impl<'a> Builder<'a> {
    fn new(stacks: &'a [MeshedStack], mode: MeshMode) -> Self {
        let mut regions = vec![Region::new("air"), Region::new("shell")];
        for s in stacks {
            match mode {
                MeshMode::Homogenized => {
                    regions.push(Region::new(RegionRole::Conductor(s.index).name()))
                }
                MeshMode::Resolved => regions.extend((0..s.turns).map(|layer| {
                    Region::new(
                        RegionRole::Layer {
                            stack: s.index,
                            layer,
                        }
                        .name(),
                    )
                })),
            }
        }
        Self {
            stacks,
            mode,
            nodes: Vec::new(),
            triangles: Vec::new(),
            triangle_region: Vec::new(),
            regions,
        }
    }

    fn box_region(&self, c: Point2) -> usize {
        let mut base = 2;
        for s in self.stacks {
            let count = match self.mode {
                MeshMode::Homogenized => 1,
                MeshMode::Resolved => s.turns,
            };
            if s.contains(c) {
                match self.mode {
                    MeshMode::Homogenized => return base,
                    MeshMode::Resolved => {
                        let i = (((c.x - s.x_min) / s.pitch).floor() as usize).min(s.turns - 1);
                        let (lo, hi) = s.layer_bounds(i);
                        if c.x > lo && c.x < hi {
                            return base + i;
                        }
                        return 0;
                    }
                }
            }
            base += count;
        }
        0
    }

    fn push(&mut self, a: usize, b: usize, c: usize, region: usize) {
        self.triangles.push([a, b, c]);
        self.triangle_region.push(region);
    }

    fn finish(self, spec: &GeometrySpec, box_corner: f64) -> Result<Mesh, GeometryError> {
        let mut mesh = Mesh {
            nodes: self.nodes,
            triangles: self.triangles,
            triangle_region: self.triangle_region,
            boundary_edges: Vec::new(),
            regions: self.regions,
            boundaries: Vec::new(),
        };
        let sym = spec.symmetry;
        let mut names = vec![BOUNDARY_OUTER.to_string()];
        if sym.reflect_x {
            names.push(BOUNDARY_SYM_X.into());
        }
        if sym.reflect_y {
            names.push(BOUNDARY_SYM_Y.into());
        }
        let tag = |name: &str| names.iter().position(|n| n == name).unwrap();
        let tol = 1e-9 * box_corner;
        let table = mesh.edge_table();
        let mut edges = Vec::new();
        for (e, tris) in table.edge_triangles.iter().enumerate() {
            if tris.len() != 1 {
                continue;
            }
            // orient along the owning triangle
            let t = mesh.triangles[tris[0]];
            let k = (0..3).find(|&k| table.triangle_edges[tris[0]][k] == e).unwrap();
            let nodes = [t[k], t[(k + 1) % 3]];
            let (p, q) = (mesh.nodes[nodes[0]], mesh.nodes[nodes[1]]);
            let t = if sym.reflect_x && p.x.abs() <= tol && q.x.abs() <= tol {
                tag(BOUNDARY_SYM_X)
            } else if sym.reflect_y && p.y.abs() <= tol && q.y.abs() <= tol {
                tag(BOUNDARY_SYM_Y)
            } else if (p.norm() - spec.shell_radius).abs() <= 1e-9 * spec.shell_radius
                && (q.norm() - spec.shell_radius).abs() <= 1e-9 * spec.shell_radius
            {
                tag(BOUNDARY_OUTER)
            } else {
                return Err(GeometryError::Validation(format!(
                    "unexpected boundary edge {:?}-{:?}",
                    p, q
                )));
            };
            edges.push(BoundaryEdge { nodes, tag: t });
        }
        mesh.boundary_edges = edges;
        mesh.boundaries = names;
        Ok(mesh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1(turns: usize) -> GeometrySpec {
        GeometrySpec::single_racetrack(turns, 100e-6, 12e-3, 5e-3)
    }

    #[test]
    fn homogenized_region_is_stack_rectangle() {
        let mut g = table1(20);
        g.symmetry.reflect_y = false;
        let m = generate_coil_mesh(&g, MeshMode::Homogenized).unwrap();
        let r = m.region_index("conductor_0").unwrap();
        let area = m.region_area(r);
        let expected = 20.0 * 100e-6 * 12e-3;
        assert!((area - expected).abs() <= 1e-12 * expected, "{area} vs {expected}");
        let conductors = m.regions_with_role(|r| r.is_conducting());
        assert_eq!(conductors.len(), 1);
    }

    #[test]
    fn quarter_domain_halves_the_stack() {
        let g = table1(20);
        let stacks = g.meshed_stacks().unwrap();
        assert_eq!(stacks[0].width_fraction, 0.5);
        assert!((stacks[0].width() - 6e-3).abs() < 1e-15);
        let m = generate_coil_mesh(&g, MeshMode::Homogenized).unwrap();
        let r = m.region_index("conductor_0").unwrap();
        let area = m.region_area(r);
        assert!((area - 2e-3 * 6e-3).abs() <= 1e-12 * area);
        assert!(m.boundary_index(BOUNDARY_SYM_X).is_some());
        assert!(m.boundary_index(BOUNDARY_SYM_Y).is_some());
    }

    #[test]
    fn single_resolved_layer() {
        let mut g = table1(1);
        g.symmetry.reflect_y = false;
        let m = generate_coil_mesh(&g, MeshMode::Resolved).unwrap();
        let layers = m.regions_with_role(|r| matches!(r, RegionRole::Layer { .. }));
        assert_eq!(layers.len(), 1);
        let area = m.region_area(layers[0]);
        assert!((area - 1e-6 * 12e-3).abs() <= 1e-9 * area);
        assert!(validate_mesh(&m).is_empty());
    }

    #[test]
    fn resolved_layers_have_hts_area() {
        let g = table1(20);
        let m = generate_coil_mesh(&g, MeshMode::Resolved).unwrap();
        let layers = m.regions_with_role(|r| matches!(r, RegionRole::Layer { .. }));
        assert_eq!(layers.len(), 20);
        for r in layers {
            let a = m.region_area(r);
            assert!((a - 1e-6 * 6e-3).abs() <= 1e-9 * a);
        }
    }

    #[test]
    fn five_coil_stack_layout() {
        let g = GeometrySpec::stacked_racetracks(5, 50, 100e-6, 12e-3, 5e-3, 5e-3);
        assert!((g.stacking_extent() - 5e-3).abs() < 1e-12);
        let top = g.stacks.iter().map(|s| s.y_min + s.tape_width).fold(f64::MIN, f64::max);
        assert!((top - 40e-3).abs() < 1e-12);
        // the middle coil is cut by y = 0, the lower two are mirror images
        let meshed = g.meshed_stacks().unwrap();
        assert_eq!(meshed.len(), 3);
        assert_eq!(meshed.iter().filter(|s| s.width_fraction == 0.5).count(), 1);
        let m = generate_coil_mesh(&g, MeshMode::Homogenized).unwrap();
        assert_eq!(m.regions_with_role(|r| r.is_conducting()).len(), 3);
    }

    #[test]
    fn all_symmetry_variants_validate() {
        for (rx, ry) in [(true, true), (true, false), (false, true), (false, false)] {
            let mut g = table1(4);
            g.symmetry = Symmetry {
                reflect_x: rx,
                reflect_y: ry,
            };
            if !rx {
                // add the mirror leg explicitly
                let mut mirror = g.stacks[0].clone();
                mirror.x_min = -mirror.x_min - mirror.thickness();
                mirror.polarity = -1.0;
                g.stacks.push(mirror);
            }
            for mode in [MeshMode::Homogenized, MeshMode::Resolved] {
                let m = generate_coil_mesh(&g, mode)
                    .unwrap_or_else(|e| panic!("{rx} {ry} {mode:?}: {e}"));
                assert!(validate_mesh(&m).is_empty());
            }
        }
    }

    #[test]
    fn rejects_degenerate_geometry() {
        let mut g = table1(20);
        g.stacks[0].tape_width = 0.0;
        assert!(generate_coil_mesh(&g, MeshMode::Homogenized).is_err());

        let mut g = table1(20);
        let mut other = g.stacks[0].clone();
        other.x_min += 1e-3;
        g.stacks.push(other);
        assert!(matches!(
            generate_coil_mesh(&g, MeshMode::Homogenized),
            Err(GeometryError::Overlap(0, 1))
        ));

        let mut g = table1(20);
        g.air_radius = 1e-3;
        assert!(generate_coil_mesh(&g, MeshMode::Homogenized).is_err());
    }

    #[test]
    fn refinement_quadruples_conductor_triangles() {
        let g = table1(20);
        let count = |g: &GeometrySpec| {
            let m = generate_coil_mesh(g, MeshMode::Homogenized).unwrap();
            let r = m.region_index("conductor_0").unwrap();
            m.triangle_region.iter().filter(|&&x| x == r).count()
        };
        let mut fine = g.clone();
        fine.sizes.conductor_x /= 2.0;
        fine.sizes.conductor_y /= 2.0;
        assert!(count(&fine) >= 4 * count(&g));
    }

    #[test]
    fn graded_points_are_monotone() {
        let p = graded(0.0, 1.0, 0.01, 0.05, 0.2, 1.5);
        let mut all = vec![0.0];
        all.extend(p);
        all.push(1.0);
        for w in all.windows(2) {
            assert!(w[1] > w[0]);
            assert!(w[1] - w[0] <= 0.2 * 1.5 + 1e-12);
        }
    }
}
