//! ASCII MSH 4.1 reader and writer.
//!
//! Only what a 2D triangle mesh needs is supported: points (ignored), 2-node
//! lines on physical curves (boundary edges) and 3-node triangles on
//! physical surfaces (regions).

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::{BoundaryEdge, Mesh, Point2, Region};

#[derive(Debug, Error, PartialEq)]
#[error("msh line {line}: {msg}")]
pub struct MshError {
    pub line: usize,
    pub msg: String,
}

fn err<T>(line: usize, msg: impl Into<String>) -> Result<T, MshError> {
    Err(MshError {
        line,
        msg: msg.into(),
    })
}

struct Cursor<'a> {
    lines: Vec<&'a str>,
    /// Index of the next unread line.
    next: usize,
    /// Remaining tokens of the current line and its 1-based number.
    pending: std::vec::IntoIter<&'a str>,
    line_no: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().collect(),
            next: 0,
            pending: Vec::new().into_iter(),
            line_no: 0,
        }
    }

    /// Next non-empty line (discarding unread tokens of the current one).
    fn line(&mut self) -> Option<(usize, &'a str)> {
        self.pending = Vec::new().into_iter();
        while self.next < self.lines.len() {
            let l = self.lines[self.next].trim();
            self.next += 1;
            self.line_no = self.next;
            if !l.is_empty() {
                return Some((self.line_no, l));
            }
        }
        None
    }

    fn token(&mut self) -> Result<&'a str, MshError> {
        loop {
            if let Some(t) = self.pending.next() {
                return Ok(t);
            }
            match self.line() {
                Some((_, l)) => {
                    self.pending = l.split_whitespace().collect::<Vec<_>>().into_iter();
                }
                None => return err(self.line_no, "unexpected end of file"),
            }
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, MshError> {
        let t = self.token()?;
        t.parse()
            .or_else(|_| err(self.line_no, format!("invalid {what} '{t}'")))
    }

    fn expect(&mut self, marker: &str) -> Result<(), MshError> {
        match self.line() {
            Some((_, l)) if l == marker => Ok(()),
            Some((n, l)) => err(n, format!("expected {marker}, found '{l}'")),
            None => err(self.line_no, format!("expected {marker}, found end of file")),
        }
    }
}

#[derive(Default)]
struct Entity {
    physical: Vec<i64>,
}

/// Parses an ASCII MSH 4.1 file into a [`Mesh`].
pub fn read_msh_ascii(text: &str) -> Result<Mesh, MshError> {
    let mut c = Cursor::new(text);
    let mut version_seen = false;
    // (dim, tag) -> name, keeping file order for dim 2 and dim 1
    let mut names: HashMap<(usize, i64), String> = HashMap::new();
    let mut order: Vec<(usize, i64)> = Vec::new();
    let mut entities: HashMap<(usize, i64), Entity> = HashMap::new();
    let mut node_index: HashMap<u64, usize> = HashMap::new();
    let mut nodes: Vec<Point2> = Vec::new();
    let mut mesh = Mesh::default();
    let mut region_of: HashMap<i64, usize> = HashMap::new();
    let mut boundary_of: HashMap<i64, usize> = HashMap::new();
    let mut elements_seen = false;

    while let Some((line, header)) = c.line() {
        match header {
            "$MeshFormat" => {
                let v: String = c.token()?.to_string();
                if v != "4.1" {
                    return err(c.line_no, format!("unsupported MSH version {v} (need 4.1)"));
                }
                let file_type: i32 = c.parse("file type")?;
                if file_type != 0 {
                    return err(c.line_no, "binary MSH files are not supported");
                }
                c.expect("$EndMeshFormat")?;
                version_seen = true;
            }
            _ if !version_seen => return err(line, "missing $MeshFormat section"),
            "$PhysicalNames" => {
                let n: usize = c.parse("physical name count")?;
                for _ in 0..n {
                    let (ln, l) = c.line().ok_or(MshError {
                        line: c.line_no,
                        msg: "unexpected end of file".into(),
                    })?;
                    let mut it = l.splitn(3, char::is_whitespace);
                    let dim = it.next().and_then(|s| s.parse::<usize>().ok());
                    let tag = it.next().and_then(|s| s.parse::<i64>().ok());
                    let name = it.next().map(|s| s.trim().trim_matches('"').to_string());
                    match (dim, tag, name) {
                        (Some(d), Some(t), Some(nm)) => {
                            names.insert((d, t), nm);
                            order.push((d, t));
                        }
                        _ => return err(ln, "malformed physical name entry"),
                    }
                }
                c.expect("$EndPhysicalNames")?;
            }
            "$Entities" => {
                let counts: Vec<usize> = (0..4)
                    .map(|_| c.parse("entity count"))
                    .collect::<Result<_, _>>()?;
                for (dim, &count) in counts.iter().enumerate() {
                    for _ in 0..count {
                        let tag: i64 = c.parse("entity tag")?;
                        let n_coords = if dim == 0 { 3 } else { 6 };
                        for _ in 0..n_coords {
                            c.parse::<f64>("coordinate")?;
                        }
                        let np: usize = c.parse("physical tag count")?;
                        let physical = (0..np)
                            .map(|_| c.parse::<i64>("physical tag"))
                            .collect::<Result<Vec<_>, _>>()?;
                        if dim > 0 {
                            let nb: usize = c.parse("bounding entity count")?;
                            for _ in 0..nb {
                                c.parse::<i64>("bounding entity")?;
                            }
                        }
                        entities.insert((dim, tag), Entity { physical });
                    }
                }
                c.expect("$EndEntities")?;
            }
            "$Nodes" => {
                let blocks: usize = c.parse("node block count")?;
                let total: usize = c.parse("node count")?;
                c.parse::<u64>("min node tag")?;
                c.parse::<u64>("max node tag")?;
                nodes.reserve(total);
                for _ in 0..blocks {
                    c.parse::<usize>("entity dimension")?;
                    c.parse::<i64>("entity tag")?;
                    let parametric: i32 = c.parse("parametric flag")?;
                    if parametric != 0 {
                        return err(c.line_no, "parametric nodes are not supported");
                    }
                    let n: usize = c.parse("block node count")?;
                    let tags = (0..n)
                        .map(|_| c.parse::<u64>("node tag"))
                        .collect::<Result<Vec<_>, _>>()?;
                    for tag in tags {
                        let x: f64 = c.parse("x coordinate")?;
                        let y: f64 = c.parse("y coordinate")?;
                        let z: f64 = c.parse("z coordinate")?;
                        if z != 0.0 {
                            return err(c.line_no, "non-planar node (z != 0)");
                        }
                        if node_index.insert(tag, nodes.len()).is_some() {
                            return err(c.line_no, format!("duplicate node tag {tag}"));
                        }
                        nodes.push(Point2::new(x, y));
                    }
                }
                c.expect("$EndNodes")?;
            }
            "$Elements" => {
                let blocks: usize = c.parse("element block count")?;
                c.parse::<usize>("element count")?;
                c.parse::<u64>("min element tag")?;
                c.parse::<u64>("max element tag")?;
                for _ in 0..blocks {
                    let dim: usize = c.parse("entity dimension")?;
                    let etag: i64 = c.parse("entity tag")?;
                    let ty: u32 = c.parse("element type")?;
                    let block_line = c.line_no;
                    let n: usize = c.parse("block element count")?;
                    let arity = match (dim, ty) {
                        (0, 15) => 1,
                        (1, 1) => 2,
                        (2, 2) => 3,
                        _ => {
                            return err(
                                block_line,
                                format!("unsupported element type {ty} (dimension {dim})"),
                            )
                        }
                    };
                    let physical = entities
                        .get(&(dim, etag))
                        .and_then(|e| e.physical.first().copied());
                    let target = match (dim, physical) {
                        (2, Some(p)) => {
                            let name = names.get(&(2, p)).cloned().unwrap_or_else(|| p.to_string());
                            Some(*region_of.entry(p).or_insert_with(|| {
                                mesh.regions.push(Region::new(name));
                                mesh.regions.len() - 1
                            }))
                        }
                        (2, None) => {
                            return err(
                                block_line,
                                format!("missing physical group for surface entity {etag}"),
                            )
                        }
                        (1, Some(p)) => {
                            let name = names.get(&(1, p)).cloned().unwrap_or_else(|| p.to_string());
                            Some(*boundary_of.entry(p).or_insert_with(|| {
                                mesh.boundaries.push(name);
                                mesh.boundaries.len() - 1
                            }))
                        }
                        _ => None,
                    };
                    for _ in 0..n {
                        c.parse::<u64>("element tag")?;
                        let mut ids = [0usize; 3];
                        for slot in ids.iter_mut().take(arity) {
                            let tag: u64 = c.parse("node tag")?;
                            *slot = *node_index.get(&tag).ok_or(MshError {
                                line: c.line_no,
                                msg: format!("unknown node tag {tag}"),
                            })?;
                        }
                        match (dim, target) {
                            (2, Some(r)) => {
                                mesh.triangles.push(ids);
                                mesh.triangle_region.push(r);
                            }
                            (1, Some(b)) => mesh.boundary_edges.push(BoundaryEdge {
                                nodes: [ids[0], ids[1]],
                                tag: b,
                            }),
                            _ => {}
                        }
                    }
                }
                c.expect("$EndElements")?;
                elements_seen = true;
            }
            other if other.starts_with('$') => {
                // skip unknown sections
                let end = format!("$End{}", &other[1..]);
                loop {
                    match c.line() {
                        Some((_, l)) if l == end => break,
                        Some(_) => {}
                        None => return err(line, format!("unterminated section {other}")),
                    }
                }
            }
            other => return err(line, format!("unexpected content '{other}'")),
        }
    }
    if !version_seen {
        return err(c.line_no, "missing $MeshFormat section");
    }
    if !elements_seen || mesh.triangles.is_empty() {
        return err(c.line_no, "no triangles in physical surfaces");
    }

    // Regions and boundaries in $PhysicalNames order when available.
    let rank = |d: usize, t: i64| order.iter().position(|&k| k == (d, t)).unwrap_or(usize::MAX);
    let mut region_tags: Vec<i64> = region_of.keys().copied().collect();
    region_tags.sort_by_key(|&t| (rank(2, t), t));
    let remap: HashMap<usize, usize> = region_tags
        .iter()
        .enumerate()
        .map(|(new, t)| (region_of[t], new))
        .collect();
    let old_regions = std::mem::take(&mut mesh.regions);
    mesh.regions = region_tags
        .iter()
        .map(|t| old_regions[region_of[t]].clone())
        .collect();
    for r in &mut mesh.triangle_region {
        *r = remap[r];
    }
    let mut boundary_tags: Vec<i64> = boundary_of.keys().copied().collect();
    boundary_tags.sort_by_key(|&t| (rank(1, t), t));
    let bremap: HashMap<usize, usize> = boundary_tags
        .iter()
        .enumerate()
        .map(|(new, t)| (boundary_of[t], new))
        .collect();
    let old_b = std::mem::take(&mut mesh.boundaries);
    mesh.boundaries = boundary_tags
        .iter()
        .map(|t| old_b[boundary_of[t]].clone())
        .collect();
    for e in &mut mesh.boundary_edges {
        e.tag = bremap[&e.tag];
    }
    mesh.nodes = nodes;
    Ok(mesh)
}

/// Serializes a mesh as ASCII MSH 4.1. Region `r` becomes physical surface
/// `r + 1`, boundary tag `b` physical curve `b + 1`; element order is kept.
pub fn write_msh(mesh: &Mesh) -> String {
    let mut s = String::new();
    s.push_str("$MeshFormat\n4.1 0 8\n$EndMeshFormat\n");
    let _ = writeln!(s, "$PhysicalNames\n{}", mesh.regions.len() + mesh.boundaries.len());
    for (b, name) in mesh.boundaries.iter().enumerate() {
        let _ = writeln!(s, "1 {} \"{}\"", b + 1, name);
    }
    for (r, region) in mesh.regions.iter().enumerate() {
        let _ = writeln!(s, "2 {} \"{}\"", r + 1, region.name);
    }
    s.push_str("$EndPhysicalNames\n$Entities\n");
    let _ = writeln!(s, "0 {} {} 0", mesh.boundaries.len(), mesh.regions.len());
    for b in 0..mesh.boundaries.len() {
        let _ = writeln!(s, "{} 0 0 0 0 0 0 1 {} 0", b + 1, b + 1);
    }
    for r in 0..mesh.regions.len() {
        let _ = writeln!(s, "{} 0 0 0 0 0 0 1 {} 0", r + 1, r + 1);
    }
    s.push_str("$EndEntities\n$Nodes\n");
    let n = mesh.nodes.len();
    let _ = writeln!(s, "1 {n} 1 {n}\n2 1 0 {n}");
    for i in 0..n {
        let _ = writeln!(s, "{}", i + 1);
    }
    for p in &mesh.nodes {
        let _ = writeln!(s, "{:e} {:e} 0", p.x, p.y);
    }
    s.push_str("$EndNodes\n");

    // Runs of consecutive elements sharing an entity form one block.
    let mut blocks: Vec<(usize, usize, u32, Vec<Vec<usize>>)> = Vec::new();
    for e in &mesh.boundary_edges {
        match blocks.last_mut() {
            Some((1, tag, _, els)) if *tag == e.tag + 1 => els.push(e.nodes.to_vec()),
            _ => blocks.push((1, e.tag + 1, 1, vec![e.nodes.to_vec()])),
        }
    }
    for (t, &r) in mesh.triangles.iter().zip(&mesh.triangle_region) {
        match blocks.last_mut() {
            Some((2, tag, _, els)) if *tag == r + 1 => els.push(t.to_vec()),
            _ => blocks.push((2, r + 1, 2, vec![t.to_vec()])),
        }
    }
    let total = mesh.boundary_edges.len() + mesh.triangles.len();
    let _ = writeln!(s, "$Elements\n{} {total} 1 {total}", blocks.len());
    let mut tag = 1;
    for (dim, entity, ty, els) in &blocks {
        let _ = writeln!(s, "{dim} {entity} {ty} {}", els.len());
        for el in els {
            let _ = write!(s, "{tag}");
            for v in el {
                let _ = write!(s, " {}", v + 1);
            }
            s.push('\n');
            tag += 1;
        }
    }
    s.push_str("$EndElements\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "$MeshFormat
4.1 0 8
$EndMeshFormat
$PhysicalNames
1
2 7 \"conductor_0\"
$EndPhysicalNames
$Entities
0 0 1 0
1 0 0 0 1 1 0 1 7 0
$EndEntities
$Nodes
1 3 1 3
2 1 0 3
1
2
3
0 0 0
1 0 0
0 1 0
$EndNodes
$Elements
1 1 1 1
2 1 2 1
1 1 2 3
$EndElements
";

    #[test]
    fn minimal_file() {
        let m = read_msh_ascii(MINIMAL).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2]]);
        assert_eq!(m.regions[0].name, "conductor_0");
        assert!(m.regions[0].role.is_conducting());
        assert!(super::super::validate_mesh(&m).iter().all(|d| matches!(
            d.kind,
            super::super::DiagnosticKind::UntaggedBoundaryEdge
        )));
    }

    #[test]
    fn quadrangle_rejected() {
        let text = MINIMAL.replace("2 1 2 1\n1 1 2 3", "2 1 3 1\n1 1 2 3 1");
        let e = read_msh_ascii(&text).unwrap_err();
        assert!(e.msg.contains("unsupported element type"), "{e}");
        assert_eq!(e.line, 24);
    }

    #[test]
    fn version_and_group_errors() {
        let e = read_msh_ascii(&MINIMAL.replace("4.1 0 8", "2.2 0 8")).unwrap_err();
        assert!(e.msg.contains("version"));
        assert_eq!(e.line, 2);
        let e = read_msh_ascii(&MINIMAL.replace("1 0 0 0 1 1 0 1 7 0", "1 0 0 0 1 1 0 0 0"))
            .unwrap_err();
        assert!(e.msg.contains("missing physical group"), "{e}");
        let e = read_msh_ascii(&MINIMAL.replace("0 1 0\n$EndNodes", "0 1 2\n$EndNodes"))
            .unwrap_err();
        assert!(e.msg.contains("non-planar"));
    }
}
