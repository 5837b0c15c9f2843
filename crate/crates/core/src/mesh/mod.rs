//! Meshes, reference elements, quadrature layouts and periodic pairing.
//!
//! A [`Mesh`] is always defined on a fixed (parent) geometry. Parameterized
//! geometries are obtained by morphing, never by remeshing.

mod element;
pub mod generate;
mod periodic;

pub use element::{gauss_legendre_1d, quadrature_for, shape_eval, shape_eval_into, ElemKind, QuadratureRule, ShapeEval};
pub use periodic::{periodic_pairs, DofMap, PeriodicPairing};

use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Boundary tag for nodes on the outer RVE (or structure) boundary.
pub const TAG_OUTER: i64 = 1;
/// Boundary tags `TAG_INTERFACE + k` mark nodes on the k-th interior
/// interface (inclusion or hole boundary).
pub const TAG_INTERFACE: i64 = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub kind: ElemKind,
    pub nodes: Vec<[f64; 2]>,
    conn: Vec<usize>,
    pub regions: Vec<i64>,
    pub boundary: BTreeMap<usize, i64>,
}

impl Mesh {
    /// Builds a mesh and checks all invariants.
    pub fn new(
        kind: ElemKind,
        nodes: Vec<[f64; 2]>,
        elements: Vec<Vec<usize>>,
        regions: Vec<i64>,
        boundary: BTreeMap<usize, i64>,
    ) -> Result<Self> {
        let npe = kind.nodes_per_element();
        let mut conn = Vec::with_capacity(elements.len() * npe);
        for (e, el) in elements.iter().enumerate() {
            if el.len() != npe {
                return Err(Error::Mesh(format!(
                    "element {e} has {} nodes, {kind} requires {npe}",
                    el.len()
                )));
            }
            conn.extend_from_slice(el);
        }
        let mesh = Mesh { kind, nodes, conn, regions, boundary };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.conn.len() / self.kind.nodes_per_element()
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let npe = self.kind.nodes_per_element();
        &self.conn[e * npe..(e + 1) * npe]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.conn.chunks_exact(self.kind.nodes_per_element())
    }

    pub fn nodes_with_tag(&self, tag: i64) -> Vec<usize> {
        self.boundary.iter().filter(|(_, t)| **t == tag).map(|(n, _)| *n).collect()
    }

    /// Checks connectivity range, region coverage and positivity of the
    /// isoparametric Jacobian at every quadrature point.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        let ne = self.num_elements();
        for (e, el) in self.elements().enumerate() {
            if let Some(bad) = el.iter().find(|&&i| i >= n) {
                return Err(Error::Mesh(format!(
                    "connectivity out of range: element {e} references node {bad} but the mesh has {n} nodes"
                )));
            }
        }
        if self.regions.len() != ne {
            return Err(Error::Mesh(format!(
                "region tags cover {} elements, mesh has {ne}",
                self.regions.len()
            )));
        }
        if let Some((&node, _)) = self.boundary.iter().find(|(&i, _)| i >= n) {
            return Err(Error::Mesh(format!("boundary tag references node {node} but the mesh has {n} nodes")));
        }
        for (i, x) in self.nodes.iter().enumerate() {
            if !x[0].is_finite() || !x[1].is_finite() {
                return Err(Error::Mesh(format!("node {i} has non-finite coordinates")));
            }
        }
        let rule = quadrature_for(self.kind);
        let npe = self.kind.nodes_per_element();
        let mut vals = vec![0.0; npe];
        let mut grads = vec![[0.0; 2]; npe];
        for (e, el) in self.elements().enumerate() {
            for (q, p) in rule.points.iter().enumerate() {
                shape_eval_into(self.kind, *p, &mut vals, &mut grads);
                let det = jacobian(&self.nodes, el, &grads).det;
                if !(det > 0.0) {
                    return Err(Error::Mesh(format!(
                        "element {e} has non-positive Jacobian determinant {det:e} at quadrature point {q}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Precomputes parent-domain gradients and weights at every quadrature point.
    pub fn quadrature(&self) -> QuadData {
        QuadData::new(self)
    }

    /// Total area of the meshed domain.
    pub fn area(&self) -> f64 {
        self.quadrature().weights.iter().sum()
    }

    /// Content hash of the canonical text serialization.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mesh2d v1 {}", self.kind);
        let _ = writeln!(s, "nodes {}", self.nodes.len());
        for x in &self.nodes {
            let _ = writeln!(s, "{:?} {:?}", x[0], x[1]);
        }
        let _ = writeln!(s, "elements {}", self.num_elements());
        for el in self.elements() {
            let row: Vec<String> = el.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        let _ = writeln!(s, "regions");
        for r in &self.regions {
            let _ = writeln!(s, "{r}");
        }
        if !self.boundary.is_empty() {
            let _ = writeln!(s, "boundary");
            for (n, t) in &self.boundary {
                let _ = writeln!(s, "{n} {t}");
            }
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_mesh(text)
    }
}

/// Reads and validates a mesh in the `mesh2d v1` text format.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let text = std::fs::read_to_string(path)?;
    parse_mesh(&text)
}

fn parse_mesh(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
        .peekable();
    let err = |line: usize, message: String| Error::Parse { line, message };

    let (ln, header) = lines.next().ok_or_else(|| err(1, "empty mesh file".into()))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 3 || h[0] != "mesh2d" || h[1] != "v1" {
        return Err(err(ln, format!("expected 'mesh2d v1 <elem_kind>', found '{header}'")));
    }
    let kind: ElemKind = h[2].parse().map_err(|e: Error| err(ln, e.to_string()))?;

    let section_count = |name: &str, lines: &mut dyn Iterator<Item = (usize, &str)>| -> Result<usize> {
        let (ln, l) = lines.next().ok_or_else(|| err(ln, format!("missing '{name}' section")))?;
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() != 2 || t[0] != name {
            return Err(err(ln, format!("expected '{name} <count>', found '{l}'")));
        }
        t[1].parse::<usize>().map_err(|e| err(ln, format!("bad {name} count: {e}")))
    };

    let nn = section_count("nodes", &mut lines)?;
    let mut nodes = Vec::with_capacity(nn);
    for _ in 0..nn {
        let (ln, l) = lines.next().ok_or_else(|| err(ln, "unexpected end of file in nodes".into()))?;
        let v: Vec<&str> = l.split_whitespace().collect();
        if v.len() != 2 {
            return Err(err(ln, format!("expected 'x y', found '{l}'")));
        }
        let x = v[0].parse::<f64>().map_err(|e| err(ln, format!("bad coordinate: {e}")))?;
        let y = v[1].parse::<f64>().map_err(|e| err(ln, format!("bad coordinate: {e}")))?;
        nodes.push([x, y]);
    }

    let ne = section_count("elements", &mut lines)?;
    let npe = kind.nodes_per_element();
    let mut elements = Vec::with_capacity(ne);
    for e in 0..ne {
        let (ln, l) = lines.next().ok_or_else(|| err(ln, "unexpected end of file in elements".into()))?;
        let row = l
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| err(ln, format!("bad connectivity: {e}")))?;
        if row.len() != npe {
            return Err(err(ln, format!("element {e} has {} indices, {kind} requires {npe}", row.len())));
        }
        if let Some(bad) = row.iter().find(|&&i| i >= nn) {
            return Err(err(ln, format!("connectivity out of range: node {bad} in element {e} ({nn} nodes)")));
        }
        elements.push(row);
    }

    let (ln, l) = lines.next().ok_or_else(|| err(ln, "missing 'regions' section".into()))?;
    if l != "regions" {
        return Err(err(ln, format!("expected 'regions', found '{l}'")));
    }
    let mut regions = Vec::with_capacity(ne);
    for _ in 0..ne {
        let (ln, l) = lines.next().ok_or_else(|| err(ln, "unexpected end of file in regions".into()))?;
        regions.push(l.parse::<i64>().map_err(|e| err(ln, format!("bad region tag: {e}")))?);
    }

    let mut boundary = BTreeMap::new();
    if let Some((ln, l)) = lines.next() {
        if l != "boundary" {
            return Err(err(ln, format!("expected 'boundary' or end of file, found '{l}'")));
        }
        for (ln, l) in lines.by_ref() {
            let v: Vec<&str> = l.split_whitespace().collect();
            if v.len() != 2 {
                return Err(err(ln, format!("expected 'node_index tag', found '{l}'")));
            }
            let n = v[0].parse::<usize>().map_err(|e| err(ln, format!("bad node index: {e}")))?;
            let t = v[1].parse::<i64>().map_err(|e| err(ln, format!("bad tag: {e}")))?;
            if n >= nn {
                return Err(err(ln, format!("boundary node {n} out of range ({nn} nodes)")));
            }
            boundary.insert(n, t);
        }
    }

    Mesh::new(kind, nodes, elements, regions, boundary)
}

pub(crate) struct Jacobian {
    pub det: f64,
    /// Inverse transpose applied to reference gradients gives spatial gradients.
    pub inv: [[f64; 2]; 2],
}

pub(crate) fn jacobian(nodes: &[[f64; 2]], el: &[usize], dn: &[[f64; 2]]) -> Jacobian {
    // J_ij = d x_i / d xi_j
    let mut j = [[0.0; 2]; 2];
    for (a, &n) in el.iter().enumerate() {
        let x = nodes[n];
        for i in 0..2 {
            for k in 0..2 {
                j[i][k] += x[i] * dn[a][k];
            }
        }
    }
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let inv = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
    Jacobian { det, inv }
}

/// Parent-domain quadrature data: for every (element, point) pair the
/// shape-function gradients with respect to the parent coordinates, the
/// integration weight (reference weight times Jacobian determinant) and
/// the physical location. Global point index is `e * points_per_element + q`.
#[derive(Clone, Debug)]
pub struct QuadData {
    pub nodes_per_element: usize,
    pub points_per_element: usize,
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub points: Vec<[f64; 2]>,
}

impl QuadData {
    pub fn new(mesh: &Mesh) -> Self {
        let rule = quadrature_for(mesh.kind);
        let npe = mesh.kind.nodes_per_element();
        let nq = rule.len();
        let ne = mesh.num_elements();
        let mut values = Vec::with_capacity(ne * nq * npe);
        let mut grads = Vec::with_capacity(ne * nq * npe);
        let mut weights = Vec::with_capacity(ne * nq);
        let mut points = Vec::with_capacity(ne * nq);
        let mut n = vec![0.0; npe];
        let mut dn = vec![[0.0; 2]; npe];
        for el in mesh.elements() {
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                shape_eval_into(mesh.kind, *p, &mut n, &mut dn);
                let jac = jacobian(&mesh.nodes, el, &dn);
                let mut x = [0.0; 2];
                for a in 0..npe {
                    let g = [
                        jac.inv[0][0] * dn[a][0] + jac.inv[1][0] * dn[a][1],
                        jac.inv[0][1] * dn[a][0] + jac.inv[1][1] * dn[a][1],
                    ];
                    grads.push(g);
                    values.push(n[a]);
                    x[0] += n[a] * mesh.nodes[el[a]][0];
                    x[1] += n[a] * mesh.nodes[el[a]][1];
                }
                weights.push(w * jac.det);
                points.push(x);
            }
        }
        QuadData { nodes_per_element: npe, points_per_element: nq, values, grads, weights, points }
    }

    pub fn num_points(&self) -> usize {
        self.weights.len()
    }

    pub fn element_of(&self, q: usize) -> usize {
        q / self.points_per_element
    }

    /// Parent gradients of the element shape functions at global point `q`.
    pub fn grads_at(&self, q: usize) -> &[[f64; 2]] {
        &self.grads[q * self.nodes_per_element..(q + 1) * self.nodes_per_element]
    }

    pub fn values_at(&self, q: usize) -> &[f64] {
        &self.values[q * self.nodes_per_element..(q + 1) * self.nodes_per_element]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SINGLE_TRI6: &str = "\
# reference element
mesh2d v1 tri6
nodes 6
0 0
1 0
0 1
0.5 0
0.5 0.5
0 0.5
elements 1
0 1 2 3 4 5
regions
0
";

    #[test]
    fn parses_single_element() {
        let m = Mesh::parse(SINGLE_TRI6).unwrap();
        assert_eq!(m.num_nodes(), 6);
        assert_eq!(m.num_elements(), 1);
        assert!((m.area() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_range_connectivity() {
        let bad = SINGLE_TRI6.replace("0 1 2 3 4 5", "0 1 2 3 4 99");
        let e = Mesh::parse(&bad).unwrap_err();
        assert!(e.to_string().contains("connectivity out of range"), "{e}");
        assert!(matches!(e, Error::Parse { line: 11, .. }), "{e:?}");
    }

    #[test]
    fn rejects_inverted_element() {
        let bad = SINGLE_TRI6.replace("0 1 2 3 4 5", "0 2 1 5 4 3");
        let e = Mesh::parse(&bad).unwrap_err();
        assert!(e.to_string().contains("element 0"), "{e}");
    }

    #[test]
    fn reports_bad_header_line() {
        let e = Mesh::parse("\n\nmesh3d v1 tri6\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn text_round_trip_preserves_mesh() {
        let m = generate::unit_square(3, ElemKind::Tri6).unwrap();
        let back = Mesh::parse(&m.to_text()).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.fingerprint(), back.fingerprint());
    }

    #[test]
    fn structured_counts_match_formula() {
        for n in 1..6 {
            let m = generate::unit_square(n, ElemKind::Tri6).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("sq.mesh");
            m.save(&path).unwrap();
            let back = load_mesh(&path).unwrap();
            assert_eq!(back.num_elements(), 2 * n * n);
            assert_eq!(back.num_nodes(), (2 * n + 1) * (2 * n + 1));
        }
    }

    #[test]
    fn quadrature_weights_sum_to_area() {
        let m = generate::unit_square(4, ElemKind::Quad8).unwrap();
        let q = m.quadrature();
        assert_eq!(q.num_points(), 16 * 4);
        assert!((q.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}
