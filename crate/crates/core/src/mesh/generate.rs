//! Structured mesh generators for unit-square RVEs (with or without
//! elliptical inclusions or holes) and rectangular macro structures.

use super::{ElemKind, Mesh, TAG_INTERFACE, TAG_OUTER};
use crate::error::{Error, Result};
use crate::geometry::{Ellipse, Parameterization};
use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

struct Builder {
    nodes: Vec<[f64; 2]>,
    lookup: HashMap<(i64, i64), usize>,
    elements: Vec<Vec<usize>>,
    regions: Vec<i64>,
    tags: BTreeMap<usize, i64>,
}

impl Builder {
    fn new() -> Self {
        Builder { nodes: Vec::new(), lookup: HashMap::new(), elements: Vec::new(), regions: Vec::new(), tags: BTreeMap::new() }
    }

    fn node(&mut self, x: [f64; 2]) -> usize {
        let key = ((x[0] * 1e9).round() as i64, (x[1] * 1e9).round() as i64);
        if let Some(&i) = self.lookup.get(&key) {
            return i;
        }
        self.nodes.push(x);
        self.lookup.insert(key, self.nodes.len() - 1);
        self.nodes.len() - 1
    }

    /// Adds a tri6 element from six points, flipping orientation if needed.
    fn tri6(&mut self, p: [[f64; 2]; 6], region: i64) -> [usize; 6] {
        let area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        let p = if area < 0.0 { [p[0], p[2], p[1], p[5], p[4], p[3]] } else { p };
        let ids = p.map(|x| self.node(x));
        self.elements.push(ids.to_vec());
        self.regions.push(region);
        ids
    }

    /// Splits the param quad with 3x3 sample points `g[i][j]` into two tri6.
    fn quad_as_tris(&mut self, g: &[[[f64; 2]; 3]; 3], region: i64) -> ([usize; 6], [usize; 6]) {
        let a = self.tri6([g[0][0], g[2][0], g[2][2], g[1][0], g[2][1], g[1][1]], region);
        let b = self.tri6([g[0][0], g[2][2], g[0][2], g[1][1], g[1][2], g[0][1]], region);
        (a, b)
    }

    fn finish(mut self, kind: ElemKind, domain: [f64; 2]) -> Result<Mesh> {
        for (i, x) in self.nodes.iter().enumerate() {
            let on = |v: f64, t: f64| (v - t).abs() < 1e-10;
            if on(x[0], 0.0) || on(x[0], domain[0]) || on(x[1], 0.0) || on(x[1], domain[1]) {
                self.tags.entry(i).or_insert(TAG_OUTER);
            }
        }
        Mesh::new(kind, self.nodes, self.elements, self.regions, self.tags)
    }
}

/// Structured `n x n` unit-square mesh. Tri6 cells are split along the
/// (0,0)-(1,1) diagonal; quad8 cells are used as is.
pub fn unit_square(n: usize, kind: ElemKind) -> Result<Mesh> {
    rectangle(n, n, [1.0, 1.0], kind)
}

/// Structured `nx x ny` mesh of the rectangle `[0, w] x [0, h]`.
pub fn rectangle(nx: usize, ny: usize, size: [f64; 2], kind: ElemKind) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument("mesh needs at least one cell per direction".into()));
    }
    let mut b = Builder::new();
    let pt = |i: usize, j: usize| [size[0] * i as f64 / (2 * nx) as f64, size[1] * j as f64 / (2 * ny) as f64];
    for j in 0..ny {
        for i in 0..nx {
            let (i0, j0) = (2 * i, 2 * j);
            match kind {
                ElemKind::Tri6 => {
                    let mut g = [[[0.0; 2]; 3]; 3];
                    for (di, row) in g.iter_mut().enumerate() {
                        for (dj, p) in row.iter_mut().enumerate() {
                            *p = pt(i0 + di, j0 + dj);
                        }
                    }
                    b.quad_as_tris(&g, 0);
                }
                ElemKind::Quad8 => {
                    let ids = [
                        pt(i0, j0),
                        pt(i0 + 2, j0),
                        pt(i0 + 2, j0 + 2),
                        pt(i0, j0 + 2),
                        pt(i0 + 1, j0),
                        pt(i0 + 2, j0 + 1),
                        pt(i0 + 1, j0 + 2),
                        pt(i0, j0 + 1),
                    ]
                    .map(|x| b.node(x));
                    b.elements.push(ids.to_vec());
                    b.regions.push(0);
                }
            }
        }
    }
    b.finish(kind, size)
}

/// What sits at the centre of one sub-cell of a cellular RVE.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Inset {
    Empty,
    Inclusion(Ellipse),
    Hole(Ellipse),
}

/// Unit-square RVE tiled by `cells x cells` square sub-cells, each
/// optionally holding a centred ellipse, meshed with tri6 O-grids.
#[derive(Clone, Debug)]
pub struct CellularRve {
    pub cells: usize,
    /// Element edges per sub-cell side.
    pub segments: usize,
    /// Element layers between the ellipse and the sub-cell boundary.
    pub outer_layers: usize,
    /// Element layers between an inclusion core and the ellipse.
    pub inner_layers: usize,
    /// Row-major (`j * cells + i`) insets.
    pub insets: Vec<Inset>,
}

impl CellularRve {
    pub fn build(&self) -> Result<Mesh> {
        let c = self.cells;
        let m = self.segments;
        if c == 0 || m == 0 || self.outer_layers == 0 || self.inner_layers == 0 {
            return Err(Error::InvalidArgument("cells, segments and layers must be positive".into()));
        }
        if self.insets.len() != c * c {
            return Err(Error::InvalidArgument(format!("expected {} insets, got {}", c * c, self.insets.len())));
        }
        let mut b = Builder::new();
        let lattice = (2 * m * c) as f64;
        let mut interface = 0i64;
        for j in 0..c {
            for i in 0..c {
                let (i0, j0) = (2 * m * i, 2 * m * j);
                // square boundary point at half-step t (0..8m), counterclockwise from the lower-left corner
                let square = |t: usize| -> [f64; 2] {
                    let t = t % (8 * m);
                    let (side, o) = (t / (2 * m), t % (2 * m));
                    let (ix, iy) = match side {
                        0 => (i0 + o, j0),
                        1 => (i0 + 2 * m, j0 + o),
                        2 => (i0 + 2 * m - o, j0 + 2 * m),
                        _ => (i0, j0 + 2 * m - o),
                    };
                    [ix as f64 / lattice, iy as f64 / lattice]
                };
                let inset = self.insets[j * c + i];
                let ellipse = match inset {
                    Inset::Empty => {
                        for q in 0..m {
                            for p in 0..m {
                                let mut g = [[[0.0; 2]; 3]; 3];
                                for (di, row) in g.iter_mut().enumerate() {
                                    for (dj, x) in row.iter_mut().enumerate() {
                                        *x = [
                                            (i0 + 2 * p + di) as f64 / lattice,
                                            (j0 + 2 * q + dj) as f64 / lattice,
                                        ];
                                    }
                                }
                                b.quad_as_tris(&g, 0);
                            }
                        }
                        continue;
                    }
                    Inset::Inclusion(e) | Inset::Hole(e) => e,
                };
                let center = ellipse.center;
                let on_ellipse = |t: usize| -> [f64; 2] {
                    let s = square(t);
                    ellipse.ray_point((s[1] - center[1]).atan2(s[0] - center[0]))
                };
                let tag = TAG_INTERFACE + interface;
                interface += 1;

                // outer ring: s = 0 on the ellipse, s = 1 on the sub-cell boundary
                let nl = self.outer_layers;
                let ring = |t: usize, sh: usize| -> [f64; 2] {
                    if sh == 2 * nl {
                        return square(t);
                    }
                    let e = on_ellipse(t);
                    if sh == 0 {
                        return e;
                    }
                    let s = square(t);
                    let f = sh as f64 / (2 * nl) as f64;
                    [e[0] + f * (s[0] - e[0]), e[1] + f * (s[1] - e[1])]
                };
                for l in 0..nl {
                    for k in 0..4 * m {
                        let mut g = [[[0.0; 2]; 3]; 3];
                        for (di, row) in g.iter_mut().enumerate() {
                            for (dj, x) in row.iter_mut().enumerate() {
                                *x = ring(2 * k + di, 2 * l + dj);
                            }
                        }
                        let (ta, tb) = b.quad_as_tris(&g, 0);
                        if l == 0 {
                            for id in ta.iter().chain(tb.iter()) {
                                let x = b.nodes[*id];
                                if is_on(&ellipse, x) {
                                    b.tags.insert(*id, tag);
                                }
                            }
                        }
                    }
                }

                if let Inset::Inclusion(_) = inset {
                    let core_curve = |t: usize| -> [f64; 2] {
                        let e = on_ellipse(t);
                        [center[0] + 0.5 * (e[0] - center[0]), center[1] + 0.5 * (e[1] - center[1])]
                    };
                    let ni = self.inner_layers;
                    let inner = |t: usize, sh: usize| -> [f64; 2] {
                        if sh == 2 * ni {
                            return on_ellipse(t);
                        }
                        let r = core_curve(t);
                        if sh == 0 {
                            return r;
                        }
                        let e = on_ellipse(t);
                        let f = sh as f64 / (2 * ni) as f64;
                        [r[0] + f * (e[0] - r[0]), r[1] + f * (e[1] - r[1])]
                    };
                    for l in 0..ni {
                        for k in 0..4 * m {
                            let mut g = [[[0.0; 2]; 3]; 3];
                            for (di, row) in g.iter_mut().enumerate() {
                                for (dj, x) in row.iter_mut().enumerate() {
                                    *x = inner(2 * k + di, 2 * l + dj);
                                }
                            }
                            b.quad_as_tris(&g, 1);
                        }
                    }
                    // core: Coons patch bounded by the core curve
                    let n2 = 2 * m;
                    let core = |u: usize, v: usize| -> [f64; 2] {
                        if v == 0 {
                            return core_curve(u);
                        }
                        if u == n2 {
                            return core_curve(n2 + v);
                        }
                        if v == n2 {
                            return core_curve(2 * n2 + (n2 - u));
                        }
                        if u == 0 {
                            return core_curve((3 * n2 + (n2 - v)) % (4 * n2));
                        }
                        let (uu, vv) = (u as f64 / n2 as f64, v as f64 / n2 as f64);
                        let bot = core_curve(u);
                        let rgt = core_curve(n2 + v);
                        let top = core_curve(2 * n2 + (n2 - u));
                        let lft = core_curve(3 * n2 + (n2 - v));
                        let c00 = core_curve(0);
                        let c10 = core_curve(n2);
                        let c11 = core_curve(2 * n2);
                        let c01 = core_curve(3 * n2);
                        let mut out = [0.0; 2];
                        for d in 0..2 {
                            out[d] = (1.0 - vv) * bot[d] + vv * top[d] + (1.0 - uu) * lft[d] + uu * rgt[d]
                                - ((1.0 - uu) * (1.0 - vv) * c00[d]
                                    + uu * (1.0 - vv) * c10[d]
                                    + uu * vv * c11[d]
                                    + (1.0 - uu) * vv * c01[d]);
                        }
                        out
                    };
                    for q in 0..m {
                        for p in 0..m {
                            let mut g = [[[0.0; 2]; 3]; 3];
                            for (di, row) in g.iter_mut().enumerate() {
                                for (dj, x) in row.iter_mut().enumerate() {
                                    *x = core(2 * p + di, 2 * q + dj);
                                }
                            }
                            b.quad_as_tris(&g, 1);
                        }
                    }
                }
            }
        }
        b.finish(ElemKind::Tri6, [1.0, 1.0])
    }
}

fn is_on(e: &Ellipse, x: [f64; 2]) -> bool {
    let back = e.point(e.parametric_angle(x));
    (back[0] - x[0]).abs() < 1e-10 && (back[1] - x[1]).abs() < 1e-10
}

/// Resolution knobs for the preset RVEs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Resolution {
    pub segments: usize,
    pub outer_layers: usize,
    pub inner_layers: usize,
}

impl Resolution {
    pub const fn new(segments: usize, outer_layers: usize, inner_layers: usize) -> Self {
        Resolution { segments, outer_layers, inner_layers }
    }
}

/// Composite RVE: elasto-plastic matrix (region 0) with four stiff
/// elliptical inclusions (region 1) of varied aspect and orientation,
/// 23.4 % inclusion volume fraction in the parent, scaled by `zeta`.
pub fn composite_rve(res: Resolution) -> Result<(Mesh, Parameterization)> {
    let target = 0.234 / 4.0;
    let specs = [(1.35, 30.0), (1.0, 0.0), (1.55, -45.0), (1.2, 100.0)];
    let ellipses: Vec<Ellipse> = specs
        .iter()
        .enumerate()
        .map(|(k, (ratio, deg))| {
            let (i, j) = (k % 2, k / 2);
            let b = (target / (PI * ratio)).sqrt();
            Ellipse { center: [0.25 + 0.5 * i as f64, 0.25 + 0.5 * j as f64], a: ratio * b, b, angle: deg * PI / 180.0 }
        })
        .collect();
    let rve = CellularRve {
        cells: 2,
        segments: res.segments,
        outer_layers: res.outer_layers,
        inner_layers: res.inner_layers,
        insets: ellipses.iter().map(|e| Inset::Inclusion(*e)).collect(),
    };
    Ok((rve.build()?, Parameterization::InclusionScaling { ellipses, zeta_bounds: [0.5, 1.2] }))
}

/// Single-inclusion composite RVE (same 23.4 % fraction), small enough
/// for dense exact-limit checks.
pub fn single_inclusion_rve(res: Resolution) -> Result<(Mesh, Parameterization)> {
    let ratio: f64 = 1.25;
    let b = (0.234 / (PI * ratio)).sqrt();
    let e = Ellipse { center: [0.5, 0.5], a: ratio * b, b, angle: 20.0 * PI / 180.0 };
    let rve = CellularRve {
        cells: 1,
        segments: res.segments,
        outer_layers: res.outer_layers,
        inner_layers: res.inner_layers,
        insets: vec![Inset::Inclusion(e)],
    };
    Ok((rve.build()?, Parameterization::InclusionScaling { ellipses: vec![e], zeta_bounds: [0.5, 1.2] }))
}

/// Porous RVE with four elliptical holes in a checkerboard of alternating
/// orientation; parent geometry at `v_void = 0.45`, `kappa = 1.25`.
pub fn porous_rve(res: Resolution) -> Result<(Mesh, Parameterization)> {
    let centers = vec![[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]];
    // local y is the major axis: angle pi/2 turns it horizontal
    let angles = vec![PI / 2.0, 0.0, 0.0, PI / 2.0];
    let param = Parameterization::VoidShape {
        centers: centers.clone(),
        angles,
        parent: [0.45, 1.25],
        v_void_bounds: [0.4, 0.5],
        kappa_bounds: [1.01, 1.5],
    };
    let rve = CellularRve {
        cells: 2,
        segments: res.segments,
        outer_layers: res.outer_layers,
        inner_layers: res.inner_layers,
        insets: param.parent_ellipses().into_iter().map(Inset::Hole).collect(),
    };
    Ok((rve.build()?, param))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::periodic_pairs;

    #[test]
    fn composite_rve_has_expected_volume_fraction() {
        let (mesh, param) = composite_rve(Resolution::new(6, 2, 2)).unwrap();
        let q = mesh.quadrature();
        let mut incl = 0.0;
        let mut total = 0.0;
        for (p, w) in q.weights.iter().enumerate() {
            total += w;
            if mesh.regions[q.element_of(p)] == 1 {
                incl += w;
            }
        }
        assert!((total - 1.0).abs() < 1e-12);
        // straight-sided core/ring interiors with curved interface nodes: polygonal error only
        assert!((incl - 0.234).abs() < 2e-3, "{incl}");
        assert_eq!(param.parent_ellipses().len(), 4);
        for k in 0..4 {
            assert!(!mesh.nodes_with_tag(TAG_INTERFACE + k).is_empty());
        }
        periodic_pairs(&mesh, 1e-9).unwrap();
    }

    #[test]
    fn porous_rve_is_periodic_and_has_holes() {
        let (mesh, param) = porous_rve(Resolution::new(6, 3, 1)).unwrap();
        assert!((mesh.area() - (1.0 - 0.45)).abs() < 5e-3, "{}", mesh.area());
        periodic_pairs(&mesh, 1e-9).unwrap();
        for (k, e) in param.parent_ellipses().iter().enumerate() {
            for n in mesh.nodes_with_tag(TAG_INTERFACE + k as i64) {
                assert!(is_on(e, mesh.nodes[n]));
            }
        }
    }

    #[test]
    fn interface_nodes_sit_on_their_ellipse() {
        let (mesh, param) = single_inclusion_rve(Resolution::new(4, 1, 1)).unwrap();
        let e = param.parent_ellipses()[0];
        let nodes = mesh.nodes_with_tag(TAG_INTERFACE);
        assert_eq!(nodes.len(), 2 * 4 * 4);
        for n in nodes {
            assert!(is_on(&e, mesh.nodes[n]));
        }
    }

    #[test]
    fn rectangle_quad8_counts() {
        let m = rectangle(5, 3, [2.0, 1.0], ElemKind::Quad8).unwrap();
        assert_eq!(m.num_elements(), 15);
        assert_eq!(m.num_nodes(), 11 * 7 - 15);
        assert!((m.area() - 2.0).abs() < 1e-13);
    }
}
