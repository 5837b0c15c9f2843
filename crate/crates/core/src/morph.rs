//! Geometric transformation from the parent mesh to a parameterized
//! geometry, obtained from an auxiliary linear-elasticity problem.
//!
//! The outer RVE boundary is held fixed and the nodes of interior interface
//! `k` are moved from the parent ellipse to the target ellipse at the same
//! parametric angle. The resulting nodal displacement `d` defines
//! `F_mu = I + dd/dX` at every quadrature point.
//!
//! The operator is factorized once per parent mesh and reused for every
//! parameter value; at the mesh sizes used here a direct solve is cheap, so
//! no reduction of the auxiliary problem is attempted.

use crate::error::{Error, Result};
use crate::geometry::{GeometryParams, Parameterization};
use crate::material::elastic_tangent;
use crate::mesh::{DofMap, Mesh, QuadData, TAG_INTERFACE, TAG_OUTER};
use crate::sparse::{SparseLu, SparsePattern};
use crate::tensor::{self, M2};

pub const E_AUX: f64 = 1.0;
pub const NU_AUX: f64 = 0.25;

/// Per-quadrature-point transformation data for one parameter value.
#[derive(Clone, Debug, PartialEq)]
pub struct MorphField {
    /// Nodal transformation displacement.
    pub d: Vec<[f64; 2]>,
    pub f_inv: Vec<M2>,
    pub det: Vec<f64>,
}

impl MorphField {
    pub fn identity(num_nodes: usize, num_points: usize) -> Self {
        MorphField { d: vec![[0.0; 2]; num_nodes], f_inv: vec![tensor::I2; num_points], det: vec![1.0; num_points] }
    }

    pub fn num_points(&self) -> usize {
        self.det.len()
    }
}

/// Factorized auxiliary problem on a parent mesh.
pub struct MorphOperator {
    param: Parameterization,
    conn: Vec<usize>,
    quad: QuadData,
    num_nodes: usize,
    free: DofMap,
    /// Constrained nodes: `(node, source)` where source is `None` for the
    /// fixed outer boundary, or `(k, theta)` for interface `k` at parametric angle `theta`.
    constrained: Vec<(usize, Option<(usize, f64)>)>,
    /// `K_fc` entries: (free dof, constrained node, component, value).
    coupling: Vec<(usize, usize, usize, f64)>,
    lu: SparseLu,
}

/// Assembles and factorizes the auxiliary elasticity operator.
pub fn assemble_aux(parent: &Mesh, param: &Parameterization) -> Result<MorphOperator> {
    let ellipses = param.parent_ellipses();
    let mut constrained = Vec::new();
    for (&node, &tag) in &parent.boundary {
        if tag == TAG_OUTER {
            constrained.push((node, None));
        } else if tag >= TAG_INTERFACE {
            let k = (tag - TAG_INTERFACE) as usize;
            let e = ellipses.get(k).ok_or_else(|| {
                Error::Geometry(format!("mesh interface tag {tag} has no ellipse in the parameterization"))
            })?;
            constrained.push((node, Some((k, e.parametric_angle(parent.nodes[node])))));
        }
    }
    for k in 0..ellipses.len() {
        if !parent.boundary.values().any(|&t| t == TAG_INTERFACE + k as i64) {
            return Err(Error::Geometry(format!("parameterization interface {k} has no tagged mesh nodes")));
        }
    }
    if constrained.is_empty() {
        return Err(Error::Singular("auxiliary problem has no Dirichlet nodes".into()));
    }
    let fixed: Vec<usize> = constrained.iter().map(|c| c.0).collect();
    let free = DofMap::with_fixed(parent.num_nodes(), &fixed);
    let constrained_index: std::collections::HashMap<usize, usize> =
        constrained.iter().enumerate().map(|(i, c)| (c.0, i)).collect();

    let quad = parent.quadrature();
    let d = elastic_tangent(E_AUX, NU_AUX)?;
    let npe = parent.kind.nodes_per_element();
    let mut entries = Vec::new();
    let mut values = Vec::new();
    let mut coupling = Vec::new();
    for q in 0..quad.num_points() {
        let el = parent.element(quad.element_of(q));
        let g = quad.grads_at(q);
        let w = quad.weights[q];
        for a in 0..npe {
            for i in 0..2 {
                let Some(row) = free.dof(el[a], i) else { continue };
                for b in 0..npe {
                    for j in 0..2 {
                        let mut v = 0.0;
                        for k in 0..2 {
                            for l in 0..2 {
                                v += g[a][k] * d[2 * i + k][2 * j + l] * g[b][l];
                            }
                        }
                        v *= w;
                        match free.dof(el[b], j) {
                            Some(col) => {
                                entries.push((row, col));
                                values.push(v);
                            }
                            None => coupling.push((row, constrained_index[&el[b]], j, v)),
                        }
                    }
                }
            }
        }
    }
    let pattern = SparsePattern::new(free.num_dofs(), &entries)?;
    let lu = pattern.factor(&values)?;
    Ok(MorphOperator {
        param: param.clone(),
        conn: parent.elements().flatten().copied().collect(),
        quad,
        num_nodes: parent.num_nodes(),
        free,
        constrained,
        coupling,
        lu,
    })
}

impl MorphOperator {
    pub fn parameterization(&self) -> &Parameterization {
        &self.param
    }

    /// Constrained node indices, in the order expected by [`MorphOperator::solve_displacement`].
    pub fn constrained_nodes(&self) -> Vec<usize> {
        self.constrained.iter().map(|c| c.0).collect()
    }

    /// Dirichlet values at the constrained nodes for parameters `mu`.
    pub fn boundary_data(&self, mu: &GeometryParams) -> Result<Vec<[f64; 2]>> {
        let parent = self.param.parent_ellipses();
        let target = self.param.ellipses(mu)?;
        Ok(self
            .constrained
            .iter()
            .map(|&(_, src)| match src {
                None => [0.0, 0.0],
                Some((k, theta)) => {
                    let (x0, x1) = (parent[k].point(theta), target[k].point(theta));
                    [x1[0] - x0[0], x1[1] - x0[1]]
                }
            })
            .collect())
    }

    /// Solves the auxiliary problem for arbitrary values at the constrained nodes.
    pub fn solve_displacement(&self, values: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
        if values.len() != self.constrained.len() {
            return Err(Error::Dimension(format!(
                "{} boundary values for {} constrained nodes",
                values.len(),
                self.constrained.len()
            )));
        }
        let mut rhs = vec![0.0; self.free.num_dofs()];
        for &(row, c, j, v) in &self.coupling {
            rhs[row] -= v * values[c][j];
        }
        let x = self.lu.solve(&rhs)?;
        let mut d = self.free.expand(&x);
        for (&(node, _), v) in self.constrained.iter().zip(values) {
            d[node] = *v;
        }
        Ok(d)
    }

    /// Quadrature-point transformation data for a nodal displacement.
    pub fn field_from_displacement(&self, d: Vec<[f64; 2]>) -> MorphField {
        let npe = self.quad.nodes_per_element;
        let nq = self.quad.num_points();
        let mut f_inv = Vec::with_capacity(nq);
        let mut det = Vec::with_capacity(nq);
        for q in 0..nq {
            let e = self.quad.element_of(q);
            let el = &self.conn[e * npe..(e + 1) * npe];
            let mut f = tensor::I2;
            for (a, g) in self.quad.grads_at(q).iter().enumerate() {
                let da = d[el[a]];
                for i in 0..2 {
                    for j in 0..2 {
                        f[i][j] += da[i] * g[j];
                    }
                }
            }
            det.push(tensor::det(&f));
            f_inv.push(tensor::inv(&f));
        }
        MorphField { d, f_inv, det }
    }

    /// Transformation for parameters `mu`. Bounds are not enforced here;
    /// inverted elements are reported instead.
    pub fn solve_morph(&self, mu: &GeometryParams) -> Result<MorphField> {
        let data = self.boundary_data(mu)?;
        let d = self.solve_displacement(&data)?;
        let field = self.field_from_displacement(d);
        let (worst, min_det) = field
            .det
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(wi, wv), (i, &v)| if v < wv { (i, v) } else { (wi, wv) });
        if !(min_det > 0.0) {
            return Err(Error::MorphInversion { point: worst, det: min_det, mu: mu.0.clone() });
        }
        Ok(field)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Parent quadrature weights (reference weight times Jacobian).
    pub fn parent_weights(&self) -> &[f64] {
        &self.quad.weights
    }
}

/// Finite-difference derivatives of the transformation data with respect
/// to each geometric parameter.
#[derive(Clone, Debug)]
pub struct MorphDerivatives {
    pub d_f_inv: Vec<Vec<M2>>,
    pub d_det: Vec<Vec<f64>>,
}

/// Central differences, one-sided where `mu +- h` would leave the bounds.
pub fn morph_fd_derivatives(op: &MorphOperator, mu: &GeometryParams, h: f64) -> Result<MorphDerivatives> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    let param = op.parameterization();
    param.check_bounds(mu)?;
    let bounds = param.bounds();
    let base = op.solve_morph(mu)?;
    let mut d_f_inv = Vec::new();
    let mut d_det = Vec::new();
    for k in 0..mu.0.len() {
        let [lo, hi] = bounds[k];
        let (up, down) = (mu.0[k] + h <= hi + 1e-12, mu.0[k] - h >= lo - 1e-12);
        let shifted = |s: f64| -> Result<MorphField> {
            let mut m = mu.clone();
            m.0[k] += s;
            op.solve_morph(&m)
        };
        let (plus, minus, span) = match (up, down) {
            (true, true) => (shifted(h)?, shifted(-h)?, 2.0 * h),
            (true, false) => (shifted(h)?, base.clone(), h),
            (false, true) => (base.clone(), shifted(-h)?, h),
            (false, false) => {
                return Err(Error::InvalidArgument(format!("step {h} does not fit in the bounds of parameter {k}")))
            }
        };
        d_f_inv.push(
            plus.f_inv
                .iter()
                .zip(&minus.f_inv)
                .map(|(a, b)| tensor::scale(&tensor::sub(a, b), 1.0 / span))
                .collect(),
        );
        d_det.push(plus.det.iter().zip(&minus.det).map(|(a, b)| (a - b) / span).collect());
    }
    Ok(MorphDerivatives { d_f_inv, d_det })
}
