//! Snapshot sets and proper orthogonal decomposition by the method of
//! snapshots, in the H1 product for fluctuations and the L2 product for
//! weighted stresses.

use crate::error::{Error, Result};
use crate::mesh::{DofMap, Mesh, QuadData};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotKind {
    Displacement,
    WeightedStress,
}

/// Column snapshots with their (sample, load step) tags.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSet {
    pub kind: SnapshotKind,
    rows: usize,
    columns: Vec<Vec<f64>>,
    pub tags: Vec<(usize, usize)>,
}

impl SnapshotSet {
    pub fn new(kind: SnapshotKind, rows: usize) -> Self {
        SnapshotSet { kind, rows, columns: Vec::new(), tags: Vec::new() }
    }

    pub fn push(&mut self, sample: usize, step: usize, column: Vec<f64>) -> Result<()> {
        if column.len() != self.rows {
            return Err(Error::Dimension(format!("snapshot of length {} in a set of length {}", column.len(), self.rows)));
        }
        if column.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("snapshot (sample {sample}, step {step}) has non-finite entries")));
        }
        self.columns.push(column);
        self.tags.push((sample, step));
        Ok(())
    }

    /// Appends all columns of `other`, which must be of the same kind and length.
    pub fn extend(&mut self, other: SnapshotSet) -> Result<()> {
        if other.kind != self.kind || other.rows != self.rows {
            return Err(Error::Dimension("merging incompatible snapshot sets".into()));
        }
        self.columns.extend(other.columns);
        self.tags.extend(other.tags);
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GramKind {
    H1,
    L2,
}

/// Symmetric positive (semi)definite inner product matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Gram {
    pub kind: GramKind,
    n: usize,
    /// Compressed rows; a diagonal Gram has exactly one entry per row.
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Gram {
    fn from_triplets(kind: GramKind, n: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n + 1];
        let mut cols: Vec<usize> = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut last = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *vals.last_mut().expect("entry exists") += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Gram { kind, n, row_ptr, cols, vals }
    }

    pub fn diagonal(kind: GramKind, d: Vec<f64>) -> Self {
        let n = d.len();
        Gram { kind, n, row_ptr: (0..=n).collect(), cols: (0..n).collect(), vals: d }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(|k| self.vals[k] * x[self.cols[k]]).sum())
            .collect()
    }

    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.apply(y))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.cols[k])] += self.vals[k];
            }
        }
        m
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `int (u.v + grad u : grad v) dX` on the parent domain, over the dofs of `dofs`.
pub fn h1_gram(mesh: &Mesh, quad: &QuadData, dofs: &DofMap) -> Gram {
    h1_gram_with(mesh, quad, dofs, true)
}

/// Mass part of [`h1_gram`] only.
pub fn mass_gram(mesh: &Mesh, quad: &QuadData, dofs: &DofMap) -> Gram {
    h1_gram_with(mesh, quad, dofs, false)
}

fn h1_gram_with(mesh: &Mesh, quad: &QuadData, dofs: &DofMap, gradient: bool) -> Gram {
    let mut t = Vec::new();
    for q in 0..quad.num_points() {
        let el = mesh.element(quad.element_of(q));
        let (vals, g, wt) = (quad.values_at(q), quad.grads_at(q), quad.weights[q]);
        for (a, &na) in el.iter().enumerate() {
            for (b, &nb) in el.iter().enumerate() {
                let mut v = vals[a] * vals[b];
                if gradient {
                    v += g[a][0] * g[b][0] + g[a][1] * g[b][1];
                }
                for c in 0..2 {
                    if let (Some(r), Some(s)) = (dofs.dof(na, c), dofs.dof(nb, c)) {
                        t.push((r, s, v * wt));
                    }
                }
            }
        }
    }
    Gram::from_triplets(if gradient { GramKind::H1 } else { GramKind::L2 }, dofs.num_dofs(), t)
}

/// Quadrature weights repeated over the four stress components (point-major).
pub fn l2_gram(quad: &QuadData) -> Gram {
    Gram::diagonal(GramKind::L2, quad.weights.iter().flat_map(|w| [*w; 4]).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    Modes(usize),
    /// Keep the smallest basis capturing a fraction `1 - tol` of the energy.
    Energy(f64),
}

/// Orthonormal modes (column-major) in the product of `gram_kind`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedBasis {
    pub gram_kind: GramKind,
    pub dim: usize,
    pub modes: Vec<f64>,
    pub singular_values: Vec<f64>,
}

impl ReducedBasis {
    pub fn len(&self) -> usize {
        self.modes.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self, i: usize) -> &[f64] {
        &self.modes[i * self.dim..(i + 1) * self.dim]
    }

    /// First `n` modes.
    pub fn truncated(&self, n: usize) -> Result<ReducedBasis> {
        if n > self.len() {
            return Err(Error::RankDeficient { requested: n, achievable: self.len() });
        }
        Ok(ReducedBasis {
            gram_kind: self.gram_kind,
            dim: self.dim,
            modes: self.modes[..n * self.dim].to_vec(),
            singular_values: self.singular_values[..n.min(self.singular_values.len())].to_vec(),
        })
    }

    /// `sum_i a_i phi_i`.
    pub fn reconstruct(&self, a: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, ai) in a.iter().enumerate() {
            for (o, m) in out.iter_mut().zip(self.mode(i)) {
                *o += ai * m;
            }
        }
        out
    }

    /// Coefficients of the orthogonal projection of `x`.
    pub fn project(&self, gram: &Gram, x: &[f64]) -> Vec<f64> {
        let gx = gram.apply(x);
        (0..self.len()).map(|i| dot(self.mode(i), &gx)).collect()
    }

    /// Largest entry of `|Phi^T G Phi - I|`.
    pub fn orthonormality_defect(&self, gram: &Gram) -> f64 {
        let g: Vec<Vec<f64>> = (0..self.len()).map(|i| gram.apply(self.mode(i))).collect();
        let mut worst = 0.0f64;
        for i in 0..self.len() {
            for (j, gj) in g.iter().enumerate() {
                let e = dot(self.mode(i), gj) - if i == j { 1.0 } else { 0.0 };
                worst = worst.max(e.abs());
            }
        }
        worst
    }
}

/// Relative eigenvalue cut below which a snapshot direction is treated as
/// numerically absent.
const RANK_TOL: f64 = 1e-20;

pub fn pod(snapshots: &SnapshotSet, gram: &Gram, truncation: Truncation) -> Result<ReducedBasis> {
    if gram.dim() != snapshots.rows() {
        return Err(Error::Dimension(format!("Gram of size {} for snapshots of length {}", gram.dim(), snapshots.rows())));
    }
    let m = snapshots.len();
    if let Truncation::Modes(n) = truncation {
        if n > m {
            return Err(Error::RankDeficient { requested: n, achievable: m });
        }
    }
    let gs: Vec<Vec<f64>> = snapshots.columns().iter().map(|c| gram.apply(c)).collect();
    let mut c = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = dot(&snapshots.columns()[i], &gs[j]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let lmax = order.first().map(|&i| eig.eigenvalues[i]).unwrap_or(0.0).max(0.0);
    let rank = order.iter().take_while(|&&i| eig.eigenvalues[i] > RANK_TOL * lmax && lmax > 0.0).count();
    let total: f64 = order[..rank].iter().map(|&i| eig.eigenvalues[i]).sum();
    let n = match truncation {
        Truncation::Modes(n) => {
            if n > rank {
                return Err(Error::RankDeficient { requested: n, achievable: rank });
            }
            n
        }
        Truncation::Energy(tol) => {
            if !(0.0..1.0).contains(&tol) {
                return Err(Error::InvalidArgument(format!("energy tolerance must lie in [0, 1), got {tol}")));
            }
            let mut acc = 0.0;
            let mut n = rank;
            for (k, &i) in order[..rank].iter().enumerate() {
                acc += eig.eigenvalues[i];
                if acc >= (1.0 - tol) * total {
                    n = k + 1;
                    break;
                }
            }
            n
        }
    };
    let dim = snapshots.rows();
    let mut modes: Vec<f64> = Vec::with_capacity(n * dim);
    let mut singular_values = Vec::with_capacity(n);
    for &i in &order[..n] {
        let lam = eig.eigenvalues[i];
        let s = lam.sqrt();
        let mut v = vec![0.0; dim];
        for (k, col) in snapshots.columns().iter().enumerate() {
            let coef = eig.eigenvectors[(k, i)] / s;
            for (o, x) in v.iter_mut().zip(col) {
                *o += coef * x;
            }
        }
        modes.extend(v);
        singular_values.push(s);
    }
    let mut basis = ReducedBasis { gram_kind: gram.kind, dim, modes, singular_values };
    orthonormalize(&mut basis, gram)?;
    Ok(basis)
}

/// Two passes of modified Gram-Schmidt in the `gram` product.
fn orthonormalize(basis: &mut ReducedBasis, gram: &Gram) -> Result<()> {
    let dim = basis.dim;
    for _ in 0..2 {
        for i in 0..basis.len() {
            for j in 0..i {
                let gj = gram.apply(&basis.modes[j * dim..(j + 1) * dim]);
                let c = dot(&basis.modes[i * dim..(i + 1) * dim], &gj);
                let (head, tail) = basis.modes.split_at_mut(i * dim);
                for (x, y) in tail[..dim].iter_mut().zip(&head[j * dim..(j + 1) * dim]) {
                    *x -= c * y;
                }
            }
            let mi = &mut basis.modes[i * dim..(i + 1) * dim];
            let nrm = gram.inner(mi, mi).sqrt();
            if !(nrm > 0.0) {
                return Err(Error::RankDeficient { requested: basis.len(), achievable: i });
            }
            mi.iter_mut().for_each(|x| *x /= nrm);
        }
    }
    Ok(())
}

/// Basis of the whole space, orthonormal in `gram` (dense; small systems only).
pub fn full_space(gram: &Gram) -> Result<ReducedBasis> {
    let n = gram.dim();
    let chol = gram.to_dense().cholesky().ok_or_else(|| Error::Singular("Gram matrix is not positive definite".into()))?;
    // Phi = L^-T, so Phi^T G Phi = I
    let phi = chol.l().transpose().try_inverse().ok_or_else(|| Error::Singular("Cholesky factor not invertible".into()))?;
    Ok(ReducedBasis { gram_kind: gram.kind, dim: n, modes: phi.as_slice().to_vec(), singular_values: vec![] })
}
