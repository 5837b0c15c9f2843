//! Empirical cubature over the parent domain: weighted stresses, the
//! integrand matrix of mode-gradient / stress-mode products, and greedy
//! selection of a sparse positive quadrature rule.

use crate::error::{Error, Result};
use crate::mesh::{DofMap, Mesh, QuadData};
use crate::morph::MorphField;
use crate::podkit::ReducedBasis;
use crate::tensor::{self, M2};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// `W = P F_mu^-T |det F_mu|` at every point.
pub fn weighted_stress_field(p: &[M2], morph: &MorphField) -> Result<Vec<M2>> {
    if p.len() != morph.num_points() {
        return Err(Error::Dimension(format!("{} stresses for {} morph points", p.len(), morph.num_points())));
    }
    Ok(p.iter()
        .zip(&morph.f_inv)
        .zip(&morph.det)
        .map(|((p, fi), d)| tensor::scale(&tensor::mul(p, &tensor::transpose(fi)), d.abs()))
        .collect())
}

/// Flattens a point field into a stress snapshot column (point-major).
pub fn stress_column(w: &[M2]) -> Vec<f64> {
    w.iter().flat_map(tensor::flat).collect()
}

/// Parent-domain gradients of every mode at every point, laid out
/// `[mode * Q + q]`, each in `[2i+j]` order.
pub fn mode_gradients(mesh: &Mesh, quad: &QuadData, dofs: &DofMap, basis: &ReducedBasis) -> Vec<[f64; 4]> {
    let nq = quad.num_points();
    let mut out = Vec::with_capacity(basis.len() * nq);
    for i in 0..basis.len() {
        let nodal = dofs.expand(basis.mode(i));
        for q in 0..nq {
            let el = mesh.element(quad.element_of(q));
            let mut g = [0.0; 4];
            for (a, ga) in quad.grads_at(q).iter().enumerate() {
                let u = nodal[el[a]];
                g[0] += u[0] * ga[0];
                g[1] += u[0] * ga[1];
                g[2] += u[1] * ga[0];
                g[3] += u[1] * ga[1];
            }
            out.push(g);
        }
    }
    out
}

/// Unweighted integrand samples, one row per (mode, stress mode) pair plus
/// an optional volume row, one column per full quadrature point.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegrandMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub data: Vec<f64>,
    pub rhs: Vec<f64>,
    pub volume_row: bool,
}

impl IntegrandMatrix {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, q: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.data[r * self.cols + q]).collect()
    }

    /// `J w` restricted to the given points.
    pub fn apply(&self, ids: &[usize], w: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| ids.iter().zip(w).map(|(&q, wq)| self.data[r * self.cols + q] * wq).sum()).collect()
    }
}

/// Builds `J[(i,l), q] = grad phi_i : B_l` at every point, with `rhs = J w_hat`.
pub fn build_integrand(
    gradients: &[[f64; 4]],
    num_modes: usize,
    stress_basis: &ReducedBasis,
    full_weights: &[f64],
    volume_row: bool,
) -> Result<IntegrandMatrix> {
    let nq = full_weights.len();
    if gradients.len() != num_modes * nq || stress_basis.dim != 4 * nq {
        return Err(Error::Dimension(format!(
            "integrand inputs disagree: {} gradients for {num_modes} modes, stress modes of length {}, {nq} points",
            gradients.len(),
            stress_basis.dim
        )));
    }
    let l = stress_basis.len();
    let rows = num_modes * l + usize::from(volume_row);
    let mut data = Vec::with_capacity(rows * nq);
    for i in 0..num_modes {
        let gi = &gradients[i * nq..(i + 1) * nq];
        for li in 0..l {
            let b = stress_basis.mode(li);
            data.extend(gi.iter().enumerate().map(|(q, g)| (0..4).map(|c| g[c] * b[4 * q + c]).sum::<f64>()));
        }
    }
    if volume_row {
        data.extend(std::iter::repeat_n(1.0, nq));
    }
    let rhs = (0..rows).map(|r| data[r * nq..(r + 1) * nq].iter().zip(full_weights).map(|(a, w)| a * w).sum()).collect();
    Ok(IntegrandMatrix { rows, cols: nq, data, rhs, volume_row })
}

/// Sparse positive quadrature rule over a subset of the full point set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EcmRule {
    pub point_ids: Vec<usize>,
    pub weights: Vec<f64>,
    pub achieved_residual: f64,
}

impl EcmRule {
    /// The full quadrature as a rule.
    pub fn full(full_weights: &[f64]) -> Self {
        EcmRule { point_ids: (0..full_weights.len()).collect(), weights: full_weights.to_vec(), achieved_residual: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.point_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_ids.is_empty()
    }

    pub fn validate(&self, num_points: usize) -> Result<()> {
        if self.point_ids.len() != self.weights.len() {
            return Err(Error::Model("quadrature rule ids and weights differ in length".into()));
        }
        let mut seen = vec![false; num_points];
        for &q in &self.point_ids {
            if q >= num_points || std::mem::replace(&mut seen[q], true) {
                return Err(Error::Model(format!("quadrature rule point {q} is out of range or repeated")));
            }
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w > 0.0)) {
            return Err(Error::Model(format!("quadrature rule weight {w} is not positive")));
        }
        Ok(())
    }
}

/// Progress record of one greedy iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EcmIteration {
    pub selected: usize,
    pub residual: f64,
}

fn rms_residual(r: &[f64], b_norm: f64) -> f64 {
    if b_norm == 0.0 {
        0.0
    } else {
        r.iter().map(|v| v * v).sum::<f64>().sqrt() / b_norm
    }
}

/// Termination tests: relative RMS over all rows, every row relative to the
/// RMS of the right-hand side, and the volume row relative to the volume.
fn satisfied(j: &IntegrandMatrix, r: &[f64], b_norm: f64, eps: f64) -> bool {
    let rms_b = b_norm / (r.len() as f64).sqrt();
    let volume_ok = !j.volume_row || r[j.rows - 1].abs() <= eps * j.rhs[j.rows - 1].abs();
    rms_residual(r, b_norm) <= eps && r.iter().all(|v| v.abs() <= eps * rms_b) && volume_ok
}

/// Greedy selection with a non-negative least-squares refit per iteration.
pub fn ecm_select(j: &IntegrandMatrix, eps: f64) -> Result<EcmRule> {
    ecm_select_traced(j, eps).map(|(rule, _)| rule)
}

pub fn ecm_select_traced(j: &IntegrandMatrix, eps: f64) -> Result<(EcmRule, Vec<EcmIteration>)> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("cubature tolerance must be positive, got {eps}")));
    }
    let b = &j.rhs;
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let col_norm: Vec<f64> = (0..j.cols).map(|q| (0..j.rows).map(|r| j.data[r * j.cols + q].powi(2)).sum::<f64>().sqrt()).collect();
    let mut ids: Vec<usize> = Vec::new();
    let mut w: Vec<f64> = Vec::new();
    let mut r = b.clone();
    let mut trace = Vec::new();
    let mut selected = vec![false; j.cols];
    while !satisfied(j, &r, b_norm, eps) {
        let mut best: Option<(usize, f64)> = None;
        for q in 0..j.cols {
            if selected[q] || col_norm[q] == 0.0 {
                continue;
            }
            let c = (0..j.rows).map(|row| j.data[row * j.cols + q] * r[row]).sum::<f64>() / col_norm[q];
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((q, c));
            }
        }
        let Some((q, _)) = best else {
            return Err(Error::EcmUnreachable { eps, residual: rms_residual(&r, b_norm) });
        };
        selected[q] = true;
        ids.push(q);
        w.push(0.0);
        let a = DMatrix::from_fn(j.rows, ids.len(), |row, k| j.data[row * j.cols + ids[k]]);
        w = nnls(&a, &DVector::from_column_slice(b), &w, 1e-12 * b_norm)?;
        // drop points whose weight vanished
        let mut k = 0;
        while k < ids.len() {
            if w[k] <= 0.0 {
                ids.remove(k);
                w.remove(k);
            } else {
                k += 1;
            }
        }
        let jw = j.apply(&ids, &w);
        r = b.iter().zip(&jw).map(|(x, y)| x - y).collect();
        trace.push(EcmIteration { selected: ids.len(), residual: rms_residual(&r, b_norm) });
    }
    let achieved_residual = rms_residual(&r, b_norm);
    // report points in ascending order
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&k| ids[k]);
    let rule = EcmRule {
        point_ids: order.iter().map(|&k| ids[k]).collect(),
        weights: order.iter().map(|&k| w[k]).collect(),
        achieved_residual,
    };
    Ok((rule, trace))
}

/// Lawson-Hanson active-set NNLS `min |A x - b|, x >= 0`, warm-started from
/// the positive entries of `x0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>, x0: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = a.ncols();
    let mut x = DVector::from_iterator(n, x0.iter().map(|v| v.max(0.0)));
    let mut passive: Vec<bool> = x.iter().map(|v| *v > 0.0).collect();
    let max_outer = 3 * n + 10;
    for _ in 0..max_outer {
        // feasible warm start may not be optimal on its passive set: inner loop first
        x = inner_loop(a, b, x, &mut passive)?;
        let grad = a.transpose() * (b - a * &x);
        let cand = (0..n).filter(|&k| !passive[k] && grad[k] > tol).max_by(|&p, &q| grad[p].total_cmp(&grad[q]).then(q.cmp(&p)));
        match cand {
            Some(k) => passive[k] = true,
            None => return Ok(x.iter().copied().collect()),
        }
    }
    Err(Error::Singular("non-negative least squares did not terminate".into()))
}

fn ls_on(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> Result<DVector<f64>> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&k| passive[k]).collect();
    let mut z = DVector::zeros(passive.len());
    if idx.is_empty() {
        return Ok(z);
    }
    let sub = DMatrix::from_fn(a.nrows(), idx.len(), |r, c| a[(r, idx[c])]);
    let sol = sub.svd(true, true).solve(b, 1e-14).map_err(|e| Error::Singular(format!("least squares: {e}")))?;
    for (c, &k) in idx.iter().enumerate() {
        z[k] = sol[c];
    }
    Ok(z)
}

fn inner_loop(a: &DMatrix<f64>, b: &DVector<f64>, mut x: DVector<f64>, passive: &mut [bool]) -> Result<DVector<f64>> {
    loop {
        let z = ls_on(a, b, passive)?;
        if (0..z.len()).all(|k| !passive[k] || z[k] > 0.0) {
            return Ok(z);
        }
        // step from x toward z until the first passive entry hits zero
        let mut alpha = 1.0f64;
        for k in 0..z.len() {
            if passive[k] && z[k] <= 0.0 {
                let d = x[k] - z[k];
                if d > 0.0 {
                    alpha = alpha.min(x[k] / d);
                } else {
                    alpha = 0.0;
                }
            }
        }
        x = &x + (&z - &x) * alpha;
        for k in 0..z.len() {
            if passive[k] && x[k] <= 1e-300 {
                passive[k] = false;
                x[k] = 0.0;
            }
        }
    }
}
