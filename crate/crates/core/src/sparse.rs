//! Sparse direct solves with a reusable sparsity pattern and symbolic
//! factorization (thin wrapper over `faer`).

use crate::error::{Error, Result};
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat};
use faer::Mat;

/// Fixed pattern of a square sparse matrix assembled from a list of
/// (row, col) entries that may repeat; values passed later must follow the
/// same entry order and are summed per position.
pub struct SparsePattern {
    n: usize,
    entries: usize,
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    lu: SymbolicLu<usize>,
}

impl SparsePattern {
    pub fn new(n: usize, entries: &[(usize, usize)]) -> Result<Self> {
        let mut pairs: Vec<Pair<usize, usize>> = entries.iter().map(|&(row, col)| Pair { row, col }).collect();
        // keep the diagonal structurally present so pivots exist for every row
        pairs.extend((0..n).map(|i| Pair { row: i, col: i }));
        let (symbolic, argsort) = SymbolicSparseColMat::try_new_from_indices(n, n, &pairs)
            .map_err(|e| Error::InvalidArgument(format!("sparse pattern: {e:?}")))?;
        let lu = SymbolicLu::try_new(symbolic.as_ref())
            .map_err(|e| Error::Singular(format!("symbolic factorization failed: {e:?}")))?;
        Ok(SparsePattern { n, entries: entries.len(), symbolic, argsort, lu })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of (possibly repeated) entries the value vector must hold.
    pub fn num_entries(&self) -> usize {
        self.entries
    }

    pub fn matrix(&self, values: &[f64]) -> Result<SparseColMat<usize, f64>> {
        if values.len() != self.entries {
            return Err(Error::Dimension(format!("{} values for {} pattern entries", values.len(), self.entries)));
        }
        let mut v = values.to_vec();
        v.extend(std::iter::repeat_n(0.0, self.n));
        SparseColMat::new_from_argsort(self.symbolic.clone(), &self.argsort, &v)
            .map_err(|e| Error::InvalidArgument(format!("sparse assembly: {e:?}")))
    }

    pub fn factor(&self, values: &[f64]) -> Result<SparseLu> {
        let a = self.matrix(values)?;
        let lu = Lu::try_new_with_symbolic(self.lu.clone(), a.as_ref())
            .map_err(|e| Error::Singular(format!("numeric factorization failed: {e:?}")))?;
        Ok(SparseLu { n: self.n, lu })
    }
}

pub struct SparseLu {
    n: usize,
    lu: Lu<usize, f64>,
}

impl SparseLu {
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.solve_many(&[rhs.to_vec()])?;
        Ok(out.pop().expect("one column"))
    }

    pub fn solve_many(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if rhs.is_empty() {
            return Ok(vec![]);
        }
        let mut b = Mat::<f64>::zeros(self.n, rhs.len());
        for (c, col) in rhs.iter().enumerate() {
            if col.len() != self.n {
                return Err(Error::Dimension(format!("right-hand side of length {} for {} unknowns", col.len(), self.n)));
            }
            for (r, v) in col.iter().enumerate() {
                b[(r, c)] = *v;
            }
        }
        self.lu.solve_in_place(b.as_mut());
        let out: Vec<Vec<f64>> = (0..rhs.len()).map(|c| (0..self.n).map(|r| b[(r, c)]).collect()).collect();
        if out.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Singular("sparse solve produced non-finite values".into()));
        }
        Ok(out)
    }
}

/// Dense LU solve of a small system (row-major `a`), partial pivoting.
pub fn dense_solve(n: usize, a: &[f64], rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let m = nalgebra::DMatrix::from_row_slice(n, n, a);
    let lu = m.lu();
    rhs.iter()
        .map(|b| {
            let x = lu
                .solve(&nalgebra::DVector::from_column_slice(b))
                .ok_or_else(|| Error::Singular("dense system is singular".into()))?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Singular("dense solve produced non-finite values".into()));
            }
            Ok(x.as_slice().to_vec())
        })
        .collect()
}
