//! Small fixed-size tensor helpers for 2D (plane) kinematics.
//!
//! Second-order in-plane tensors are `[[f64; 2]; 2]`. Fourth-order in-plane
//! tensors are `[[f64; 4]; 4]` with the row-major flattening `2 * i + j`,
//! so `A[2 * i + j][2 * k + l] = A_ijkl`.

pub type M2 = [[f64; 2]; 2];
pub type T4 = [[f64; 4]; 4];

pub const I2: M2 = [[1.0, 0.0], [0.0, 1.0]];

#[inline]
pub fn mul(a: &M2, b: &M2) -> M2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

#[inline]
pub fn transpose(a: &M2) -> M2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

#[inline]
pub fn det(a: &M2) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

#[inline]
pub fn inv(a: &M2) -> M2 {
    let d = det(a);
    [[a[1][1] / d, -a[0][1] / d], [-a[1][0] / d, a[0][0] / d]]
}

#[inline]
pub fn add(a: &M2, b: &M2) -> M2 {
    [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
}

#[inline]
pub fn sub(a: &M2, b: &M2) -> M2 {
    [[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]]
}

#[inline]
pub fn scale(a: &M2, s: f64) -> M2 {
    [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
}

#[inline]
pub fn ddot(a: &M2, b: &M2) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

#[inline]
pub fn norm(a: &M2) -> f64 {
    ddot(a, a).sqrt()
}

#[inline]
pub fn flat(a: &M2) -> [f64; 4] {
    [a[0][0], a[0][1], a[1][0], a[1][1]]
}

#[inline]
pub fn unflat(v: &[f64]) -> M2 {
    [[v[0], v[1]], [v[2], v[3]]]
}

/// `A : B` for a fourth-order `A` and second-order `B`.
#[inline]
pub fn t4_ddot(a: &T4, b: &M2) -> M2 {
    let b = flat(b);
    let mut out = [0.0; 4];
    for (r, row) in a.iter().enumerate() {
        out[r] = row.iter().zip(&b).map(|(x, y)| x * y).sum();
    }
    unflat(&out)
}

/// Spectral data of a symmetric 2x2 tensor: eigenvalues (descending) and
/// unit eigenvectors.
#[derive(Clone, Copy, Debug)]
pub struct SymEig {
    pub values: [f64; 2],
    pub vectors: [[f64; 2]; 2],
}

/// Closed-form eigen-decomposition of the symmetric part of `a`.
pub fn sym_eig(a: &M2) -> SymEig {
    let (p, q) = (a[0][0], a[1][1]);
    let b = 0.5 * (a[0][1] + a[1][0]);
    let m = 0.5 * (p + q);
    let h = 0.5 * (p - q);
    let r = h.hypot(b);
    let theta = 0.5 * (2.0 * b).atan2(p - q);
    let (s, c) = theta.sin_cos();
    SymEig { values: [m + r, m - r], vectors: [[c, s], [-s, c]] }
}

/// `(f(x) - f(y)) / (x - y)` for `f = ln`, with a series when `x` and `y` nearly coincide.
pub fn ln_divided_difference(x: f64, y: f64) -> f64 {
    if (x - y).abs() < 1e-8 {
        let m = 0.5 * (x + y);
        let s = 0.5 * (x - y) / m;
        // ln((1+s)/(1-s)) / (2 s m) = atanh(s) / (s m)
        (1.0 + s * s / 3.0 + s.powi(4) / 5.0) / m
    } else {
        (x.ln() - y.ln()) / (x - y)
    }
}

/// Applies a scalar function to a symmetric tensor through its spectrum.
pub fn sym_fn(a: &M2, f: impl Fn(f64) -> f64) -> M2 {
    let e = sym_eig(a);
    let mut out = [[0.0; 2]; 2];
    for k in 0..2 {
        let fk = f(e.values[k]);
        let n = e.vectors[k];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] += fk * n[i] * n[j];
            }
        }
    }
    out
}
