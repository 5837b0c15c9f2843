//! Quadratic Lagrange reference elements and their quadrature rules.

use crate::error::{Error, Result};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ElemKind {
    /// Six-noded triangle on the unit reference triangle (0,0), (1,0), (0,1).
    Tri6,
    /// Eight-noded serendipity quadrilateral on the bi-unit square.
    Quad8,
}

impl ElemKind {
    pub fn nodes_per_element(self) -> usize {
        match self {
            ElemKind::Tri6 => 6,
            ElemKind::Quad8 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ElemKind::Tri6 => "tri6",
            ElemKind::Quad8 => "quad8",
        }
    }

    /// Reference coordinates of the element nodes, corners first, then
    /// edge midpoints in edge order.
    pub fn reference_nodes(self) -> &'static [[f64; 2]] {
        match self {
            ElemKind::Tri6 => &[
                [0.0, 0.0],
                [1.0, 0.0],
                [0.0, 1.0],
                [0.5, 0.0],
                [0.5, 0.5],
                [0.0, 0.5],
            ],
            ElemKind::Quad8 => &[
                [-1.0, -1.0],
                [1.0, -1.0],
                [1.0, 1.0],
                [-1.0, 1.0],
                [0.0, -1.0],
                [1.0, 0.0],
                [0.0, 1.0],
                [-1.0, 0.0],
            ],
        }
    }

    /// Measure of the reference element.
    pub fn reference_measure(self) -> f64 {
        match self {
            ElemKind::Tri6 => 0.5,
            ElemKind::Quad8 => 4.0,
        }
    }

    /// Whether `p` lies in the closed reference element (with a small slack).
    pub fn contains(self, p: [f64; 2]) -> bool {
        const SLACK: f64 = 1e-12;
        match self {
            ElemKind::Tri6 => p[0] >= -SLACK && p[1] >= -SLACK && p[0] + p[1] <= 1.0 + SLACK,
            ElemKind::Quad8 => p[0].abs() <= 1.0 + SLACK && p[1].abs() <= 1.0 + SLACK,
        }
    }
}

impl fmt::Display for ElemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ElemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tri6" => Ok(ElemKind::Tri6),
            "quad8" => Ok(ElemKind::Quad8),
            other => Err(Error::InvalidArgument(format!("unknown element kind '{other}'"))),
        }
    }
}

/// Shape function values and reference-space gradients at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeEval {
    pub values: Vec<f64>,
    pub gradients: Vec<[f64; 2]>,
}

/// Evaluates the Lagrange basis of `kind` at `p` (reference coordinates).
pub fn shape_eval(kind: ElemKind, p: [f64; 2]) -> ShapeEval {
    let mut values = vec![0.0; kind.nodes_per_element()];
    let mut gradients = vec![[0.0; 2]; kind.nodes_per_element()];
    shape_eval_into(kind, p, &mut values, &mut gradients);
    ShapeEval { values, gradients }
}

/// Same as [`shape_eval`] but writes into caller-provided slices.
pub fn shape_eval_into(kind: ElemKind, p: [f64; 2], n: &mut [f64], dn: &mut [[f64; 2]]) {
    let [xi, eta] = p;
    match kind {
        ElemKind::Tri6 => {
            let l1 = 1.0 - xi - eta;
            let l2 = xi;
            let l3 = eta;
            n[0] = l1 * (2.0 * l1 - 1.0);
            n[1] = l2 * (2.0 * l2 - 1.0);
            n[2] = l3 * (2.0 * l3 - 1.0);
            n[3] = 4.0 * l1 * l2;
            n[4] = 4.0 * l2 * l3;
            n[5] = 4.0 * l3 * l1;
            // dL1 = (-1,-1), dL2 = (1,0), dL3 = (0,1)
            let d1 = 4.0 * l1 - 1.0;
            dn[0] = [-d1, -d1];
            dn[1] = [4.0 * l2 - 1.0, 0.0];
            dn[2] = [0.0, 4.0 * l3 - 1.0];
            dn[3] = [4.0 * (l1 - l2), -4.0 * l2];
            dn[4] = [4.0 * l3, 4.0 * l2];
            dn[5] = [-4.0 * l3, 4.0 * (l1 - l3)];
        }
        ElemKind::Quad8 => {
            const CORNERS: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
            for (a, c) in CORNERS.iter().enumerate() {
                let (xa, ea) = (c[0], c[1]);
                let s = 1.0 + xi * xa;
                let t = 1.0 + eta * ea;
                let u = xi * xa + eta * ea - 1.0;
                n[a] = 0.25 * s * t * u;
                dn[a] = [0.25 * xa * t * (u + s), 0.25 * ea * s * (u + t)];
            }
            // mid-side nodes 4 (eta=-1), 6 (eta=+1): N = (1-xi^2)(1+eta*ea)/2
            for (a, ea) in [(4usize, -1.0f64), (6, 1.0)] {
                let t = 1.0 + eta * ea;
                n[a] = 0.5 * (1.0 - xi * xi) * t;
                dn[a] = [-xi * t, 0.5 * (1.0 - xi * xi) * ea];
            }
            // mid-side nodes 5 (xi=+1), 7 (xi=-1): N = (1+xi*xa)(1-eta^2)/2
            for (a, xa) in [(5usize, 1.0f64), (7, -1.0)] {
                let s = 1.0 + xi * xa;
                n[a] = 0.5 * s * (1.0 - eta * eta);
                dn[a] = [0.5 * xa * (1.0 - eta * eta), -eta * s];
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn([f64; 2]) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(*p)).sum()
    }
}

/// Degree-2 three-point rule for triangles; 2x2 Gauss-Legendre for quads.
pub fn quadrature_for(kind: ElemKind) -> QuadratureRule {
    match kind {
        ElemKind::Tri6 => {
            let w = 1.0 / 6.0;
            QuadratureRule {
                points: vec![[1.0 / 6.0, 1.0 / 6.0], [2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0]],
                weights: vec![w, w, w],
            }
        }
        ElemKind::Quad8 => {
            let g = 1.0 / 3.0f64.sqrt();
            QuadratureRule {
                points: vec![[-g, -g], [g, -g], [g, g], [-g, g]],
                weights: vec![1.0; 4],
            }
        }
    }
}

/// One-dimensional Gauss-Legendre rule on [-1, 1] for edge integrals.
pub fn gauss_legendre_1d(n: usize) -> Vec<(f64, f64)> {
    match n {
        1 => vec![(0.0, 2.0)],
        2 => {
            let g = 1.0 / 3.0f64.sqrt();
            vec![(-g, 1.0), (g, 1.0)]
        }
        3 => {
            let g = (0.6f64).sqrt();
            vec![(-g, 5.0 / 9.0), (0.0, 8.0 / 9.0), (g, 5.0 / 9.0)]
        }
        _ => {
            let a = (3.0 / 7.0 - 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
            let b = (3.0 / 7.0 + 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
            let wa = (18.0 + 30.0f64.sqrt()) / 36.0;
            let wb = (18.0 - 30.0f64.sqrt()) / 36.0;
            vec![(-b, wb), (-a, wa), (a, wa), (b, wb)]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn kronecker_property_at_nodes() {
        for kind in [ElemKind::Tri6, ElemKind::Quad8] {
            for (i, p) in kind.reference_nodes().iter().enumerate() {
                let s = shape_eval(kind, *p);
                for (j, v) in s.values.iter().enumerate() {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((v - expected).abs() < 1e-14, "{kind} node {i} fn {j}: {v}");
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-6;
        for kind in [ElemKind::Tri6, ElemKind::Quad8] {
            let p = match kind {
                ElemKind::Tri6 => [0.23, 0.41],
                ElemKind::Quad8 => [0.3, -0.7],
            };
            let s = shape_eval(kind, p);
            for d in 0..2 {
                let mut pp = p;
                let mut pm = p;
                pp[d] += h;
                pm[d] -= h;
                let sp = shape_eval(kind, pp);
                let sm = shape_eval(kind, pm);
                for a in 0..kind.nodes_per_element() {
                    let fd = (sp.values[a] - sm.values[a]) / (2.0 * h);
                    assert!((fd - s.gradients[a][d]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn triangle_rule_weights_and_exactness() {
        let rule = quadrature_for(ElemKind::Tri6);
        assert_eq!(rule.len(), 3);
        for w in &rule.weights {
            assert!((w - 1.0 / 6.0).abs() < 1e-15);
        }
        assert!((rule.integrate(|_| 1.0) - 0.5).abs() < 1e-15);
        // analytic: int x^i y^j over the unit triangle = i! j! / (i + j + 2)!
        for (i, j) in [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)] {
            let exact = factorial(i) * factorial(j) / factorial(i + j + 2);
            let got = rule.integrate(|p| p[0].powi(i as i32) * p[1].powi(j as i32));
            assert!((got - exact).abs() < 1e-15, "x^{i} y^{j}: {got} vs {exact}");
        }
    }

    #[test]
    fn quad_rule_integrates_cubics() {
        let rule = quadrature_for(ElemKind::Quad8);
        let g = 1.0 / 3.0f64.sqrt();
        for p in &rule.points {
            assert!((p[0].abs() - g).abs() < 1e-15 && (p[1].abs() - g).abs() < 1e-15);
        }
        let mono = |k: i32| if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
        for i in 0..=3 {
            for j in 0..=3 {
                let exact = mono(i) * mono(j);
                let got = rule.integrate(|p| p[0].powi(i) * p[1].powi(j));
                assert!((got - exact).abs() < 1e-14, "x^{i} y^{j}");
            }
        }
    }

    #[test]
    fn edge_rules_integrate_polynomials() {
        for n in 1..=4 {
            let rule = gauss_legendre_1d(n);
            for k in 0..(2 * n) {
                let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                let got: f64 = rule.iter().map(|(x, w)| w * x.powi(k as i32)).sum();
                assert!((got - exact).abs() < 1e-13, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!("hex20".parse::<ElemKind>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn partition_of_unity(u in 0.0f64..1.0, v in 0.0f64..1.0, quad in proptest::bool::ANY) {
            let (kind, p) = if quad {
                (ElemKind::Quad8, [2.0 * u - 1.0, 2.0 * v - 1.0])
            } else {
                (ElemKind::Tri6, [u * (1.0 - v), v])
            };
            let s = shape_eval(kind, p);
            let sum: f64 = s.values.iter().sum();
            let gsum = s.gradients.iter().fold([0.0, 0.0], |acc, g| [acc[0] + g[0], acc[1] + g[1]]);
            proptest::prop_assert!((sum - 1.0).abs() < 1e-13);
            proptest::prop_assert!(gsum[0].abs() < 1e-12 && gsum[1].abs() < 1e-12);
        }
    }
}
