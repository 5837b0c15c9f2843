//! Parent-domain interface geometry and its parameterizations.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Ellipse with semi-axis `a` along the rotated local x-axis and `b` along
/// the rotated local y-axis; `angle` is the rotation in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub a: f64,
    pub b: f64,
    pub angle: f64,
}

impl Ellipse {
    /// Point at parametric angle `theta`.
    pub fn point(&self, theta: f64) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        let lx = self.a * theta.cos();
        let ly = self.b * theta.sin();
        [self.center[0] + c * lx - s * ly, self.center[1] + s * lx + c * ly]
    }

    /// Parametric angle of a point (exact for points on the ellipse).
    pub fn parametric_angle(&self, x: [f64; 2]) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let dx = x[0] - self.center[0];
        let dy = x[1] - self.center[1];
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        (ly / self.b).atan2(lx / self.a)
    }

    /// Boundary point along the ray from the centre in global direction `phi`.
    pub fn ray_point(&self, phi: f64) -> [f64; 2] {
        let psi = phi - self.angle;
        let (sp, cp) = psi.sin_cos();
        let rho = 1.0 / ((cp / self.a).powi(2) + (sp / self.b).powi(2)).sqrt();
        [self.center[0] + rho * phi.cos(), self.center[1] + rho * phi.sin()]
    }

    pub fn area(&self) -> f64 {
        PI * self.a * self.b
    }

    pub fn scaled(&self, zeta: f64) -> Ellipse {
        Ellipse { a: self.a * zeta, b: self.b * zeta, ..*self }
    }
}

/// Geometric parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryParams(pub Vec<f64>);

impl GeometryParams {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// How the interior interfaces of a parent mesh depend on the geometric
/// parameters. Interface `k` of the mesh (nodes tagged `TAG_INTERFACE + k`)
/// corresponds to entry `k` of the parent ellipse list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Parameterization {
    /// No geometric parameters; the parent is the only geometry.
    Fixed,
    /// One parameter `zeta` scaling every ellipse about its centre.
    InclusionScaling { ellipses: Vec<Ellipse>, zeta_bounds: [f64; 2] },
    /// Two parameters `(v_void, kappa)`: void volume fraction
    /// `v_void = n pi a b` over `n` holes and aspect ratio `kappa = b / a`.
    /// Each hole keeps its centre and rotation.
    VoidShape {
        centers: Vec<[f64; 2]>,
        angles: Vec<f64>,
        parent: [f64; 2],
        v_void_bounds: [f64; 2],
        kappa_bounds: [f64; 2],
    },
}

impl Parameterization {
    pub fn num_params(&self) -> usize {
        match self {
            Parameterization::Fixed => 0,
            Parameterization::InclusionScaling { .. } => 1,
            Parameterization::VoidShape { .. } => 2,
        }
    }

    pub fn parent_params(&self) -> GeometryParams {
        match self {
            Parameterization::Fixed => GeometryParams(vec![]),
            Parameterization::InclusionScaling { .. } => GeometryParams(vec![1.0]),
            Parameterization::VoidShape { parent, .. } => GeometryParams(parent.to_vec()),
        }
    }

    pub fn bounds(&self) -> Vec<[f64; 2]> {
        match self {
            Parameterization::Fixed => vec![],
            Parameterization::InclusionScaling { zeta_bounds, .. } => vec![*zeta_bounds],
            Parameterization::VoidShape { v_void_bounds, kappa_bounds, .. } => vec![*v_void_bounds, *kappa_bounds],
        }
    }

    pub fn parameter_names(&self) -> Vec<&'static str> {
        match self {
            Parameterization::Fixed => vec![],
            Parameterization::InclusionScaling { .. } => vec!["zeta"],
            Parameterization::VoidShape { .. } => vec!["v_void", "kappa"],
        }
    }

    pub fn check_arity(&self, mu: &GeometryParams) -> Result<()> {
        if mu.0.len() != self.num_params() {
            return Err(Error::Geometry(format!(
                "expected {} geometric parameters, got {}",
                self.num_params(),
                mu.0.len()
            )));
        }
        if mu.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Geometry(format!("non-finite geometric parameters {:?}", mu.0)));
        }
        Ok(())
    }

    /// Checks that `mu` lies in the declared parameter box.
    pub fn check_bounds(&self, mu: &GeometryParams) -> Result<()> {
        self.check_arity(mu)?;
        for ((v, b), name) in mu.0.iter().zip(self.bounds()).zip(self.parameter_names()) {
            if *v < b[0] - 1e-12 || *v > b[1] + 1e-12 {
                return Err(Error::Geometry(format!("{name} = {v} outside [{}, {}]", b[0], b[1])));
            }
        }
        Ok(())
    }

    pub fn in_bounds(&self, mu: &GeometryParams) -> bool {
        self.check_bounds(mu).is_ok()
    }

    /// Interface ellipses of the parent geometry.
    pub fn parent_ellipses(&self) -> Vec<Ellipse> {
        self.ellipses(&self.parent_params()).expect("parent parameters are admissible")
    }

    /// Interface ellipses for parameters `mu`.
    pub fn ellipses(&self, mu: &GeometryParams) -> Result<Vec<Ellipse>> {
        self.check_arity(mu)?;
        match self {
            Parameterization::Fixed => Ok(vec![]),
            Parameterization::InclusionScaling { ellipses, .. } => {
                let zeta = mu.0[0];
                if zeta <= 0.0 {
                    return Err(Error::Geometry(format!("zeta must be positive, got {zeta}")));
                }
                Ok(ellipses.iter().map(|e| e.scaled(zeta)).collect())
            }
            Parameterization::VoidShape { centers, angles, .. } => {
                let (a, b) = void_axes(centers.len(), mu.0[0], mu.0[1])?;
                Ok(centers
                    .iter()
                    .zip(angles)
                    .map(|(c, ang)| Ellipse { center: *c, a, b, angle: *ang })
                    .collect())
            }
        }
    }
}

/// Semi-axes `(a, b)` of `holes` identical voids with total area fraction
/// `v_void` and aspect ratio `kappa = b / a`.
pub fn void_axes(holes: usize, v_void: f64, kappa: f64) -> Result<(f64, f64)> {
    if !(v_void > 0.0 && kappa > 0.0) {
        return Err(Error::Geometry(format!("v_void = {v_void} and kappa = {kappa} must be positive")));
    }
    let a = (v_void / (holes as f64 * PI * kappa)).sqrt();
    Ok((a, kappa * a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parametric_angle_inverts_point() {
        let e = Ellipse { center: [0.3, 0.6], a: 0.2, b: 0.1, angle: 0.7 };
        for k in 0..12 {
            let th = -PI + 0.5 * k as f64 + 0.1;
            let th = (th + PI).rem_euclid(2.0 * PI) - PI;
            let back = e.parametric_angle(e.point(th));
            assert!((back - th).abs() < 1e-12);
        }
    }

    #[test]
    fn ray_point_lies_on_ellipse_and_ray() {
        let e = Ellipse { center: [0.5, 0.5], a: 0.3, b: 0.15, angle: 0.4 };
        for k in 0..16 {
            let phi = k as f64 * PI / 8.0;
            let p = e.ray_point(phi);
            let back = e.point(e.parametric_angle(p));
            assert!((p[0] - back[0]).abs() < 1e-12 && (p[1] - back[1]).abs() < 1e-12);
            let dir = (p[1] - 0.5).atan2(p[0] - 0.5);
            let d = (dir - phi).rem_euclid(2.0 * PI);
            assert!(d < 1e-12 || (2.0 * PI - d) < 1e-12);
        }
    }

    #[test]
    fn four_void_axes_reproduce_fraction() {
        let (a, b) = void_axes(4, 0.45, 1.25).unwrap();
        assert!((4.0 * PI * a * b - 0.45).abs() < 1e-14);
        assert!((b / a - 1.25).abs() < 1e-14);
        assert!((a - (0.45 / (4.0 * PI * 1.25)).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn bounds_are_enforced_on_request() {
        let p = Parameterization::InclusionScaling { ellipses: vec![], zeta_bounds: [0.5, 1.2] };
        assert!(p.in_bounds(&GeometryParams(vec![1.0])));
        assert!(!p.in_bounds(&GeometryParams(vec![5.0])));
        assert!(p.check_arity(&GeometryParams(vec![1.0, 2.0])).is_err());
    }
}
