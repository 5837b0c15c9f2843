//! J2 plasticity with linear isotropic hardening: the small-strain radial
//! return, its finite-strain extension through a multiplicative split and
//! logarithmic elastic strain, and the plane-strain elasticity tensor.
//!
//! Symmetric 3D tensors in the plane-strain setting are stored as
//! `[xx, yy, zz, xy]` (tensor, not engineering, shear).

use crate::error::{Error, Result};
use crate::tensor::{self, M2, T4};
use serde::{Deserialize, Serialize};

pub type Sym3 = [f64; 4];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlasticityParams {
    #[serde(rename = "E")]
    pub e: f64,
    pub nu: f64,
    pub sigma_y0: f64,
    #[serde(rename = "H")]
    pub h: f64,
}

impl PlasticityParams {
    pub fn new(e: f64, nu: f64, sigma_y0: f64, h: f64) -> Result<Self> {
        let p = PlasticityParams { e, nu, sigma_y0, h };
        p.validate()?;
        Ok(p)
    }

    /// Linear elastic phase: yield stress so large it is never reached.
    pub fn elastic(e: f64, nu: f64) -> Result<Self> {
        Self::new(e, nu, 1e12, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        lame(self.e, self.nu)?;
        if !(self.sigma_y0 > 0.0 && self.sigma_y0.is_finite()) {
            return Err(Error::MaterialParams(format!("sigma_y0 must be positive, got {}", self.sigma_y0)));
        }
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return Err(Error::MaterialParams(format!("H must be non-negative, got {}", self.h)));
        }
        Ok(())
    }

    /// Lamé constants `(lambda, mu)`.
    pub fn lame(&self) -> (f64, f64) {
        lame(self.e, self.nu).expect("validated parameters")
    }
}

/// Lamé constants `(lambda, mu)` from Young's modulus and Poisson's ratio.
pub fn lame(e: f64, nu: f64) -> Result<(f64, f64)> {
    if !(e > 0.0 && e.is_finite()) {
        return Err(Error::MaterialParams(format!("E must be positive, got {e}")));
    }
    if nu == 0.5 {
        return Err(Error::MaterialParams("nu = 0.5 is incompressible; the displacement formulation needs nu < 0.5".into()));
    }
    if !(nu > -1.0 && nu < 0.5) {
        return Err(Error::MaterialParams(format!("nu must lie in (-1, 0.5), got {nu}")));
    }
    Ok((e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)), e / (2.0 * (1.0 + nu))))
}

/// In-plane components of the isotropic elasticity tensor
/// `lambda d_ij d_kl + mu (d_ik d_jl + d_il d_jk)`.
pub fn elastic_tangent(e: f64, nu: f64) -> Result<T4> {
    let (lambda, mu) = lame(e, nu)?;
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let mut t = [[0.0; 4]; 4];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    t[2 * i + j][2 * k + l] = lambda * d(i, j) * d(k, l) + mu * (d(i, k) * d(j, l) + d(i, l) * d(j, k));
                }
            }
        }
    }
    Ok(t)
}

fn trace3(a: &Sym3) -> f64 {
    a[0] + a[1] + a[2]
}

fn ddot3(a: &Sym3, b: &Sym3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + 2.0 * a[3] * b[3]
}

fn dev3(a: &Sym3) -> Sym3 {
    let m = trace3(a) / 3.0;
    [a[0] - m, a[1] - m, a[2] - m, a[3]]
}

/// Von Mises equivalent `sqrt(3/2 dev(a):dev(a))`.
pub fn mises(a: &Sym3) -> f64 {
    let s = dev3(a);
    (1.5 * ddot3(&s, &s)).sqrt()
}

fn hooke(eps: &Sym3, lambda: f64, mu: f64) -> Sym3 {
    let tr = trace3(eps);
    [
        lambda * tr + 2.0 * mu * eps[0],
        lambda * tr + 2.0 * mu * eps[1],
        lambda * tr + 2.0 * mu * eps[2],
        2.0 * mu * eps[3],
    ]
}

/// Outcome of one radial-return step.
#[derive(Clone, Copy, Debug)]
struct Return {
    sigma: Sym3,
    dgamma: f64,
    /// Flow direction `sqrt(3/2) dev(sigma) / |dev(sigma)|`.
    r: Sym3,
    /// Unit deviatoric direction `dev(sigma) / |dev(sigma)|`.
    n: Sym3,
    q_trial: f64,
    f_trial: f64,
}

/// Radial return from the elastic trial strain `eps_e` with hardening variable `xi`.
fn radial_return(eps_e: &Sym3, xi: f64, p: &PlasticityParams) -> Return {
    let (lambda, mu) = p.lame();
    let trial = hooke(eps_e, lambda, mu);
    let s = dev3(&trial);
    let s_norm = ddot3(&s, &s).sqrt();
    let q_trial = (1.5f64).sqrt() * s_norm;
    let f_trial = q_trial - (p.sigma_y0 + p.h * xi);
    if f_trial <= 0.0 || s_norm == 0.0 {
        return Return { sigma: trial, dgamma: 0.0, r: [0.0; 4], n: [0.0; 4], q_trial, f_trial };
    }
    let dgamma = f_trial / (3.0 * mu + p.h);
    let n = s.map(|v| v / s_norm);
    let r = n.map(|v| (1.5f64).sqrt() * v);
    let mut sigma = trial;
    for k in 0..4 {
        sigma[k] -= 2.0 * mu * dgamma * r[k];
    }
    Return { sigma, dgamma, r, n, q_trial, f_trial }
}

/// Small-strain history: plastic strain and equivalent plastic strain.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SmallStrainState {
    pub eps_pl: Sym3,
    pub xi: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct SmallStrainUpdate {
    pub sigma: Sym3,
    /// In-plane consistent tangent `d sigma_ij / d eps_kl`.
    pub tangent: T4,
    pub state: SmallStrainState,
    pub dgamma: f64,
    pub f_trial: f64,
    /// Yield function evaluated at the returned stress and hardening.
    pub f_yield: f64,
}

/// Small-strain J2 update for a total strain (plane strain: pass `eps[2] = 0`).
pub fn j2_small_strain(eps: &Sym3, state: &SmallStrainState, p: &PlasticityParams) -> Result<SmallStrainUpdate> {
    if eps.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let (lambda, mu) = p.lame();
    let mut eps_e = *eps;
    for k in 0..4 {
        eps_e[k] -= state.eps_pl[k];
    }
    let ret = radial_return(&eps_e, state.xi, p);
    let mut new = *state;
    new.xi += ret.dgamma;
    for k in 0..4 {
        new.eps_pl[k] += ret.dgamma * ret.r[k];
    }
    let f_yield = mises(&ret.sigma) - (p.sigma_y0 + p.h * new.xi);

    let bulk = lambda + 2.0 * mu / 3.0;
    let (theta, theta_bar) = if ret.dgamma > 0.0 {
        let theta = 1.0 - 3.0 * mu * ret.dgamma / ret.q_trial;
        (theta, 3.0 * mu / (3.0 * mu + p.h) - (1.0 - theta))
    } else {
        (1.0, 0.0)
    };
    let n2 = [[ret.n[0], ret.n[3]], [ret.n[3], ret.n[1]]];
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let mut tangent = [[0.0; 4]; 4];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    let isym = 0.5 * (d(i, k) * d(j, l) + d(i, l) * d(j, k));
                    let idev = isym - d(i, j) * d(k, l) / 3.0;
                    tangent[2 * i + j][2 * k + l] = bulk * d(i, j) * d(k, l) + 2.0 * mu * theta * idev
                        - 2.0 * mu * theta_bar * n2[i][j] * n2[k][l];
                }
            }
        }
    }
    Ok(SmallStrainUpdate { sigma: ret.sigma, tangent, state: new, dgamma: ret.dgamma, f_trial: ret.f_trial, f_yield })
}

/// Finite-strain history at a material point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialState {
    /// In-plane block of the plastic deformation gradient.
    pub f_pl: M2,
    /// Out-of-plane plastic stretch.
    pub f_pl_zz: f64,
    /// Equivalent plastic strain.
    pub xi: f64,
}

impl Default for MaterialState {
    fn default() -> Self {
        MaterialState { f_pl: tensor::I2, f_pl_zz: 1.0, xi: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StressTangent {
    pub p: M2,
    pub a: T4,
}

/// How the intermediate-configuration stress is mapped to the first
/// Piola–Kirchhoff stress.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PiolaMap {
    /// `P = F_el S F_pl^-T`, work-conjugate to `F` (used by the solver).
    PushForward,
    /// `P = F_el^-1 S F_pl^-T`; kept only to demonstrate that it is not
    /// the derivative of the stored energy.
    InverseElastic,
}

/// Result of a stress evaluation at frozen start-of-step history.
#[derive(Clone, Copy, Debug)]
pub struct StressUpdate {
    pub p: M2,
    pub state: MaterialState,
    pub dgamma: f64,
    pub f_yield: f64,
    /// Kirchhoff-like stress on the intermediate configuration.
    pub sigma: Sym3,
}

/// First Piola–Kirchhoff stress and updated history for deformation `f`.
pub fn large_strain_stress(f: &M2, state: &MaterialState, p: &PlasticityParams) -> Result<StressUpdate> {
    large_strain_stress_with(f, state, p, PiolaMap::PushForward)
}

pub fn large_strain_stress_with(
    f: &M2,
    state: &MaterialState,
    p: &PlasticityParams,
    map: PiolaMap,
) -> Result<StressUpdate> {
    if f.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let det_f = tensor::det(f);
    if !(det_f > 0.0) {
        return Err(Error::InvertedConfiguration { det: det_f });
    }
    let fpl_inv = tensor::inv(&state.f_pl);
    let f_el = tensor::mul(f, &fpl_inv);
    let c = tensor::mul(&tensor::transpose(&f_el), &f_el);
    let eig = tensor::sym_eig(&c);
    if !(eig.values[1] > 0.0) || !eig.values[0].is_finite() {
        return Err(Error::InvertedConfiguration { det: eig.values[1] });
    }
    let [n1, n2] = eig.vectors;
    let (l1, l2) = (eig.values[0].ln(), eig.values[1].ln());
    let mut eps = [0.0; 4];
    for (lv, n) in [(l1, n1), (l2, n2)] {
        eps[0] += 0.5 * lv * n[0] * n[0];
        eps[1] += 0.5 * lv * n[1] * n[1];
        eps[3] += 0.5 * lv * n[0] * n[1];
    }
    // C_el,zz = f_pl_zz^-2
    eps[2] = -state.f_pl_zz.ln();

    let ret = radial_return(&eps, state.xi, p);
    let sig = [[ret.sigma[0], ret.sigma[3]], [ret.sigma[3], ret.sigma[1]]];
    let proj = |a: [f64; 2], b: [f64; 2]| {
        let t = [sig[0][0] * b[0] + sig[0][1] * b[1], sig[1][0] * b[0] + sig[1][1] * b[1]];
        a[0] * t[0] + a[1] * t[1]
    };
    // S = sigma : d ln C / d C in the spectral basis of C_el
    let s11 = proj(n1, n1) / eig.values[0];
    let s22 = proj(n2, n2) / eig.values[1];
    let s12 = tensor::ln_divided_difference(eig.values[0], eig.values[1]) * proj(n1, n2);
    let mut s = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            s[i][j] = s11 * n1[i] * n1[j] + s22 * n2[i] * n2[j] + s12 * (n1[i] * n2[j] + n2[i] * n1[j]);
        }
    }
    let left = match map {
        PiolaMap::PushForward => f_el,
        PiolaMap::InverseElastic => tensor::inv(&f_el),
    };
    let piola = tensor::mul(&tensor::mul(&left, &s), &tensor::transpose(&fpl_inv));

    let mut new = *state;
    if ret.dgamma > 0.0 {
        let r2 = [[ret.r[0], ret.r[3]], [ret.r[3], ret.r[1]]];
        let dg = ret.dgamma;
        let e = tensor::sym_fn(&r2, |x| (dg * x).exp());
        new.f_pl = tensor::mul(&e, &state.f_pl);
        new.f_pl_zz = (dg * ret.r[2]).exp() * state.f_pl_zz;
        new.xi += dg;
    }
    let f_yield = mises(&ret.sigma) - (p.sigma_y0 + p.h * new.xi);
    Ok(StressUpdate { p: piola, state: new, dgamma: ret.dgamma, f_yield, sigma: ret.sigma })
}

/// Stress, algorithmic tangent and updated history. The tangent is the
/// central finite difference of the stress map at the frozen input history.
pub fn large_strain_update(f: &M2, state: &MaterialState, p: &PlasticityParams) -> Result<(StressTangent, MaterialState)> {
    let up = large_strain_stress(f, state, p)?;
    let a = fd_tangent(f, state, p)?;
    Ok((StressTangent { p: up.p, a }, up.state))
}

/// Central-difference `dP/dF` at frozen history, step `1e-7 max(1, |F|)`.
pub fn fd_tangent(f: &M2, state: &MaterialState, p: &PlasticityParams) -> Result<T4> {
    let h = 1e-7 * tensor::norm(f).max(1.0);
    let mut a = [[0.0; 4]; 4];
    for kl in 0..4 {
        let mut fp = tensor::flat(f);
        let mut fm = fp;
        fp[kl] += h;
        fm[kl] -= h;
        let pp = large_strain_stress(&tensor::unflat(&fp), state, p)?.p;
        let pm = large_strain_stress(&tensor::unflat(&fm), state, p)?.p;
        for ij in 0..4 {
            a[ij][kl] = (tensor::flat(&pp)[ij] - tensor::flat(&pm)[ij]) / (2.0 * h);
        }
    }
    Ok(a)
}

/// Drives a single material point through a deformation history, committing
/// the state after every step.
pub fn material_point_history(history: &[M2], p: &PlasticityParams) -> Result<Vec<(StressTangent, MaterialState)>> {
    let mut state = MaterialState::default();
    let mut out = Vec::with_capacity(history.len());
    for f in history {
        let (st, next) = large_strain_update(f, &state, p)?;
        state = next;
        out.push((st, state));
    }
    Ok(out)
}
