//! Hyper-reduced RVE solver: Galerkin projection on a fluctuation basis,
//! integration over a sparse cubature rule, reduced effective stress,
//! stiffness and shape sensitivities.

use crate::ecm::{mode_gradients, EcmRule};
use crate::error::{Error, Result};
use crate::geometry::{GeometryParams, Parameterization};
use crate::material::{MaterialState, PlasticityParams};
use crate::microfem::{eval_point, fd_sensitivity, MacroLoad, NewtonSettings, RegionMaterials, Rve};
use crate::morph::{MorphField, MorphOperator};
use crate::podkit::ReducedBasis;
use crate::tensor::{self, M2, T4};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Provenance of a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub n_train: usize,
    /// Number of weighted-stress modes used for the cubature.
    pub l: usize,
    pub eps: f64,
    pub volume_row: bool,
    pub parameterization: Parameterization,
    /// Bounds of the stretch components `[U_xx, U_yy, U_xy]` sampled in training.
    pub load_bounds: Vec<[f64; 2]>,
    pub seed: u64,
}

impl TrainingMeta {
    /// Metadata for a model not produced by the offline pipeline.
    pub fn untrained(parameterization: Parameterization) -> Self {
        TrainingMeta { n_train: 0, l: 0, eps: 0.0, volume_row: false, parameterization, load_bounds: vec![], seed: 0 }
    }
}

/// Sealed reduced model: basis, cubature rule and everything needed online.
#[derive(Clone, Debug, PartialEq)]
pub struct RomModel {
    pub basis: ReducedBasis,
    pub rule: EcmRule,
    /// Parent-domain mode gradients at the rule points, `[p * N + i]`.
    pub gradients: Vec<[f64; 4]>,
    pub point_params: Vec<PlasticityParams>,
    pub materials: RegionMaterials,
    pub fingerprint: String,
    pub num_full_points: usize,
    pub cell_volume: f64,
    pub meta: TrainingMeta,
}

pub fn build_rom(basis: ReducedBasis, rule: EcmRule, rve: &Rve, materials: &RegionMaterials, meta: TrainingMeta) -> Result<RomModel> {
    if basis.dim != rve.num_dofs() {
        return Err(Error::Model(format!("basis of length {} for {} fluctuation dofs", basis.dim, rve.num_dofs())));
    }
    if basis.is_empty() {
        return Err(Error::Model("empty fluctuation basis".into()));
    }
    let nq = rve.num_points();
    rule.validate(nq)?;
    let n = basis.len();
    let all = mode_gradients(&rve.mesh, &rve.quad, &rve.dofs, &basis);
    let mut gradients = Vec::with_capacity(rule.len() * n);
    for &q in &rule.point_ids {
        gradients.extend((0..n).map(|i| all[i * nq + q]));
    }
    let point_params = rule.point_ids.iter().map(|&q| rve.point_params()[q]).collect();
    Ok(RomModel {
        basis,
        rule,
        gradients,
        point_params,
        materials: materials.clone(),
        fingerprint: rve.mesh.fingerprint(),
        num_full_points: nq,
        cell_volume: rve.cell_volume,
        meta,
    })
}

impl RomModel {
    pub fn num_modes(&self) -> usize {
        self.basis.len()
    }

    pub fn num_rule_points(&self) -> usize {
        self.rule.len()
    }

    /// Fluctuation dofs `Phi a` on the full mesh.
    pub fn reconstruct(&self, a: &[f64]) -> Vec<f64> {
        self.basis.reconstruct(a)
    }

    pub fn check_mesh(&self, fingerprint: &str) -> Result<()> {
        if fingerprint != self.fingerprint {
            return Err(Error::Model(format!("model was trained on mesh {} but got mesh {fingerprint}", self.fingerprint)));
        }
        Ok(())
    }
}

/// Online solver for one geometry: morph factors are sliced to the rule
/// points and the mapped mode gradients are precomputed.
pub struct RomSolver<'a> {
    model: &'a RomModel,
    /// Mapped mode gradients stacked as `(4 Q) x N`.
    b: DMatrix<f64>,
    /// `w_p |det F_mu|` per rule point.
    wt: Vec<f64>,
}

/// Converged reduced load increment.
#[derive(Clone, Debug)]
pub struct RomStepResult {
    pub a: Vec<f64>,
    pub pbar: M2,
    pub p: Vec<M2>,
    pub tangents: Vec<T4>,
    pub states: Vec<MaterialState>,
    pub iterations: usize,
    pub residuals: Vec<f64>,
    k: DMatrix<f64>,
}

impl<'a> RomSolver<'a> {
    pub fn new(model: &'a RomModel, morph: &MorphField) -> Result<Self> {
        if morph.num_points() != model.num_full_points {
            return Err(Error::Dimension(format!(
                "morph field has {} points, model expects {}",
                morph.num_points(),
                model.num_full_points
            )));
        }
        let n = model.num_modes();
        let qn = model.num_rule_points();
        let mut b = DMatrix::zeros(4 * qn, n);
        let mut wt = Vec::with_capacity(qn);
        for (p, &q) in model.rule.point_ids.iter().enumerate() {
            let fi = &morph.f_inv[q];
            for i in 0..n {
                let g = tensor::unflat(&model.gradients[p * n + i]);
                let m = tensor::flat(&tensor::mul(&g, fi));
                for c in 0..4 {
                    b[(4 * p + c, i)] = m[c];
                }
            }
            wt.push(model.rule.weights[p] * morph.det[q].abs());
        }
        Ok(RomSolver { model, b, wt })
    }

    pub fn initial_states(&self) -> Vec<MaterialState> {
        vec![MaterialState::default(); self.model.num_rule_points()]
    }

    fn point_f(&self, p: usize, fbar: &M2, a: &[f64]) -> M2 {
        let mut f = tensor::flat(fbar);
        for (c, fc) in f.iter_mut().enumerate() {
            *fc += (0..a.len()).map(|i| self.b[(4 * p + c, i)] * a[i]).sum::<f64>();
        }
        tensor::unflat(&f)
    }

    pub fn solve_step(
        &self,
        committed: &[MaterialState],
        fbar: &M2,
        a0: &[f64],
        settings: &NewtonSettings,
        step: usize,
    ) -> Result<RomStepResult> {
        let mut a = a0.to_vec();
        let mut history = Vec::new();
        let mut first = None;
        for it in 0..=settings.max_iter {
            let asm = self.assemble(committed, fbar, &a)?;
            let norm = asm.f.norm();
            history.push(norm);
            let r0 = *first.get_or_insert(norm);
            if !norm.is_finite() {
                break;
            }
            if settings.converged(r0, norm) {
                let pbar = self.average(&asm.p);
                return Ok(RomStepResult {
                    a,
                    pbar,
                    p: asm.p,
                    tangents: asm.tangents,
                    states: asm.states,
                    iterations: it,
                    residuals: history,
                    k: asm.k,
                });
            }
            if it == settings.max_iter {
                break;
            }
            let da = asm.k.lu().solve(&(-&asm.f)).ok_or_else(|| Error::Singular("reduced stiffness is singular".into()))?;
            if da.iter().any(|v| !v.is_finite()) {
                return Err(Error::Singular("reduced Newton update is not finite".into()));
            }
            for (x, d) in a.iter_mut().zip(da.iter()) {
                *x += d;
            }
        }
        Err(Error::NonConvergence { step, iterations: history.len() - 1, history })
    }

    /// Effective stress from the cubature rule.
    pub fn average(&self, p: &[M2]) -> M2 {
        let mut out = [[0.0; 2]; 2];
        for (pq, w) in p.iter().zip(&self.wt) {
            out = tensor::add(&out, &tensor::scale(pq, *w));
        }
        tensor::scale(&out, 1.0 / self.model.cell_volume)
    }

    /// Effective stiffness from four reduced tangent problems with the
    /// converged reduced stiffness.
    pub fn effective_stiffness(&self, step: &RomStepResult) -> Result<T4> {
        let n = self.model.num_modes();
        let mut rhs = DMatrix::zeros(n, 4);
        for (p, a4) in step.tangents.iter().enumerate() {
            for i in 0..n {
                for kl in 0..4 {
                    let v: f64 = (0..4).map(|c| self.b[(4 * p + c, i)] * a4[c][kl]).sum();
                    rhs[(i, kl)] -= v * self.wt[p];
                }
            }
        }
        let qs = step.k.clone().lu().solve(&rhs).ok_or_else(|| Error::Singular("reduced tangent problem is singular".into()))?;
        let mut out = [[0.0; 4]; 4];
        for (p, a4) in step.tangents.iter().enumerate() {
            for kl in 0..4 {
                let mut h = [0.0; 4];
                h[kl] = 1.0;
                for (c, hc) in h.iter_mut().enumerate() {
                    *hc += (0..n).map(|i| self.b[(4 * p + c, i)] * qs[(i, kl)]).sum::<f64>();
                }
                for ij in 0..4 {
                    out[ij][kl] += self.wt[p] * (0..4).map(|mn| a4[ij][mn] * h[mn]).sum::<f64>();
                }
            }
        }
        for v in out.iter_mut().flatten() {
            *v /= self.model.cell_volume;
        }
        Ok(out)
    }
}

struct RomAssembly {
    f: DVector<f64>,
    k: DMatrix<f64>,
    p: Vec<M2>,
    tangents: Vec<T4>,
    states: Vec<MaterialState>,
}

impl RomSolver<'_> {
    /// Reduced residual and stiffness at coefficients `a` with history
    /// frozen at `committed`.
    pub fn reduced_system(&self, committed: &[MaterialState], fbar: &M2, a: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let asm = self.assemble(committed, fbar, a)?;
        Ok((asm.f.as_slice().to_vec(), asm.k))
    }

    fn assemble(&self, committed: &[MaterialState], fbar: &M2, a: &[f64]) -> Result<RomAssembly> {
        let n = self.model.num_modes();
        let qn = self.model.num_rule_points();
        let mut f = DVector::zeros(n);
        let mut c = DMatrix::zeros(4 * qn, n);
        let mut p_all = Vec::with_capacity(qn);
        let mut tangents = Vec::with_capacity(qn);
        let mut states = Vec::with_capacity(qn);
        for p in 0..qn {
            let fq = self.point_f(p, fbar, a);
            let q = self.model.rule.point_ids[p];
            let (pk, a4, st) = eval_point(&fq, &committed[p], &self.model.point_params[p], true, q, q)?;
            let a4 = a4.expect("tangent requested");
            let w = self.wt[p];
            let pf = tensor::flat(&pk);
            for i in 0..n {
                f[i] += w * (0..4).map(|k| self.b[(4 * p + k, i)] * pf[k]).sum::<f64>();
                for r in 0..4 {
                    c[(4 * p + r, i)] = w * (0..4).map(|k| a4[r][k] * self.b[(4 * p + k, i)]).sum::<f64>();
                }
            }
            p_all.push(pk);
            tangents.push(a4);
            states.push(st);
        }
        let k = self.b.tr_mul(&c);
        Ok(RomAssembly { f, k, p: p_all, tangents, states })
    }
}

/// Converged quantities kept per reduced load step.
#[derive(Clone, Debug)]
pub struct RomStep {
    pub a: Vec<f64>,
    pub pbar: M2,
    pub states: Vec<MaterialState>,
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RomSolution {
    /// Index 0 is the undeformed initial state.
    pub steps: Vec<RomStep>,
    pub stiffness: BTreeMap<usize, T4>,
}

impl RomSolution {
    pub fn pbar(&self) -> Vec<M2> {
        self.steps.iter().map(|s| s.pbar).collect()
    }
}

pub fn rom_solve(
    model: &RomModel,
    morph: &MorphField,
    load: &MacroLoad,
    settings: &NewtonSettings,
    stiffness_at: &[usize],
) -> Result<RomSolution> {
    let solver = RomSolver::new(model, morph)?;
    let mut states = solver.initial_states();
    let mut a = vec![0.0; model.num_modes()];
    let mut steps = vec![RomStep { a: a.clone(), pbar: [[0.0; 2]; 2], states: states.clone(), iterations: 0, residuals: vec![] }];
    let mut stiffness = BTreeMap::new();
    for (k, fbar) in load.steps.iter().enumerate().skip(1) {
        let res = solver.solve_step(&states, fbar, &a, settings, k)?;
        if stiffness_at.contains(&k) {
            stiffness.insert(k, solver.effective_stiffness(&res)?);
        }
        a = res.a.clone();
        states = res.states.clone();
        steps.push(RomStep { a: res.a, pbar: res.pbar, states: res.states, iterations: res.iterations, residuals: res.residuals });
    }
    if stiffness_at.contains(&0) {
        let res = solver.solve_step(&solver.initial_states(), &tensor::I2, &vec![0.0; model.num_modes()], settings, 0)?;
        stiffness.insert(0, solver.effective_stiffness(&res)?);
    }
    Ok(RomSolution { steps, stiffness })
}

/// Central-difference `dP/dmu_k` of the reduced model at every load step.
pub fn rom_sensitivity(
    model: &RomModel,
    op: &MorphOperator,
    mu: &GeometryParams,
    load: &MacroLoad,
    h: f64,
    settings: &NewtonSettings,
) -> Result<Vec<Vec<M2>>> {
    fd_sensitivity(op, mu, h, |m| {
        let morph = op.solve_morph(m)?;
        Ok(rom_solve(model, &morph, load, settings, &[])?.pbar())
    })
}

/// Relative effective-stress error `sum |P - P_ref|_F / sum |P_ref|_F` over steps 1..K.
pub fn stress_error(p: &[M2], p_ref: &[M2]) -> Result<f64> {
    if p.len() != p_ref.len() {
        return Err(Error::Dimension(format!("{} steps against {} reference steps", p.len(), p_ref.len())));
    }
    let num: f64 = p.iter().zip(p_ref).skip(1).map(|(a, b)| tensor::norm(&tensor::sub(a, b))).sum();
    let den: f64 = p_ref.iter().skip(1).map(tensor::norm).sum();
    Ok(if den == 0.0 { num } else { num / den })
}

/// Relative fluctuation error in the norm over the morphed domain, steps 1..K.
pub fn fluctuation_error(rve: &Rve, morph: &MorphField, w: &[Vec<f64>], w_ref: &[Vec<f64>]) -> Result<f64> {
    if w.len() != w_ref.len() {
        return Err(Error::Dimension(format!("{} steps against {} reference steps", w.len(), w_ref.len())));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in w.iter().zip(w_ref).skip(1) {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        num += rve.v_norm_sq(morph, &d).sqrt();
        den += rve.v_norm_sq(morph, b).sqrt();
    }
    Ok(if den == 0.0 { num } else { num / den })
}
