//! Full-order RVE solver on the parent mesh: periodic fluctuation field,
//! mapped weak form, Newton iteration, effective stress and stiffness, and
//! finite-difference shape sensitivities.

use crate::error::{Error, Result};
use crate::geometry::GeometryParams;
use crate::material::{large_strain_stress, large_strain_update, MaterialState, PlasticityParams};
use crate::mesh::{periodic_pairs, DofMap, Mesh, PeriodicPairing, QuadData};
use crate::morph::{MorphField, MorphOperator};
use crate::sparse::{SparseLu, SparsePattern};
use crate::tensor::{self, M2, T4};
use std::collections::BTreeMap;

/// Tolerance used to pair periodic boundary nodes.
pub const PAIRING_TOL: f64 = 1e-8;

/// Constitutive parameters per mesh region tag.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMaterials(pub BTreeMap<i64, PlasticityParams>);

impl RegionMaterials {
    pub fn uniform(p: PlasticityParams) -> Self {
        RegionMaterials(BTreeMap::from([(0, p), (1, p)]))
    }

    pub fn get(&self, region: i64) -> Result<&PlasticityParams> {
        self.0.get(&region).ok_or_else(|| Error::Config(format!("no material given for mesh region {region}")))
    }
}

/// Symmetric stretch tensor from its three independent components.
pub fn stretch(uxx: f64, uyy: f64, uxy: f64) -> M2 {
    [[uxx, uxy], [uxy, uyy]]
}

/// Macroscopic deformation schedule. Entry 0 is always the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroLoad {
    pub steps: Vec<M2>,
}

impl MacroLoad {
    pub fn new(steps: Vec<M2>) -> Result<Self> {
        if steps.first() != Some(&tensor::I2) {
            return Err(Error::InvalidArgument("load schedule must start from the identity".into()));
        }
        if let Some((k, f)) = steps.iter().enumerate().find(|(_, f)| !(tensor::det(f) > 0.0)) {
            return Err(Error::InvalidArgument(format!("load step {k} has det F = {}", tensor::det(f))));
        }
        Ok(MacroLoad { steps })
    }

    /// `I + s_k (U - I)` for a scalar schedule `s` with `s_0 = 0`.
    pub fn from_scalars(ubar: &M2, s: impl IntoIterator<Item = f64>) -> Result<Self> {
        let dev = tensor::sub(ubar, &tensor::I2);
        Self::new(s.into_iter().map(|s| tensor::add(&tensor::I2, &tensor::scale(&dev, s))).collect())
    }

    /// `0 -> U -> -U -> 0` in `k` steps (quarters of `k / 4`), where `-U` is
    /// the reflection `I - (U - I)`.
    pub fn triangle_wave(ubar: &M2, k: usize) -> Result<Self> {
        if k == 0 || k % 4 != 0 {
            return Err(Error::InvalidArgument(format!("triangle wave needs a positive multiple of 4 steps, got {k}")));
        }
        let q = (k / 4) as f64;
        Self::from_scalars(
            ubar,
            (0..=k).map(|i| {
                let t = i as f64 / q;
                if t <= 1.0 {
                    t
                } else if t <= 3.0 {
                    2.0 - t
                } else {
                    t - 4.0
                }
            }),
        )
    }

    /// `0 -> U` in `k / 2` steps, then back to `0`.
    pub fn load_unload(ubar: &M2, k: usize) -> Result<Self> {
        if k == 0 || k % 2 != 0 {
            return Err(Error::InvalidArgument(format!("load/unload needs a positive even step count, got {k}")));
        }
        let h = (k / 2) as f64;
        Self::from_scalars(ubar, (0..=k).map(|i| if (i as f64) <= h { i as f64 / h } else { 2.0 - i as f64 / h }))
    }

    /// `0 -> U` linearly in `k` steps.
    pub fn ramp(ubar: &M2, k: usize) -> Result<Self> {
        Self::from_scalars(ubar, (0..=k).map(|i| i as f64 / k.max(1) as f64))
    }

    /// Number of load steps after the initial state.
    pub fn num_steps(&self) -> usize {
        self.steps.len() - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonSettings {
    /// Tolerance relative to the residual norm of the first iteration.
    pub eps_rel: f64,
    /// Absolute floor on the residual norm.
    pub eps_abs: f64,
    pub max_iter: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings { eps_rel: 1e-8, eps_abs: 1e-12, max_iter: 25 }
    }
}

impl NewtonSettings {
    pub fn converged(&self, first: f64, current: f64) -> bool {
        current <= (self.eps_rel * first).max(self.eps_abs)
    }
}

/// Stress, tangent and trial history at every quadrature point.
#[derive(Clone, Debug, Default)]
pub struct PointFields {
    pub p: Vec<M2>,
    /// Empty when only residuals were requested.
    pub a: Vec<T4>,
    pub states: Vec<MaterialState>,
}

pub struct Assembly {
    pub f: Vec<f64>,
    /// Values in the order of the solver's sparse pattern.
    pub k: Option<Vec<f64>>,
    pub points: PointFields,
}

/// Evaluates the material law at one point, with the tangent if asked.
pub(crate) fn eval_point(
    f: &M2,
    state: &MaterialState,
    p: &PlasticityParams,
    tangent: bool,
    element: usize,
    point: usize,
) -> Result<(M2, Option<T4>, MaterialState)> {
    let wrap = |e: Error| Error::MaterialAt { element, point, source: Box::new(e) };
    if tangent {
        let (st, s) = large_strain_update(f, state, p).map_err(wrap)?;
        Ok((st.p, Some(st.a), s))
    } else {
        let up = large_strain_stress(f, state, p).map_err(wrap)?;
        Ok((up.p, None, up.state))
    }
}

/// `F_mu^-T G` for every node of the element at quadrature point `q`.
#[inline]
pub(crate) fn mapped_grads(parent: &[[f64; 2]], f_inv: &M2, out: &mut [[f64; 2]]) {
    for (o, g) in out.iter_mut().zip(parent) {
        *o = [g[0] * f_inv[0][0] + g[1] * f_inv[1][0], g[0] * f_inv[0][1] + g[1] * f_inv[1][1]];
    }
}

/// Parent RVE mesh with periodic fluctuation unknowns and per-point materials.
pub struct Rve {
    pub mesh: Mesh,
    pub quad: QuadData,
    pub pairing: PeriodicPairing,
    pub dofs: DofMap,
    /// Measure of the RVE cell used to normalize averages (holes included).
    pub cell_volume: f64,
    point_params: Vec<PlasticityParams>,
    elem_dofs: Vec<Option<usize>>,
    pattern: SparsePattern,
}

impl Rve {
    pub fn new(mesh: Mesh, materials: &RegionMaterials) -> Result<Self> {
        let pairing = periodic_pairs(&mesh, PAIRING_TOL)?;
        let dofs = DofMap::periodic(&mesh, &pairing);
        let quad = mesh.quadrature();
        let mut point_params = Vec::with_capacity(quad.num_points());
        for q in 0..quad.num_points() {
            point_params.push(*materials.get(mesh.regions[quad.element_of(q)])?);
        }
        let npe = mesh.kind.nodes_per_element();
        let mut elem_dofs = Vec::with_capacity(mesh.num_elements() * 2 * npe);
        for el in mesh.elements() {
            for &n in el {
                elem_dofs.push(dofs.dof(n, 0));
                elem_dofs.push(dofs.dof(n, 1));
            }
        }
        let mut entries = Vec::new();
        for ed in elem_dofs.chunks_exact(2 * npe) {
            for r in ed.iter().flatten() {
                for c in ed.iter().flatten() {
                    entries.push((*r, *c));
                }
            }
        }
        let pattern = SparsePattern::new(dofs.num_dofs(), &entries)?;
        Ok(Rve { mesh, quad, pairing, dofs, cell_volume: 1.0, point_params, elem_dofs, pattern })
    }

    pub fn num_dofs(&self) -> usize {
        self.dofs.num_dofs()
    }

    pub fn num_points(&self) -> usize {
        self.quad.num_points()
    }

    pub fn point_params(&self) -> &[PlasticityParams] {
        &self.point_params
    }

    pub fn pattern(&self) -> &SparsePattern {
        &self.pattern
    }

    /// Integration weight of point `q` on the morphed domain.
    #[inline]
    pub fn weight(&self, morph: &MorphField, q: usize) -> f64 {
        self.quad.weights[q] * morph.det[q].abs()
    }

    /// Residual and (optionally) tangent stiffness for fluctuation `w` (reduced vector).
    pub fn assemble(
        &self,
        morph: &MorphField,
        committed: &[MaterialState],
        fbar: &M2,
        w: &[f64],
        with_tangent: bool,
    ) -> Result<Assembly> {
        let npe = self.quad.nodes_per_element;
        let nqe = self.quad.points_per_element;
        let nd = 2 * npe;
        let nodal = self.dofs.expand(w);
        let nq = self.num_points();
        let mut f = vec![0.0; self.num_dofs()];
        let mut kvals = if with_tangent { Vec::with_capacity(self.pattern.num_entries()) } else { Vec::new() };
        let mut points = PointFields {
            p: Vec::with_capacity(nq),
            a: if with_tangent { Vec::with_capacity(nq) } else { Vec::new() },
            states: Vec::with_capacity(nq),
        };
        let mut g = vec![[0.0; 2]; npe];
        let mut fe = vec![0.0; nd];
        let mut ke = vec![0.0; nd * nd];
        for (e, el) in self.mesh.elements().enumerate() {
            fe.iter_mut().for_each(|v| *v = 0.0);
            if with_tangent {
                ke.iter_mut().for_each(|v| *v = 0.0);
            }
            for lq in 0..nqe {
                let q = e * nqe + lq;
                mapped_grads(self.quad.grads_at(q), &morph.f_inv[q], &mut g);
                let mut fq = *fbar;
                for (a, &n) in el.iter().enumerate() {
                    let u = nodal[n];
                    for i in 0..2 {
                        fq[i][0] += u[i] * g[a][0];
                        fq[i][1] += u[i] * g[a][1];
                    }
                }
                let (p, a4, st) = eval_point(&fq, &committed[q], &self.point_params[q], with_tangent, e, q)?;
                let wt = self.weight(morph, q);
                for a in 0..npe {
                    for i in 0..2 {
                        fe[2 * a + i] += (p[i][0] * g[a][0] + p[i][1] * g[a][1]) * wt;
                    }
                }
                if let Some(a4) = a4 {
                    // B[(a,i)][(j,l)] = sum_k g_ak A_ikjl
                    for a in 0..npe {
                        for i in 0..2 {
                            let mut bil = [0.0; 4];
                            for (jl, b) in bil.iter_mut().enumerate() {
                                *b = (g[a][0] * a4[2 * i][jl] + g[a][1] * a4[2 * i + 1][jl]) * wt;
                            }
                            let row = &mut ke[(2 * a + i) * nd..(2 * a + i + 1) * nd];
                            for b in 0..npe {
                                for j in 0..2 {
                                    row[2 * b + j] += bil[2 * j] * g[b][0] + bil[2 * j + 1] * g[b][1];
                                }
                            }
                        }
                    }
                    points.a.push(a4);
                }
                points.p.push(p);
                points.states.push(st);
            }
            let ed = &self.elem_dofs[e * nd..(e + 1) * nd];
            for (r, dr) in ed.iter().enumerate() {
                let Some(dr) = dr else { continue };
                f[*dr] += fe[r];
                if with_tangent {
                    for (c, dc) in ed.iter().enumerate() {
                        if dc.is_some() {
                            kvals.push(ke[r * nd + c]);
                        }
                    }
                }
            }
        }
        Ok(Assembly { f, k: with_tangent.then_some(kvals), points })
    }

    /// Volume average of a per-point stress field on the morphed domain.
    pub fn effective_stress(&self, morph: &MorphField, p: &[M2]) -> M2 {
        let mut out = [[0.0; 2]; 2];
        for (q, pq) in p.iter().enumerate() {
            let wt = self.weight(morph, q);
            for i in 0..2 {
                for j in 0..2 {
                    out[i][j] += pq[i][j] * wt;
                }
            }
        }
        tensor::scale(&out, 1.0 / self.cell_volume)
    }

    /// One load increment: Newton from `w0` with history frozen at `committed`.
    pub fn solve_step(
        &self,
        morph: &MorphField,
        committed: &[MaterialState],
        fbar: &M2,
        w0: &[f64],
        settings: &NewtonSettings,
        step: usize,
    ) -> Result<StepResult> {
        let mut w = w0.to_vec();
        let mut history = Vec::new();
        let mut first = None;
        for it in 0..=settings.max_iter {
            let asm = self.assemble(morph, committed, fbar, &w, true)?;
            let norm = asm.f.iter().map(|v| v * v).sum::<f64>().sqrt();
            history.push(norm);
            let r0 = *first.get_or_insert(norm);
            if !norm.is_finite() {
                break;
            }
            let kvals = asm.k.expect("tangent requested");
            let lu = self.pattern.factor(&kvals)?;
            if settings.converged(r0, norm) {
                let pbar = self.effective_stress(morph, &asm.points.p);
                return Ok(StepResult { w, points: asm.points, pbar, iterations: it, residuals: history, lu });
            }
            if it == settings.max_iter {
                break;
            }
            let rhs: Vec<f64> = asm.f.iter().map(|v| -v).collect();
            let dw = lu.solve(&rhs)?;
            for (wi, d) in w.iter_mut().zip(&dw) {
                *wi += d;
            }
        }
        Err(Error::NonConvergence { step, iterations: history.len() - 1, history })
    }

    /// Effective stiffness at a converged step from the four tangent problems.
    pub fn effective_stiffness(&self, morph: &MorphField, step: &StepResult) -> Result<T4> {
        let npe = self.quad.nodes_per_element;
        let mut g = vec![[0.0; 2]; npe];
        let mut rhs = vec![vec![0.0; self.num_dofs()]; 4];
        for (q, a4) in step.points.a.iter().enumerate() {
            let e = self.quad.element_of(q);
            let el = self.mesh.element(e);
            mapped_grads(self.quad.grads_at(q), &morph.f_inv[q], &mut g);
            let wt = self.weight(morph, q);
            for (a, &n) in el.iter().enumerate() {
                for i in 0..2 {
                    let Some(d) = self.dofs.dof(n, i) else { continue };
                    for (kl, r) in rhs.iter_mut().enumerate() {
                        r[d] -= (g[a][0] * a4[2 * i][kl] + g[a][1] * a4[2 * i + 1][kl]) * wt;
                    }
                }
            }
        }
        let qs = step.lu.solve_many(&rhs)?;
        let qn: Vec<Vec<[f64; 2]>> = qs.iter().map(|q| self.dofs.expand(q)).collect();
        let mut out = [[0.0; 4]; 4];
        for (q, a4) in step.points.a.iter().enumerate() {
            let el = self.mesh.element(self.quad.element_of(q));
            mapped_grads(self.quad.grads_at(q), &morph.f_inv[q], &mut g);
            let wt = self.weight(morph, q);
            for kl in 0..4 {
                // E_kl + grad q_kl
                let mut h = [0.0; 4];
                h[kl] = 1.0;
                for (a, &n) in el.iter().enumerate() {
                    let v = qn[kl][n];
                    for m in 0..2 {
                        h[2 * m] += v[m] * g[a][0];
                        h[2 * m + 1] += v[m] * g[a][1];
                    }
                }
                for ij in 0..4 {
                    out[ij][kl] += wt * (0..4).map(|mn| a4[ij][mn] * h[mn]).sum::<f64>();
                }
            }
        }
        for row in out.iter_mut() {
            for v in row.iter_mut() {
                *v /= self.cell_volume;
            }
        }
        Ok(out)
    }

    /// Squared norm `int (w.w + grad w : grad w) dX` over the morphed domain.
    pub fn v_norm_sq(&self, morph: &MorphField, w: &[f64]) -> f64 {
        let nodal = self.dofs.expand(w);
        let npe = self.quad.nodes_per_element;
        let mut g = vec![[0.0; 2]; npe];
        let mut total = 0.0;
        for q in 0..self.num_points() {
            let el = self.mesh.element(self.quad.element_of(q));
            mapped_grads(self.quad.grads_at(q), &morph.f_inv[q], &mut g);
            let vals = self.quad.values_at(q);
            let mut u = [0.0; 2];
            let mut gu = [[0.0; 2]; 2];
            for (a, &n) in el.iter().enumerate() {
                let x = nodal[n];
                for i in 0..2 {
                    u[i] += vals[a] * x[i];
                    for j in 0..2 {
                        gu[i][j] += x[i] * g[a][j];
                    }
                }
            }
            total += (u[0] * u[0] + u[1] * u[1] + tensor::ddot(&gu, &gu)) * self.weight(morph, q);
        }
        total
    }
}

/// Converged load increment.
pub struct StepResult {
    pub w: Vec<f64>,
    pub points: PointFields,
    pub pbar: M2,
    pub iterations: usize,
    pub residuals: Vec<f64>,
    lu: SparseLu,
}

/// Converged quantities kept per load step.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub w: Vec<f64>,
    pub pbar: M2,
    pub p: Vec<M2>,
    pub states: Vec<MaterialState>,
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RveSolution {
    /// Index 0 is the undeformed initial state.
    pub steps: Vec<StepRecord>,
    pub stiffness: BTreeMap<usize, T4>,
}

impl RveSolution {
    pub fn pbar(&self) -> Vec<M2> {
        self.steps.iter().map(|s| s.pbar).collect()
    }
}

/// Runs a full load schedule, committing histories after each converged step.
pub fn solve_rve(
    rve: &Rve,
    morph: &MorphField,
    load: &MacroLoad,
    settings: &NewtonSettings,
    stiffness_at: &[usize],
) -> Result<RveSolution> {
    let nq = rve.num_points();
    let mut states = vec![MaterialState::default(); nq];
    let mut w = vec![0.0; rve.num_dofs()];
    let initial = StepRecord {
        w: w.clone(),
        pbar: [[0.0; 2]; 2],
        p: vec![[[0.0; 2]; 2]; nq],
        states: states.clone(),
        iterations: 0,
        residuals: vec![],
    };
    let mut steps = vec![initial];
    let mut stiffness = BTreeMap::new();
    for (k, fbar) in load.steps.iter().enumerate().skip(1) {
        let res = rve.solve_step(morph, &states, fbar, &w, settings, k)?;
        if stiffness_at.contains(&k) {
            stiffness.insert(k, rve.effective_stiffness(morph, &res)?);
        }
        w = res.w.clone();
        states = res.points.states.clone();
        steps.push(StepRecord {
            w: res.w,
            pbar: res.pbar,
            p: res.points.p,
            states: res.points.states,
            iterations: res.iterations,
            residuals: res.residuals,
        });
    }
    if stiffness_at.contains(&0) {
        let res = rve.solve_step(morph, &vec![MaterialState::default(); nq], &tensor::I2, &vec![0.0; rve.num_dofs()], settings, 0)?;
        stiffness.insert(0, rve.effective_stiffness(morph, &res)?);
    }
    Ok(RveSolution { steps, stiffness })
}

/// Central-difference sensitivity `dP/dmu_k` at every load step, from full
/// re-solves at `mu +- h e_k` (one-sided at the parameter bounds).
pub fn effective_sensitivity(
    rve: &Rve,
    op: &MorphOperator,
    mu: &GeometryParams,
    load: &MacroLoad,
    h: f64,
    settings: &NewtonSettings,
) -> Result<Vec<Vec<M2>>> {
    fd_sensitivity(op, mu, h, |m| {
        let morph = op.solve_morph(m)?;
        Ok(solve_rve(rve, &morph, load, settings, &[])?.pbar())
    })
}

/// Shared finite-difference driver over geometric parameters.
pub(crate) fn fd_sensitivity(
    op: &MorphOperator,
    mu: &GeometryParams,
    h: f64,
    solve: impl Fn(&GeometryParams) -> Result<Vec<M2>>,
) -> Result<Vec<Vec<M2>>> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    let param = op.parameterization();
    param.check_bounds(mu)?;
    let bounds = param.bounds();
    let mut out = Vec::with_capacity(mu.0.len());
    for k in 0..mu.0.len() {
        let [lo, hi] = bounds[k];
        let up = mu.0[k] + h <= hi + 1e-12;
        let down = mu.0[k] - h >= lo - 1e-12;
        let at = |s: f64| {
            let mut m = mu.clone();
            m.0[k] += s;
            solve(&m)
        };
        let (plus, minus, span) = match (up, down) {
            (true, true) => (at(h)?, at(-h)?, 2.0 * h),
            (true, false) => (at(h)?, solve(mu)?, h),
            (false, true) => (solve(mu)?, at(-h)?, h),
            (false, false) => {
                return Err(Error::InvalidArgument(format!("step {h} does not fit in the bounds of parameter {k}")))
            }
        };
        out.push(plus.iter().zip(&minus).map(|(a, b)| tensor::scale(&tensor::sub(a, b), 1.0 / span)).collect());
    }
    Ok(out)
}
