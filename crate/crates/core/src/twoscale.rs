//! Two-scale driver: a plane-strain macro problem whose constitutive
//! response at every macro Gauss point is a micro solve, plus compliance
//! error metrics and the effective-property map of a parameterized RVE.

use crate::error::{Error, Result};
use crate::geometry::GeometryParams;
use crate::material::{elastic_tangent, MaterialState};
use crate::mesh::generate::rectangle;
use crate::mesh::{gauss_legendre_1d, DofMap, ElemKind, Mesh, QuadData};
use crate::microfem::{NewtonSettings, Rve};
use crate::morph::{MorphField, MorphOperator};
use crate::rom::{RomModel, RomSolver};
use crate::sparse::SparsePattern;
use crate::tensor::{self, M2, T4};
use rayon::prelude::*;
use std::time::Instant;

/// Default macro Newton settings: relative residual reduction of `1e-6`.
pub fn macro_newton_default() -> NewtonSettings {
    NewtonSettings { eps_rel: 1e-6, eps_abs: 1e-12, max_iter: 25 }
}

/// Effective stress and stiffness returned by one micro solve, with the
/// trial history that becomes the committed history once the macro step
/// converges.
#[derive(Clone, Debug)]
pub struct MicroResponse<H> {
    pub pbar: M2,
    pub stiffness: T4,
    pub history: H,
}

/// Constitutive response at macro Gauss points. Point indices follow the
/// macro quadrature layout.
pub trait MicroEngine: Sync {
    type History: Clone + Send + Sync;

    fn num_points(&self) -> usize;

    fn initial_history(&self, point: usize) -> Self::History;

    /// One load increment from the committed history of `point`.
    fn respond(&self, point: usize, committed: &Self::History, fbar: &M2, step: usize) -> Result<MicroResponse<Self::History>>;
}

/// `P = C : (F - I)` with a constant plane-strain elasticity tensor.
pub struct LinearElasticEngine {
    pub c: T4,
    pub points: usize,
}

impl LinearElasticEngine {
    pub fn new(e: f64, nu: f64, points: usize) -> Result<Self> {
        Ok(LinearElasticEngine { c: elastic_tangent(e, nu)?, points })
    }
}

impl MicroEngine for LinearElasticEngine {
    type History = ();

    fn num_points(&self) -> usize {
        self.points
    }

    fn initial_history(&self, _point: usize) {}

    fn respond(&self, _point: usize, _committed: &(), fbar: &M2, _step: usize) -> Result<MicroResponse<()>> {
        let h = tensor::sub(fbar, &tensor::I2);
        Ok(MicroResponse { pbar: tensor::t4_ddot(&self.c, &h), stiffness: self.c, history: () })
    }
}

/// Converged fluctuation and material states of one full micro problem.
#[derive(Clone, Debug)]
pub struct FullHistory {
    pub w: Vec<f64>,
    pub states: Vec<MaterialState>,
}

/// Full-order micro solves, one morphed geometry per macro point.
pub struct FullEngine<'a> {
    rve: &'a Rve,
    morphs: Vec<MorphField>,
    settings: NewtonSettings,
}

impl<'a> FullEngine<'a> {
    pub fn new(rve: &'a Rve, op: &MorphOperator, mus: &[GeometryParams], settings: NewtonSettings) -> Result<Self> {
        let morphs = mus.par_iter().map(|mu| op.solve_morph(mu)).collect::<Result<Vec<_>>>()?;
        Ok(FullEngine { rve, morphs, settings })
    }
}

impl MicroEngine for FullEngine<'_> {
    type History = FullHistory;

    fn num_points(&self) -> usize {
        self.morphs.len()
    }

    fn initial_history(&self, _point: usize) -> FullHistory {
        FullHistory { w: vec![0.0; self.rve.num_dofs()], states: vec![MaterialState::default(); self.rve.num_points()] }
    }

    fn respond(&self, point: usize, committed: &FullHistory, fbar: &M2, step: usize) -> Result<MicroResponse<FullHistory>> {
        let morph = &self.morphs[point];
        let r = self.rve.solve_step(morph, &committed.states, fbar, &committed.w, &self.settings, step)?;
        let stiffness = self.rve.effective_stiffness(morph, &r)?;
        Ok(MicroResponse { pbar: r.pbar, stiffness, history: FullHistory { w: r.w, states: r.points.states } })
    }
}

/// Reduced coordinates and rule-point states of one reduced micro problem.
#[derive(Clone, Debug)]
pub struct RomHistory {
    pub a: Vec<f64>,
    pub states: Vec<MaterialState>,
}

/// Hyper-reduced micro solves, one precomputed solver per macro point.
pub struct RomEngine<'a> {
    model: &'a RomModel,
    solvers: Vec<RomSolver<'a>>,
    settings: NewtonSettings,
    /// Macro points whose parameters lie outside the training bounds.
    pub extrapolated: Vec<usize>,
}

impl<'a> RomEngine<'a> {
    pub fn new(model: &'a RomModel, op: &MorphOperator, mus: &[GeometryParams], settings: NewtonSettings) -> Result<Self> {
        let solvers = mus
            .par_iter()
            .map(|mu| op.solve_morph(mu).and_then(|m| RomSolver::new(model, &m)))
            .collect::<Result<Vec<_>>>()?;
        let param = &model.meta.parameterization;
        let extrapolated: Vec<usize> = mus.iter().enumerate().filter(|(_, mu)| !param.in_bounds(mu)).map(|(i, _)| i).collect();
        if !extrapolated.is_empty() {
            log::warn!("{} macro points lie outside the training parameter bounds", extrapolated.len());
        }
        Ok(RomEngine { model, solvers, settings, extrapolated })
    }
}

impl MicroEngine for RomEngine<'_> {
    type History = RomHistory;

    fn num_points(&self) -> usize {
        self.solvers.len()
    }

    fn initial_history(&self, point: usize) -> RomHistory {
        RomHistory { a: vec![0.0; self.model.num_modes()], states: self.solvers[point].initial_states() }
    }

    fn respond(&self, point: usize, committed: &RomHistory, fbar: &M2, step: usize) -> Result<MicroResponse<RomHistory>> {
        let s = &self.solvers[point];
        let r = s.solve_step(&committed.states, fbar, &committed.a, &self.settings, step)?;
        let stiffness = s.effective_stiffness(&r)?;
        Ok(MicroResponse { pbar: r.pbar, stiffness, history: RomHistory { a: r.a, states: r.states } })
    }
}

/// Top-edge load magnitude per step; step 0 is unloaded.
pub fn load_unload_schedule(peak: f64, k: usize) -> Result<Vec<f64>> {
    if k == 0 || k % 2 != 0 {
        return Err(Error::InvalidArgument(format!("load/unload schedule needs an even step count, got {k}")));
    }
    let half = k / 2;
    Ok((0..=k).map(|s| peak * (if s <= half { s } else { k - s }) as f64 / half as f64).collect())
}

/// Rectangular plane-strain macro structure: bottom edge clamped, top edge
/// compressed by the parabolic traction `T(x) = T_bar (1 - (2x/W - 1)^2)`.
pub struct MacroProblem {
    pub mesh: Mesh,
    pub quad: QuadData,
    pub dofs: DofMap,
    pub width: f64,
    pub height: f64,
    /// `T_bar` per step; step 0 must be zero.
    pub schedule: Vec<f64>,
    pub settings: NewtonSettings,
    /// Node where the reported displacement is read (top edge midpoint).
    pub probe_node: usize,
    /// External force vector at `T_bar = 1`.
    unit_traction: Vec<f64>,
    elem_dofs: Vec<Vec<Option<usize>>>,
    pattern: SparsePattern,
}

impl MacroProblem {
    pub fn rectangle(nx: usize, ny: usize, width: f64, height: f64, schedule: Vec<f64>, settings: NewtonSettings) -> Result<Self> {
        let mesh = rectangle(nx, ny, [width, height], ElemKind::Quad8)?;
        Self::new(mesh, width, height, schedule, settings)
    }

    /// Macro problem on a quad8 mesh of `[0, W] x [0, H]`.
    pub fn new(mesh: Mesh, width: f64, height: f64, schedule: Vec<f64>, settings: NewtonSettings) -> Result<Self> {
        if mesh.kind != ElemKind::Quad8 {
            return Err(Error::Mesh("macro mesh must use quad8 elements".into()));
        }
        if schedule.first() != Some(&0.0) || schedule.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("traction schedule must start at zero and be finite".into()));
        }
        let tol = 1e-10 * height.max(width);
        let fixed: Vec<usize> = (0..mesh.num_nodes()).filter(|&n| mesh.nodes[n][1].abs() < tol).collect();
        if fixed.is_empty() {
            return Err(Error::Mesh("no nodes on the clamped bottom edge".into()));
        }
        let dofs = DofMap::with_fixed(mesh.num_nodes(), &fixed);
        let probe_node = (0..mesh.num_nodes())
            .find(|&n| (mesh.nodes[n][1] - height).abs() < tol && (mesh.nodes[n][0] - 0.5 * width).abs() < tol)
            .ok_or_else(|| Error::Mesh("no node at the top edge midpoint".into()))?;
        let elem_dofs: Vec<Vec<Option<usize>>> =
            mesh.elements().map(|el| el.iter().flat_map(|&n| [dofs.dof(n, 0), dofs.dof(n, 1)]).collect()).collect();
        let mut entries = Vec::new();
        for ed in &elem_dofs {
            for r in ed.iter().flatten() {
                for c in ed.iter().flatten() {
                    entries.push((*r, *c));
                }
            }
        }
        let pattern = SparsePattern::new(dofs.num_dofs(), &entries)?;
        let quad = mesh.quadrature();
        let mut p = MacroProblem {
            mesh,
            quad,
            dofs,
            width,
            height,
            schedule,
            settings,
            probe_node,
            unit_traction: Vec::new(),
            elem_dofs,
            pattern,
        };
        p.unit_traction = p.traction_vector(1.0);
        Ok(p)
    }

    pub fn num_points(&self) -> usize {
        self.quad.num_points()
    }

    pub fn num_steps(&self) -> usize {
        self.schedule.len() - 1
    }

    /// Physical location of every macro Gauss point.
    pub fn gauss_points(&self) -> &[[f64; 2]] {
        &self.quad.points
    }

    pub fn pattern(&self) -> &SparsePattern {
        &self.pattern
    }

    pub fn traction(&self, tbar: f64, x: f64) -> f64 {
        let s = 2.0 * x / self.width - 1.0;
        tbar * (1.0 - s * s)
    }

    /// Consistent nodal forces of the downward top-edge traction, by
    /// three-point Gauss quadrature along each quadratic edge.
    pub fn traction_vector(&self, tbar: f64) -> Vec<f64> {
        let tol = 1e-10 * self.height.max(self.width);
        let on_top = |n: usize| (self.mesh.nodes[n][1] - self.height).abs() < tol;
        let mut f = vec![0.0; self.dofs.num_dofs()];
        let gauss = gauss_legendre_1d(3);
        for el in self.mesh.elements() {
            for e in 0..4 {
                let edge = [el[e], el[4 + e], el[(e + 1) % 4]];
                if !edge.iter().all(|&n| on_top(n)) {
                    continue;
                }
                let xs = edge.map(|n| self.mesh.nodes[n]);
                for &(s, w) in &gauss {
                    let n = [0.5 * s * (s - 1.0), 1.0 - s * s, 0.5 * s * (s + 1.0)];
                    let dn = [s - 0.5, -2.0 * s, s + 0.5];
                    let x: f64 = (0..3).map(|a| n[a] * xs[a][0]).sum();
                    let dx: f64 = (0..3).map(|a| dn[a] * xs[a][0]).sum();
                    let dy: f64 = (0..3).map(|a| dn[a] * xs[a][1]).sum();
                    let t = self.traction(tbar, x) * w * dx.hypot(dy);
                    for a in 0..3 {
                        if let Some(d) = self.dofs.dof(edge[a], 1) {
                            f[d] -= t * n[a];
                        }
                    }
                }
            }
        }
        f
    }

    /// Load-weighted top-edge displacement `C = int T (-u_y) dx`.
    pub fn compliance(&self, tbar: f64, u: &[f64]) -> f64 {
        tbar * self.unit_traction.iter().zip(u).map(|(f, v)| f * v).sum::<f64>()
    }

    /// Displacement gradient at every macro point.
    fn point_gradients(&self, u: &[f64]) -> Vec<M2> {
        let nodal = self.dofs.expand(u);
        (0..self.num_points())
            .map(|q| {
                let el = self.mesh.element(self.quad.element_of(q));
                let mut h = [[0.0; 2]; 2];
                for (g, &n) in self.quad.grads_at(q).iter().zip(el) {
                    for i in 0..2 {
                        for j in 0..2 {
                            h[i][j] += nodal[n][i] * g[j];
                        }
                    }
                }
                h
            })
            .collect()
    }
}

/// Macro residual `f_int - f_ext`, stiffness values in pattern order and
/// trial micro histories.
pub struct MacroAssembly<H> {
    pub residual: Vec<f64>,
    pub stiffness: Vec<f64>,
    pub pbar: Vec<M2>,
    pub trial: Vec<H>,
}

pub fn macro_assemble<E: MicroEngine>(
    problem: &MacroProblem,
    engine: &E,
    committed: &[E::History],
    u: &[f64],
    tbar: f64,
    step: usize,
) -> Result<MacroAssembly<E::History>> {
    let nq = problem.num_points();
    if engine.num_points() != nq || committed.len() != nq || u.len() != problem.dofs.num_dofs() {
        return Err(Error::Dimension("macro problem, engine and state sizes disagree".into()));
    }
    let grads = problem.point_gradients(u);
    let responses = (0..nq)
        .into_par_iter()
        .map(|q| {
            let f = tensor::add(&tensor::I2, &grads[q]);
            engine.respond(q, &committed[q], &f, step).map_err(|e| Error::MicroFailure { step, point: q, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut residual: Vec<f64> = problem.unit_traction.iter().map(|f| -tbar * f).collect();
    let mut stiffness = Vec::with_capacity(problem.pattern.num_entries());
    let npe = problem.quad.nodes_per_element;
    let ppe = problem.quad.points_per_element;
    for (e, ed) in problem.elem_dofs.iter().enumerate() {
        let mut ke = vec![0.0; 4 * npe * npe];
        for q in e * ppe..(e + 1) * ppe {
            let r = &responses[q];
            let w = problem.quad.weights[q];
            let g = problem.quad.grads_at(q);
            for a in 0..npe {
                for i in 0..2 {
                    if let Some(d) = ed[2 * a + i] {
                        residual[d] += w * (r.pbar[i][0] * g[a][0] + r.pbar[i][1] * g[a][1]);
                    }
                    for b in 0..npe {
                        for k in 0..2 {
                            let mut v = 0.0;
                            for j in 0..2 {
                                for l in 0..2 {
                                    v += g[a][j] * r.stiffness[2 * i + j][2 * k + l] * g[b][l];
                                }
                            }
                            ke[(2 * a + i) * 2 * npe + 2 * b + k] += w * v;
                        }
                    }
                }
            }
        }
        for (r, dr) in ed.iter().enumerate() {
            if dr.is_none() {
                continue;
            }
            for (c, dc) in ed.iter().enumerate() {
                if dc.is_some() {
                    stiffness.push(ke[r * 2 * npe + c]);
                }
            }
        }
    }
    let (pbar, trial) = responses.into_iter().map(|r| (r.pbar, r.history)).unzip();
    Ok(MacroAssembly { residual, stiffness, pbar, trial })
}

/// Converged macro load step.
#[derive(Clone, Debug)]
pub struct MacroStep {
    pub tbar: f64,
    /// Reduced macro displacement vector.
    pub u: Vec<f64>,
    pub compliance: f64,
    /// Downward displacement of the probe node.
    pub probe_disp: f64,
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TwoScaleResult {
    /// Index 0 is the unloaded initial state.
    pub steps: Vec<MacroStep>,
    pub wall_time: f64,
    pub micro_solves: usize,
}

impl TwoScaleResult {
    pub fn compliance(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.compliance).collect()
    }
}

/// Load-stepped macro Newton. Micro histories are committed after every
/// converged macro step; a failed micro solve aborts the run.
pub fn solve_twoscale<E: MicroEngine>(problem: &MacroProblem, engine: &E) -> Result<TwoScaleResult> {
    let start = Instant::now();
    let nq = problem.num_points();
    let mut committed: Vec<E::History> = (0..nq).map(|q| engine.initial_history(q)).collect();
    let mut u = vec![0.0; problem.dofs.num_dofs()];
    let probe = problem.dofs.dof(problem.probe_node, 1);
    let record = |u: &[f64], tbar: f64, iterations, residuals| MacroStep {
        tbar,
        u: u.to_vec(),
        compliance: problem.compliance(tbar, u),
        probe_disp: probe.map_or(0.0, |d| -u[d]),
        iterations,
        residuals,
    };
    let mut steps = vec![record(&u, problem.schedule[0], 0, Vec::new())];
    let mut micro_solves = 0;
    let settings = &problem.settings;
    for (k, &tbar) in problem.schedule.iter().enumerate().skip(1) {
        let mut history = Vec::new();
        let mut first = None;
        let mut converged = None;
        for it in 0..=settings.max_iter {
            let asm = macro_assemble(problem, engine, &committed, &u, tbar, k)?;
            micro_solves += nq;
            let norm = asm.residual.iter().map(|v| v * v).sum::<f64>().sqrt();
            history.push(norm);
            let r0 = *first.get_or_insert(norm);
            if !norm.is_finite() {
                break;
            }
            if settings.converged(r0, norm) {
                converged = Some((asm.trial, it));
                break;
            }
            if it == settings.max_iter {
                break;
            }
            let lu = problem.pattern.factor(&asm.stiffness)?;
            let rhs: Vec<f64> = asm.residual.iter().map(|v| -v).collect();
            for (ui, d) in u.iter_mut().zip(lu.solve(&rhs)?) {
                *ui += d;
            }
        }
        let Some((trial, iterations)) = converged else {
            return Err(Error::NonConvergence { step: k, iterations: history.len() - 1, history });
        };
        committed = trial;
        log::debug!("macro step {k}: T = {tbar:.4}, {iterations} iterations");
        steps.push(record(&u, tbar, iterations, history));
    }
    Ok(TwoScaleResult { steps, wall_time: start.elapsed().as_secs_f64(), micro_solves })
}

/// Per-step relative compliance error against a reference run.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplianceErrors {
    /// `None` where the reference compliance vanishes.
    pub per_step: Vec<Option<f64>>,
    /// Mean over the steps with a defined error.
    pub mean: f64,
    pub excluded: Vec<usize>,
}

pub fn compliance_errors(c: &[f64], c_ref: &[f64]) -> Result<ComplianceErrors> {
    if c.len() != c_ref.len() {
        return Err(Error::Dimension(format!("{} steps against {} reference steps", c.len(), c_ref.len())));
    }
    let scale = c_ref.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut excluded = Vec::new();
    let per_step: Vec<Option<f64>> = c
        .iter()
        .zip(c_ref)
        .enumerate()
        .map(|(k, (v, r))| {
            if r.abs() <= 1e-12 * scale || *r == 0.0 {
                excluded.push(k);
                None
            } else {
                Some((v - r).abs() / r.abs())
            }
        })
        .collect();
    let defined: Vec<f64> = per_step.iter().flatten().copied().collect();
    let mean = if defined.is_empty() { 0.0 } else { defined.iter().sum::<f64>() / defined.len() as f64 };
    Ok(ComplianceErrors { per_step, mean, excluded })
}

/// Graded porous-structure parameters `(v_void, kappa)` at macro position `x`:
/// `kappa = 1.5 - 0.49 y`, `v_void = 0.4 + 0.1 (1 - x)^2`.
pub fn graded_void_params(x: [f64; 2]) -> GeometryParams {
    let kappa = 1.5 - (1.5 - 1.01) * x[1];
    let v_void = 0.4 + (0.5 - 0.4) * (1.0 - x[0]).powi(2);
    GeometryParams(vec![v_void, kappa])
}

/// Initial effective Poisson ratio and Young modulus of one geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveProperties {
    pub mu: GeometryParams,
    pub nu_eff: f64,
    pub e_eff: f64,
    /// Lateral stretch increment `F_xx - 1` at `P_xx = 0`.
    pub lateral: f64,
}

/// Small vertical compression `F_yy = 1 - delta` with free lateral
/// contraction: Newton on `F_xx` until `P_xx` vanishes.
pub fn effective_properties(rve: &Rve, morph: &MorphField, mu: GeometryParams, delta: f64, settings: &NewtonSettings) -> Result<EffectiveProperties> {
    let states = vec![MaterialState::default(); rve.num_points()];
    let w0 = vec![0.0; rve.num_dofs()];
    let mut fxx = 1.0;
    let mut history = Vec::new();
    for it in 0..settings.max_iter {
        let f = [[fxx, 0.0], [0.0, 1.0 - delta]];
        let r = rve.solve_step(morph, &states, &f, &w0, settings, it)?;
        let pxx = r.pbar[0][0];
        history.push(pxx.abs());
        if pxx.abs() <= 1e-12 * r.pbar[1][1].abs().max(f64::MIN_POSITIVE) {
            let du_x = fxx - 1.0;
            return Ok(EffectiveProperties { mu, nu_eff: du_x / delta, e_eff: r.pbar[1][1] / -delta, lateral: du_x });
        }
        let a = rve.effective_stiffness(morph, &r)?;
        fxx -= pxx / a[0][0];
    }
    Err(Error::NonConvergence { step: 0, iterations: history.len(), history })
}

/// Effective properties over a list of geometries.
pub fn micro_property_map(
    rve: &Rve,
    op: &MorphOperator,
    grid: &[GeometryParams],
    delta: f64,
    settings: &NewtonSettings,
) -> Result<Vec<EffectiveProperties>> {
    grid.par_iter()
        .map(|mu| {
            let morph = op.solve_morph(mu)?;
            effective_properties(rve, &morph, mu.clone(), delta, settings)
        })
        .collect()
}
