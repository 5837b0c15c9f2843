//! Acceptance criteria 1-9. Every test writes one PASS/FAIL line straight to
//! stdout (outside libtest's capture) before asserting, so a plain
//! `cargo test --test acceptance` shows the whole scorecard.

use podecm::ecm::EcmRule;
use podecm::geometry::{GeometryParams, Parameterization};
use podecm::material::{j2_small_strain, large_strain_stress, large_strain_update, material_point_history, MaterialState, PlasticityParams, SmallStrainState};
use podecm::mesh::generate::{composite_rve, porous_rve, single_inclusion_rve, Resolution};
use podecm::microfem::{solve_rve, stretch, MacroLoad, NewtonSettings, RegionMaterials, Rve};
use podecm::morph::{assemble_aux, MorphOperator};
use podecm::offline::{collect_snapshots, draw_samples, train_rom, LoadProgram, LoadShape, RomSettings, Sample, SamplingScheme, Snapshots};
use podecm::podkit::{full_space, h1_gram};
use podecm::rom::{build_rom, rom_solve, stress_error, RomModel, RomSolver, TrainingMeta};
use podecm::store::{rom_from_container, rom_to_container, Array, Container};
use podecm::tensor::{self, M2, T4};
use podecm::twoscale::{compliance_errors, load_unload_schedule, macro_newton_default, micro_property_map, solve_twoscale, FullEngine, MacroProblem, RomEngine};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {id} {}: {name} ({detail})", if pass { "PASS" } else { "FAIL" });
    let _ = out.flush();
    assert!(pass, "criterion {id} failed: {detail}");
}

fn matrix() -> PlasticityParams {
    PlasticityParams::new(10.0, 0.3, 0.2, 5.0).unwrap()
}

fn composite_materials() -> RegionMaterials {
    let mut m = RegionMaterials::uniform(matrix());
    m.0.insert(1, PlasticityParams::elastic(100.0, 0.3).unwrap());
    m
}

fn tight() -> NewtonSettings {
    NewtonSettings { eps_rel: 1e-12, eps_abs: 1e-13, max_iter: 30 }
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n
}

fn t4_flat(a: &T4) -> Vec<f64> {
    a.iter().flatten().copied().collect()
}

fn m2_flat(a: &M2) -> Vec<f64> {
    tensor::flat(a).to_vec()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

// ---------------------------------------------------------------- 1

#[test]
fn c1_homogeneous_rve_matches_material_point() {
    let t0 = Instant::now();
    let (mesh, param) = single_inclusion_rve(Resolution::new(3, 1, 1)).unwrap();
    let rve = Rve::new(mesh.clone(), &RegionMaterials::uniform(matrix())).unwrap();
    let op = assemble_aux(&mesh, &param).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut histories: Vec<Vec<M2>> = vec![
        // elastic: amplitude well below first yield
        (1..=5).map(|k| stretch(1.0 + 2e-4 * k as f64, 1.0 - 1e-4 * k as f64, 5e-5 * k as f64)).collect(),
        (1..=5).map(|k| stretch(1.0 + 0.02 * k as f64, 1.0 - 0.015 * k as f64, 0.01 * k as f64)).collect(),
    ];
    for _ in 0..2 {
        histories.push((0..5).map(|_| stretch(rng.random_range(0.9..1.1), rng.random_range(0.9..1.1), rng.random_range(-0.1..0.1))).collect());
    }
    let (mut w_max, mut p_err, mut a_err) = (0.0f64, 0.0f64, 0.0f64);
    let mut plastic = false;
    for (h, hist) in histories.iter().enumerate() {
        let mu = if h % 2 == 0 { param.parent_params() } else { GeometryParams(vec![0.7]) };
        let morph = op.solve_morph(&mu).unwrap();
        let mut steps = vec![tensor::I2];
        steps.extend(hist.iter().copied());
        let load = MacroLoad::new(steps).unwrap();
        let all: Vec<usize> = (1..=5).collect();
        let sol = solve_rve(&rve, &morph, &load, &tight(), &all).unwrap();
        let driver = material_point_history(&load.steps, &matrix()).unwrap();
        for k in 1..=5 {
            w_max = w_max.max(rve.v_norm_sq(&morph, &sol.steps[k].w).sqrt());
            let (st, state) = &driver[k];
            plastic |= state.xi > 0.0;
            p_err = p_err.max(rel(&m2_flat(&sol.steps[k].pbar), &m2_flat(&st.p)));
            a_err = a_err.max(rel(&t4_flat(&sol.stiffness[&k]), &t4_flat(&st.a)));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = w_max < 1e-8 && p_err < 1e-6 && a_err < 1e-6 && plastic && secs < 10.0;
    report(1, "homogeneous RVE oracle", pass, format!("max |w|_V = {w_max:.2e}, P err = {p_err:.2e}, A err = {a_err:.2e}, plastic = {plastic}, {secs:.1} s"));
}

// ---------------------------------------------------------------- 2

/// Small trained model on the single-inclusion cell, shared by 2 and 9.
struct SmallRom {
    rve: Rve,
    op: MorphOperator,
    model: RomModel,
}

fn small_rom() -> &'static SmallRom {
    static CELL: OnceLock<SmallRom> = OnceLock::new();
    CELL.get_or_init(|| {
        let (mesh, param) = single_inclusion_rve(Resolution::new(3, 1, 1)).unwrap();
        let mats = composite_materials();
        let rve = Rve::new(mesh.clone(), &mats).unwrap();
        let op = assemble_aux(&mesh, &param).unwrap();
        let samples = draw_samples(SamplingScheme::Sobol, 3, 2, &[[0.9, 1.1], [0.9, 1.1], [-0.1, 0.1]], &param);
        let load = LoadProgram { shape: LoadShape::Triangle, steps: 8 };
        let snaps = collect_snapshots(&rve, &op, &samples, load, &tight()).unwrap();
        let settings = RomSettings { modes: 6, stress_modes: 6, eps: 0.01, volume_row: true, full_quadrature: false };
        let (model, _) = train_rom(&rve, &mats, &snaps, &settings, TrainingMeta::untrained(param)).unwrap();
        SmallRom { rve, op, model }
    })
}

/// Plastic mid-history state: committed histories at step `k - 1` and the
/// target gradient of step `k`.
fn plastic_load() -> MacroLoad {
    MacroLoad::ramp(&stretch(1.06, 0.95, 0.05), 4).unwrap()
}

#[test]
fn c2_consistent_tangents() {
    let t0 = Instant::now();
    let cell = small_rom();
    let (rve, op, model) = (&cell.rve, &cell.op, &cell.model);
    let mu = GeometryParams(vec![1.1]);
    let morph = op.solve_morph(&mu).unwrap();
    let load = plastic_load();
    let full = solve_rve(rve, &morph, &load, &tight(), &[]).unwrap();
    let committed = &full.steps[3].states;
    let fbar = load.steps[4];
    assert!(full.steps[4].states.iter().any(|s| s.xi > 0.0), "history must be plastic");
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // element tangent against central differences of the residual
    let w = &full.steps[4].w;
    let asm = rve.assemble(&morph, committed, &fbar, w, true).unwrap();
    let k = rve.pattern().matrix(asm.k.as_ref().unwrap()).unwrap().to_dense();
    let n = rve.num_dofs();
    let mut k_err = 0.0f64;
    for _ in 0..10 {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = 1e-6;
        let wp: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let wm: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        let fp = rve.assemble(&morph, committed, &fbar, &wp, false).unwrap().f;
        let fm = rve.assemble(&morph, committed, &fbar, &wm, false).unwrap().f;
        let fd: Vec<f64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let kv: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[(i, j)] * v[j]).sum()).collect();
        k_err = k_err.max(rel(&fd, &kv));
    }

    // effective stiffness against central differences of the effective stress
    let step = rve.solve_step(&morph, committed, &fbar, &full.steps[3].w, &tight(), 4).unwrap();
    let a_full = rve.effective_stiffness(&morph, &step).unwrap();
    let pbar_full = |f: &M2| rve.solve_step(&morph, committed, f, &full.steps[3].w, &tight(), 4).unwrap().pbar;
    let a_full_err = fd_stiffness_error(&a_full, &fbar, pbar_full);

    // reduced path: same checks on the hyper-reduced system
    let solver = RomSolver::new(model, &morph).unwrap();
    let rom = rom_solve(model, &morph, &load, &tight(), &[]).unwrap();
    let rc = &rom.steps[3].states;
    let a = &rom.steps[4].a;
    let (_, kr) = solver.reduced_system(rc, &fbar, a).unwrap();
    let nr = a.len();
    let mut kr_err = 0.0f64;
    for _ in 0..10 {
        let v: Vec<f64> = (0..nr).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = 1e-6;
        let ap: Vec<f64> = a.iter().zip(&v).map(|(x, y)| x + h * y).collect();
        let am: Vec<f64> = a.iter().zip(&v).map(|(x, y)| x - h * y).collect();
        let fp = solver.reduced_system(rc, &fbar, &ap).unwrap().0;
        let fm = solver.reduced_system(rc, &fbar, &am).unwrap().0;
        let fd: Vec<f64> = fp.iter().zip(&fm).map(|(x, y)| (x - y) / (2.0 * h)).collect();
        let kv: Vec<f64> = (0..nr).map(|i| (0..nr).map(|j| kr[(i, j)] * v[j]).sum()).collect();
        kr_err = kr_err.max(rel(&fd, &kv));
    }
    let a0 = &rom.steps[3].a;
    let rstep = solver.solve_step(rc, &fbar, a0, &tight(), 4).unwrap();
    let a_rom = solver.effective_stiffness(&rstep).unwrap();
    let pbar_rom = |f: &M2| solver.solve_step(rc, f, a0, &tight(), 4).unwrap().pbar;
    let a_rom_err = fd_stiffness_error(&a_rom, &fbar, pbar_rom);

    let secs = t0.elapsed().as_secs_f64();
    let pass = k_err < 1e-5 && kr_err < 1e-5 && a_full_err < 1e-4 && a_rom_err < 1e-4 && secs < 60.0;
    report(
        2,
        "consistent tangents",
        pass,
        format!("K full {k_err:.1e}, K reduced {kr_err:.1e}, A full {a_full_err:.1e}, A reduced {a_rom_err:.1e}, {secs:.1} s"),
    );
}

/// Largest deviation of `a` from central differences of `pbar`, relative
/// to the largest entry of `a`.
fn fd_stiffness_error(a: &T4, fbar: &M2, pbar: impl Fn(&M2) -> M2) -> f64 {
    let h = 1e-6;
    let mut err = 0.0f64;
    for kl in 0..4 {
        let mut fp = tensor::flat(fbar);
        let mut fm = fp;
        fp[kl] += h;
        fm[kl] -= h;
        let dp = tensor::flat(&tensor::sub(&pbar(&tensor::unflat(&fp)), &pbar(&tensor::unflat(&fm))));
        for ij in 0..4 {
            err = err.max((dp[ij] / (2.0 * h) - a[ij][kl]).abs());
        }
    }
    err / max_abs(&t4_flat(a))
}

// ---------------------------------------------------------------- 3

/// Mises stress of a principal plane-strain Hencky strain state, computed
/// independently of the library: `q = sqrt(3/2) 2 mu |dev eps|`.
fn hencky_trial_mises(f: &M2, mu: f64) -> f64 {
    let b = tensor::mul(f, &tensor::transpose(f));
    let (tr, det) = (b[0][0] + b[1][1], tensor::det(&b));
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    let eps = [0.5 * (0.5 * tr + disc).ln(), 0.5 * (0.5 * tr - disc).ln(), 0.0];
    let mean = (eps[0] + eps[1] + eps[2]) / 3.0;
    let dev2: f64 = eps.iter().map(|e| (e - mean) * (e - mean)).sum();
    1.5f64.sqrt() * 2.0 * mu * dev2.sqrt()
}

#[test]
fn c3_plasticity_suite() {
    let p = matrix();
    let (lambda, mu) = p.lame();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tol = 1e-10 * p.sigma_y0;
    let mut kt_max = 0.0f64;
    let mut n_plastic = 0;
    for _ in 0..1000 {
        // random committed history, then a random increment from it
        let f0 = [[rng.random_range(0.9..1.1), rng.random_range(-0.1..0.1)], [rng.random_range(-0.1..0.1), rng.random_range(0.9..1.1)]];
        let (_, state) = large_strain_update(&f0, &MaterialState::default(), &p).unwrap();
        let mut f = f0;
        for v in f.iter_mut().flatten() {
            *v += rng.random_range(-0.03..0.03);
        }
        let up = large_strain_stress(&f, &state, &p).unwrap();
        assert!(up.dgamma >= 0.0);
        kt_max = kt_max.max(up.f_yield.max(0.0));
        if up.dgamma > 0.0 {
            n_plastic += 1;
            kt_max = kt_max.max(up.f_yield.abs());
        }
        // same conditions for the small-strain update
        let e = [rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), 0.0, rng.random_range(-0.05..0.05)];
        let ss = j2_small_strain(&e, &SmallStrainState::default(), &p).unwrap();
        kt_max = kt_max.max(ss.f_yield.max(0.0));
        if ss.dgamma > 0.0 {
            kt_max = kt_max.max(ss.f_yield.abs());
        }
    }

    // closed-form plastic multiplier from the virgin state
    let mut dg_err = 0.0f64;
    for _ in 0..200 {
        let f = [[rng.random_range(0.85..1.15), rng.random_range(-0.15..0.15)], [rng.random_range(-0.15..0.15), rng.random_range(0.85..1.15)]];
        let up = large_strain_stress(&f, &MaterialState::default(), &p).unwrap();
        let f_trial = hencky_trial_mises(&f, mu) - p.sigma_y0;
        let expect = (f_trial / (3.0 * mu + p.h)).max(0.0);
        dg_err = dg_err.max((up.dgamma - expect).abs());
        let e = [rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), 0.0, rng.random_range(-0.05..0.05)];
        let ss = j2_small_strain(&e, &SmallStrainState::default(), &p).unwrap();
        let tr = e[0] + e[1] + e[2];
        let s = [2.0 * mu * (e[0] - tr / 3.0), 2.0 * mu * (e[1] - tr / 3.0), 2.0 * mu * (e[2] - tr / 3.0), 2.0 * mu * e[3]];
        let q = (1.5 * (s[0] * s[0] + s[1] * s[1] + s[2] * s[2] + 2.0 * s[3] * s[3])).sqrt();
        let _ = lambda;
        dg_err = dg_err.max((ss.dgamma - ((q - p.sigma_y0) / (3.0 * mu + p.h)).max(0.0)).abs());
    }

    // hardening variable never decreases along triangle waves
    let mut monotone = true;
    for _ in 0..20 {
        let u = stretch(rng.random_range(0.9..1.1), rng.random_range(0.9..1.1), rng.random_range(-0.1..0.1));
        let load = MacroLoad::triangle_wave(&u, 40).unwrap();
        let hist = material_point_history(&load.steps, &p).unwrap();
        monotone &= hist.windows(2).all(|w| w[1].1.xi >= w[0].1.xi);
    }
    let pass = kt_max <= tol && dg_err <= 1e-12 && monotone && n_plastic > 100;
    report(3, "plasticity suite", pass, format!("KT residual {kt_max:.1e} over {n_plastic} plastic steps, dgamma err {dg_err:.1e}, xi monotone = {monotone}"));
}

// ---------------------------------------------------------------- 4

#[test]
fn c4_exact_limit_equivalence() {
    let t0 = Instant::now();
    let (mesh, param) = single_inclusion_rve(Resolution::new(4, 1, 1)).unwrap();
    let mats = composite_materials();
    let rve = Rve::new(mesh.clone(), &mats).unwrap();
    let op = assemble_aux(&mesh, &param).unwrap();
    let gram = h1_gram(&rve.mesh, &rve.quad, &rve.dofs);
    let model = build_rom(full_space(&gram).unwrap(), EcmRule::full(&rve.quad.weights), &rve, &mats, TrainingMeta::untrained(param)).unwrap();
    let morph = op.solve_morph(&GeometryParams(vec![0.9])).unwrap();
    let load = MacroLoad::triangle_wave(&stretch(1.08, 0.95, 0.05), 40).unwrap();
    let full = solve_rve(&rve, &morph, &load, &tight(), &[]).unwrap();
    let rom = rom_solve(&model, &morph, &load, &tight(), &[]).unwrap();
    let mut worst = 0.0f64;
    for (f, r) in full.steps.iter().zip(&rom.steps).skip(1) {
        let w = model.reconstruct(&r.a);
        let d: Vec<f64> = w.iter().zip(&f.w).map(|(a, b)| a - b).collect();
        let denom = rve.v_norm_sq(&morph, &f.w).sqrt();
        if denom > 0.0 {
            worst = worst.max(rve.v_norm_sq(&morph, &d).sqrt() / denom);
        }
    }
    let plastic = full.steps.last().unwrap().states.iter().any(|s| s.xi > 0.0);
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst < 1e-8 && plastic && rve.num_dofs() <= 500 && load.num_steps() == 40 && secs < 120.0;
    report(4, "exact-limit equivalence", pass, format!("{} DOFs, max stepwise rel V-norm {worst:.1e}, plastic = {plastic}, {secs:.1} s", rve.num_dofs()));
}

// ---------------------------------------------------------------- 5, 6

struct ExampleOne {
    rve: Rve,
    op: MorphOperator,
    mats: RegionMaterials,
    param: Parameterization,
    snaps: Snapshots,
    tests: Vec<Sample>,
    reference: Vec<Vec<M2>>,
    load: LoadProgram,
    started: Instant,
}

const EX1_BOUNDS: [[f64; 2]; 3] = [[0.9, 1.1], [0.9, 1.1], [-0.1, 0.1]];

fn example_one() -> &'static ExampleOne {
    static CELL: OnceLock<ExampleOne> = OnceLock::new();
    CELL.get_or_init(|| {
        let started = Instant::now();
        let (mesh, param) = composite_rve(Resolution::new(5, 1, 1)).unwrap();
        let mats = composite_materials();
        let rve = Rve::new(mesh.clone(), &mats).unwrap();
        let op = assemble_aux(&mesh, &param).unwrap();
        let load = LoadProgram { shape: LoadShape::Triangle, steps: 40 };
        let settings = NewtonSettings::default();
        let train = draw_samples(SamplingScheme::Sobol, 8, 0, &EX1_BOUNDS, &param);
        let snaps = collect_snapshots(&rve, &op, &train, load, &settings).unwrap();
        let tests = draw_samples(SamplingScheme::Uniform, 20, 1, &EX1_BOUNDS, &param);
        let reference = tests
            .iter()
            .map(|s| {
                let morph = op.solve_morph(&s.mu).unwrap();
                solve_rve(&rve, &morph, &load.for_sample(s).unwrap(), &settings, &[]).unwrap().pbar()
            })
            .collect();
        ExampleOne { rve, op, mats, param, snaps, tests, reference, load, started }
    })
}

fn train(ex: &ExampleOne, modes: usize, stress_modes: usize, full_quadrature: bool) -> RomModel {
    let settings = RomSettings { modes, stress_modes, eps: 0.01, volume_row: true, full_quadrature };
    train_rom(&ex.rve, &ex.mats, &ex.snaps, &settings, TrainingMeta::untrained(ex.param.clone())).unwrap().0
}

fn mean_stress_error(ex: &ExampleOne, model: &RomModel) -> f64 {
    let errs: Vec<f64> = ex
        .tests
        .iter()
        .zip(&ex.reference)
        .map(|(s, p_ref)| {
            let morph = ex.op.solve_morph(&s.mu).unwrap();
            let rom = rom_solve(model, &morph, &ex.load.for_sample(s).unwrap(), &NewtonSettings::default(), &[]).unwrap();
            stress_error(&rom.pbar(), p_ref).unwrap()
        })
        .collect();
    errs.iter().sum::<f64>() / errs.len() as f64
}

fn rule_contract(model: &RomModel, eps: f64) -> bool {
    let sum: f64 = model.rule.weights.iter().sum();
    model.rule.achieved_residual <= eps && model.rule.weights.iter().all(|w| *w > 0.0) && (sum - 1.0).abs() <= eps
}

#[test]
fn c5_cubature_contract() {
    let ex = example_one();
    let q_full = ex.rve.num_points();
    let m10 = train(ex, 10, 10, false);
    let m20 = train(ex, 20, 15, false);
    let q = m10.num_rule_points();
    let pass = rule_contract(&m10, 0.01) && rule_contract(&m20, 0.01) && (q as f64) <= 0.1 * q_full as f64;
    report(
        5,
        "cubature contract",
        pass,
        format!(
            "Q = {q} of {q_full} at N = L = 10 (residual {:.1e}), Q = {} at N = 20, L = 15",
            m10.rule.achieved_residual,
            m20.num_rule_points()
        ),
    );
}

#[test]
fn c6_composite_surrogate_accuracy() {
    let ex = example_one();
    let hyper = mean_stress_error(ex, &train(ex, 20, 15, false));
    let sweep: Vec<f64> = [5, 10, 20].iter().map(|&n| mean_stress_error(ex, &train(ex, n, 15, true))).collect();
    let decreasing = sweep.windows(2).all(|w| w[1] < w[0]);
    let secs = ex.started.elapsed().as_secs_f64();
    let pass = hyper < 0.05 && decreasing && secs < 1800.0;
    report(
        6,
        "composite cell surrogate",
        pass,
        format!(
            "{} DOFs, mean eps_P = {:.2}% at N = 20, L = 15; full quadrature N = 5/10/20: {:.2}% / {:.2}% / {:.2}%; {secs:.0} s",
            ex.rve.num_dofs(),
            100.0 * hyper,
            100.0 * sweep[0],
            100.0 * sweep[1],
            100.0 * sweep[2]
        ),
    );
}

// ---------------------------------------------------------------- 7

#[test]
fn c7_two_scale_compression() {
    let t0 = Instant::now();
    let (mesh, param) = porous_rve(Resolution::new(4, 1, 1)).unwrap();
    let mats = RegionMaterials::uniform(matrix());
    let rve = Rve::new(mesh.clone(), &mats).unwrap();
    let op = assemble_aux(&mesh, &param).unwrap();
    let settings = NewtonSettings::default();
    let bounds = [[0.85, 1.0], [0.85, 1.0], [-0.15, 0.15]];
    let samples = draw_samples(SamplingScheme::Sobol, 20, 0, &bounds, &param);
    let load = LoadProgram { shape: LoadShape::LoadUnload, steps: 50 };
    let snaps = collect_snapshots(&rve, &op, &samples, load, &settings).unwrap();
    let rom_settings = RomSettings { modes: 20, stress_modes: 20, eps: 0.01, volume_row: true, full_quadrature: false };
    let (model, _) = train_rom(&rve, &mats, &snaps, &rom_settings, TrainingMeta::untrained(param.clone())).unwrap();
    let t_train = t0.elapsed().as_secs_f64();

    let problem = MacroProblem::rectangle(5, 3, 2.0, 1.0, load_unload_schedule(0.2, 50).unwrap(), macro_newton_default()).unwrap();
    let mus: Vec<GeometryParams> = problem.gauss_points().iter().map(|x| podecm::twoscale::graded_void_params(*x)).collect();
    let full = solve_twoscale(&problem, &FullEngine::new(&rve, &op, &mus, settings).unwrap()).unwrap();
    let rom = solve_twoscale(&problem, &RomEngine::new(&model, &op, &mus, settings).unwrap()).unwrap();
    let errs = compliance_errors(&rom.compliance(), &full.compliance()).unwrap();
    let residual = rom.steps.last().unwrap().probe_disp;
    let per_step: Vec<f64> = errs.per_step.iter().flatten().copied().collect();
    let half = per_step.len() / 2;
    let early = per_step[..half].iter().sum::<f64>() / half as f64;
    let late = per_step[half..].iter().sum::<f64>() / (per_step.len() - half) as f64;
    let secs = t0.elapsed().as_secs_f64();
    let pass = errs.mean < 0.05 && residual > 0.0 && late > early && secs < 7200.0;
    report(
        7,
        "two-scale compression",
        pass,
        format!(
            "mean eps_C = {:.2}%, residual u = {residual:.3e}, eps_C first/second half {:.2}%/{:.2}%, Q = {} of {}, full {:.0} s vs reduced {:.0} s (training {t_train:.0} s)",
            100.0 * errs.mean,
            100.0 * early,
            100.0 * late,
            model.num_rule_points(),
            rve.num_points(),
            full.wall_time,
            rom.wall_time
        ),
    );
}

// ---------------------------------------------------------------- 8

#[test]
fn c8_property_map_trends() {
    let t0 = Instant::now();
    let (mesh, param) = porous_rve(Resolution::new(4, 1, 1)).unwrap();
    let rve = Rve::new(mesh.clone(), &RegionMaterials::uniform(matrix())).unwrap();
    let op = assemble_aux(&mesh, &param).unwrap();
    let voids = [0.4, 0.45, 0.5];
    let kappas = [1.01, 1.25, 1.5];
    let grid: Vec<GeometryParams> = kappas.iter().flat_map(|k| voids.iter().map(move |v| GeometryParams(vec![*v, *k]))).collect();
    let props = micro_property_map(&rve, &op, &grid, 0.001, &NewtonSettings::default()).unwrap();
    let e_decreasing = props.chunks(3).all(|row| row.windows(2).all(|w| w[1].e_eff < w[0].e_eff));
    let nu_at = |v: f64, k: f64| props.iter().find(|p| p.mu.0 == [v, k]).unwrap().nu_eff;
    let (nu_hi, nu_lo) = (nu_at(0.5, 1.5), nu_at(0.5, 1.01));
    let secs = t0.elapsed().as_secs_f64();
    let pass = e_decreasing && nu_hi < nu_lo && secs < 600.0;
    let es: Vec<String> = props.iter().map(|p| format!("{:.3}", p.e_eff)).collect();
    report(8, "property-map trends", pass, format!("E_eff by kappa rows [{}], nu_eff(0.5, 1.5) = {nu_hi:.3} vs nu_eff(0.5, 1.01) = {nu_lo:.3}, {secs:.0} s", es.join(", ")));
}

// ---------------------------------------------------------------- 9

const RUN_CONFIG: &str = r#"
[mesh]
builtin = "single_inclusion"
resolution = [3, 1, 1]

[materials.0]
E = 10.0
nu = 0.3
sigma_y0 = 0.2
H = 5.0

[materials.1]
E = 100.0
nu = 0.3

[sampling]
train = 2
seed = 5

[load]
steps = 4

[rom]
modes = 3
stress_modes = 3
"#;

#[test]
fn c9_determinism_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, RUN_CONFIG).unwrap();
    let run = |out: &str| {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_podecm"))
            .args(["offline", "--config", cfg.to_str().unwrap(), "--out", dir.path().join(out).to_str().unwrap()])
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(dir.path().join(out).join("manifest.json")).unwrap()
    };
    let same_manifest = run("a") == run("b");

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut c = Container::default();
    c.attributes.insert("kind".into(), "test".into());
    c.push("x", Array::f64(vec![3, 5], (0..15).map(|_| rng.random::<f64>() - 0.5).collect()));
    c.push("ids", Array::i64(vec![4], (0..4).map(|_| rng.random::<i64>()).collect()));
    let bytes = c.to_bytes().unwrap();
    let back = Container::from_bytes(&bytes).unwrap();
    let container_ok = back == c && back.to_bytes().unwrap() == bytes;

    let model = &small_rom().model;
    let mb = rom_to_container(model).unwrap().to_bytes().unwrap();
    let reread = rom_from_container(&Container::from_bytes(&mb).unwrap()).unwrap();
    let model_ok = &reread == model && rom_to_container(&reread).unwrap().to_bytes().unwrap() == mb;
    let pass = same_manifest && container_ok && model_ok;
    report(9, "determinism and persistence", pass, format!("identical manifests = {same_manifest}, container = {container_ok}, model = {model_ok}"));
}
