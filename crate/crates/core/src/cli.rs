//! Command-line front end: argument parsing and the subcommands that turn
//! a run config into output files.

use crate::config::{grid, ParamField, RunConfig, Setup};
use crate::error::{Error, Result};
use crate::geometry::{GeometryParams, Parameterization};
use crate::microfem::{effective_sensitivity, solve_rve, NewtonSettings, Rve};
use crate::morph::{assemble_aux, MorphOperator};
use crate::offline::{collect_snapshots, draw_samples, mean, train_rom, validate, Sample};
use crate::rom::{rom_sensitivity, rom_solve, RomModel, TrainingMeta};
use crate::store::{file_sha256, load_rom, save_rom, snapshots_to_container, write_atomic, write_container};
use crate::tensor::{M2, T4};
use crate::twoscale::{
    compliance_errors, graded_void_params, load_unload_schedule, micro_property_map, solve_twoscale, FullEngine, MacroProblem, RomEngine,
    TwoScaleResult,
};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "podecm", version, about = "Parameterized RVE homogenization with a POD + empirical cubature surrogate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample, run the full model, and train a surrogate.
    Offline(CommonArgs),
    /// Solve one geometry and load program.
    Online(OnlineArgs),
    /// Compare a surrogate against the full model on test samples.
    Validate(EngineArgs),
    /// Two-scale compression of the macro structure.
    Twoscale(EngineArgs),
    /// Initial effective Poisson ratio and Young modulus over a parameter grid.
    Propmap(CommonArgs),
    /// Write the configured parent mesh to a file.
    Genmesh(GenmeshArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `sampling.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EngineArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// `full` or `rom:<model path>`.
    #[arg(long, default_value = "full", value_parser = parse_engine)]
    pub engine: Engine,
}

#[derive(Debug, Args)]
pub struct OnlineArgs {
    #[command(flatten)]
    pub run: EngineArgs,
    /// Also write the effective stiffness at every step.
    #[arg(long)]
    pub effective_stiffness: bool,
    /// Also write finite-difference shape sensitivities with this step.
    #[arg(long)]
    pub sensitivity: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenmeshArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Mesh file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Engine {
    Full,
    Rom(PathBuf),
}

pub fn parse_engine(s: &str) -> std::result::Result<Engine, String> {
    match s.split_once(':') {
        None if s == "full" => Ok(Engine::Full),
        Some(("rom", p)) if !p.is_empty() => Ok(Engine::Rom(PathBuf::from(p))),
        _ => Err(format!("expected 'full' or 'rom:<path>', got '{s}'")),
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_solver_failure() {
        EXIT_SOLVER
    } else {
        EXIT_CONFIG
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // a second initialisation in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match cli.command {
        Command::Offline(a) => cmd_offline(&a),
        Command::Online(a) => cmd_online(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::Twoscale(a) => cmd_twoscale(&a),
        Command::Propmap(a) => cmd_propmap(&a),
        Command::Genmesh(a) => {
            let cfg = RunConfig::load(&a.config)?;
            cfg.setup()?.mesh.save(&a.out)
        }
    }
}

/// Loaded config, resolved output directory and parent setup.
struct Context {
    cfg: RunConfig,
    out: PathBuf,
    setup: Setup,
}

fn context(a: &CommonArgs) -> Result<Context> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.sampling.seed = s;
    }
    let out = a.out.clone().or_else(|| cfg.out.clone()).ok_or_else(|| Error::Config("no output directory: pass --out or set `out`".into()))?;
    let setup = cfg.setup()?;
    std::fs::create_dir_all(&out)?;
    Ok(Context { cfg, out, setup })
}

fn rve_and_op(setup: &Setup, param: &Parameterization) -> Result<(Rve, MorphOperator)> {
    let rve = Rve::new(setup.mesh.clone(), &setup.materials)?;
    let op = assemble_aux(&setup.mesh, param)?;
    Ok((rve, op))
}

fn load_model(path: &Path, setup: &Setup) -> Result<RomModel> {
    let model = load_rom(path)?;
    model.check_mesh(&setup.mesh.fingerprint())?;
    Ok(model)
}

/// Writes a comma-separated file with a header row.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

fn cols(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn num(v: f64) -> String {
    // adding zero folds -0 into 0
    format!("{}", v + 0.0)
}

const COMPONENTS: [&str; 4] = ["xx", "xy", "yx", "yy"];

fn m2_cells(m: &M2) -> impl Iterator<Item = String> {
    [m[0][0], m[0][1], m[1][0], m[1][1]].into_iter().map(num)
}

/// Run manifest: everything needed to reproduce the outputs, plus their
/// hashes. Wall-clock timings live in `timings.json` so that identical
/// inputs give identical manifests.
fn write_manifest(out: &Path, command: &str, cfg: &RunConfig, extra: serde_json::Value, outputs: &[&str], timings: serde_json::Value) -> Result<()> {
    let mut hashes = BTreeMap::new();
    for name in outputs {
        hashes.insert(name.to_string(), file_sha256(out.join(name))?);
    }
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "details": extra,
        "outputs": hashes,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(out.join("manifest.json"), text.as_bytes())?;
    let t = serde_json::to_string_pretty(&timings).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(out.join("timings.json"), t.as_bytes())
}

fn sample_rows(samples: &[Sample]) -> Vec<Vec<String>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| std::iter::once(i.to_string()).chain(s.stretch.iter().chain(&s.mu.0).map(|v| num(*v))).collect())
        .collect()
}

fn sample_header(param: &Parameterization) -> Vec<String> {
    let mut h = cols(&["sample", "U_xx", "U_yy", "U_xy"]);
    h.extend(param.parameter_names().iter().map(|s| s.to_string()));
    h
}

pub fn cmd_offline(a: &CommonArgs) -> Result<()> {
    let ctx = context(a)?;
    let (cfg, out, setup) = (&ctx.cfg, &ctx.out, &ctx.setup);
    let t0 = Instant::now();
    let (rve, op) = rve_and_op(setup, &setup.param)?;
    let samples = draw_samples(cfg.sampling.scheme, cfg.sampling.train, cfg.sampling.seed, &cfg.sampling.load_bounds, &setup.param);
    write_csv(&out.join("samples.csv"), &sample_header(&setup.param), &sample_rows(&samples))?;
    let t1 = Instant::now();
    let snaps = collect_snapshots(&rve, &op, &samples, cfg.load_program(), &cfg.newton())?;
    write_container(out.join("snapshots.podecm"), &snapshots_to_container(&snaps.displacement, &snaps.stress)?)?;
    let t2 = Instant::now();
    let meta = TrainingMeta {
        n_train: samples.len(),
        l: if cfg.rom.full_quadrature { 0 } else { cfg.rom.stress_modes },
        eps: cfg.rom.eps,
        volume_row: cfg.rom.volume_row,
        parameterization: setup.param.clone(),
        load_bounds: cfg.sampling.load_bounds.to_vec(),
        seed: cfg.sampling.seed,
    };
    let (model, report) = train_rom(&rve, &setup.materials, &snaps, &cfg.rom_settings(), meta)?;
    save_rom(out.join("model.podecm"), &model)?;
    let t3 = Instant::now();
    let trace: Vec<Vec<String>> =
        report.ecm_trace.iter().enumerate().map(|(i, it)| vec![i.to_string(), it.selected.to_string(), num(it.residual)]).collect();
    write_csv(&out.join("ecm_trace.csv"), &cols(&["iteration", "points", "residual"]), &trace)?;
    let n_sv = report.displacement_singular_values.len().max(report.stress_singular_values.len());
    let sv: Vec<Vec<String>> = (0..n_sv)
        .map(|i| {
            let cell = |v: &[f64]| v.get(i).map_or(String::new(), |x| num(*x));
            vec![i.to_string(), cell(&report.displacement_singular_values), cell(&report.stress_singular_values)]
        })
        .collect();
    write_csv(&out.join("singular_values.csv"), &cols(&["index", "displacement", "weighted_stress"]), &sv)?;
    let mut dims = cols(&["U_xx", "U_yy", "U_xy"]);
    dims.extend(setup.param.parameter_names().iter().map(|s| s.to_string()));
    let details = json!({
        "seed": cfg.sampling.seed,
        "sampling_scheme": cfg.sampling.scheme,
        "sampling_dimensions": dims,
        "newton": { "eps_rel": cfg.solver.eps_newton, "eps_abs": cfg.solver.eps_abs, "max_iter": cfg.solver.max_iter },
        "mesh_fingerprint": setup.mesh.fingerprint(),
        "full_points": report.full_points,
        "rule_points": report.rule_points,
        "modes": model.num_modes(),
        "ecm_residual": model.rule.achieved_residual,
    });
    let timings = json!({
        "setup_s": (t1 - t0).as_secs_f64(),
        "snapshots_s": (t2 - t1).as_secs_f64(),
        "training_s": (t3 - t2).as_secs_f64(),
    });
    let outputs = ["samples.csv", "snapshots.podecm", "model.podecm", "ecm_trace.csv", "singular_values.csv"];
    write_manifest(out, "offline", cfg, details, &outputs, timings)?;
    log::info!("trained N = {} modes on {} of {} quadrature points", model.num_modes(), report.rule_points, report.full_points);
    Ok(())
}

fn stiffness_header() -> Vec<String> {
    let mut h = cols(&["step"]);
    for ij in COMPONENTS {
        for kl in COMPONENTS {
            h.push(format!("A_{ij}{kl}"));
        }
    }
    h
}

fn stiffness_rows(stiffness: &BTreeMap<usize, T4>) -> Vec<Vec<String>> {
    stiffness.iter().map(|(k, a)| std::iter::once(k.to_string()).chain(a.iter().flatten().map(|v| num(*v))).collect()).collect()
}

pub fn cmd_online(a: &OnlineArgs) -> Result<()> {
    let ctx = context(&a.run.common)?;
    let (cfg, out, setup) = (&ctx.cfg, &ctx.out, &ctx.setup);
    let online = cfg.online.as_ref().ok_or_else(|| Error::Config("online needs an [online] section".into()))?;
    let model = match &a.run.engine {
        Engine::Rom(p) => Some(load_model(p, setup)?),
        Engine::Full => None,
    };
    let param = model.as_ref().map_or(&setup.param, |m| &m.meta.parameterization);
    let (rve, op) = rve_and_op(setup, param)?;
    let mu = online.mu.clone().map(GeometryParams).unwrap_or_else(|| param.parent_params());
    param.check_arity(&mu)?;
    if !param.in_bounds(&mu) {
        log::warn!("mu = {:?} lies outside the parameter bounds", mu.0);
    }
    let sample = Sample { stretch: online.stretch, mu: mu.clone() };
    let load = cfg.load_program().for_sample(&sample)?;
    let all_steps: Vec<usize> = if a.effective_stiffness { (1..=load.num_steps()).collect() } else { vec![] };
    let morph = op.solve_morph(&mu)?;
    let t0 = Instant::now();
    let (pbar, iterations, stiffness) = match &model {
        Some(m) => {
            let s = rom_solve(m, &morph, &load, &cfg.rom_newton(), &all_steps)?;
            (s.pbar(), s.steps.iter().map(|x| x.iterations).collect::<Vec<_>>(), s.stiffness)
        }
        None => {
            let s = solve_rve(&rve, &morph, &load, &cfg.newton(), &all_steps)?;
            (s.pbar(), s.steps.iter().map(|x| x.iterations).collect(), s.stiffness)
        }
    };
    let elapsed = t0.elapsed().as_secs_f64();
    let mut header = cols(&["step"]);
    header.extend(COMPONENTS.iter().map(|c| format!("F_{c}")));
    header.extend(COMPONENTS.iter().map(|c| format!("P_{c}")));
    header.push("iterations".into());
    let rows: Vec<Vec<String>> = load
        .steps
        .iter()
        .zip(&pbar)
        .zip(&iterations)
        .enumerate()
        .map(|(k, ((f, p), it))| std::iter::once(k.to_string()).chain(m2_cells(f)).chain(m2_cells(p)).chain([it.to_string()]).collect())
        .collect();
    write_csv(&out.join("online.csv"), &header, &rows)?;
    let mut outputs = vec!["online.csv"];
    if a.effective_stiffness {
        write_csv(&out.join("stiffness.csv"), &stiffness_header(), &stiffness_rows(&stiffness))?;
        outputs.push("stiffness.csv");
    }
    if let Some(h) = a.sensitivity {
        let sens = match &model {
            Some(m) => rom_sensitivity(m, &op, &mu, &load, h, &cfg.rom_newton())?,
            None => effective_sensitivity(&rve, &op, &mu, &load, h, &cfg.newton())?,
        };
        write_sensitivity(&out.join("sensitivity.csv"), param, &sens)?;
        outputs.push("sensitivity.csv");
    }
    let details = json!({ "engine": format!("{:?}", a.run.engine), "mu": mu.0, "stretch": online.stretch });
    write_manifest(out, "online", cfg, details, &outputs, json!({ "solve_s": elapsed }))
}

fn write_sensitivity(path: &Path, param: &Parameterization, sens: &[Vec<M2>]) -> Result<()> {
    let mut header = cols(&["step", "parameter"]);
    header.extend(COMPONENTS.iter().map(|c| format!("dP_{c}")));
    let names = param.parameter_names();
    let mut rows = Vec::new();
    for (j, per_step) in sens.iter().enumerate() {
        for (k, d) in per_step.iter().enumerate() {
            rows.push(std::iter::once(k.to_string()).chain([names[j].to_string()]).chain(m2_cells(d)).collect());
        }
    }
    write_csv(path, &header, &rows)
}

pub fn cmd_validate(a: &EngineArgs) -> Result<()> {
    let ctx = context(&a.common)?;
    let (cfg, out, setup) = (&ctx.cfg, &ctx.out, &ctx.setup);
    let Engine::Rom(path) = &a.engine else {
        return Err(Error::Config("validate compares a surrogate: pass --engine rom:<path>".into()));
    };
    let model = load_model(path, setup)?;
    let param = &model.meta.parameterization;
    let (rve, op) = rve_and_op(setup, param)?;
    let bounds: [[f64; 2]; 3] = match model.meta.load_bounds.as_slice() {
        [a, b, c] => [*a, *b, *c],
        _ => cfg.sampling.load_bounds,
    };
    let samples = draw_samples(cfg.sampling.test_scheme, cfg.sampling.test, cfg.test_seed(), &bounds, param);
    let t0 = Instant::now();
    let errors = validate(&model, &rve, &op, &samples, cfg.load_program(), &cfg.newton(), &cfg.rom_newton())?;
    let elapsed = t0.elapsed().as_secs_f64();
    let mut header = sample_header(param);
    header.extend(cols(&["eps_P", "eps_w"]));
    let rows: Vec<Vec<String>> = sample_rows(&samples)
        .into_iter()
        .zip(&errors)
        .map(|(mut r, e)| {
            r.extend([num(e.eps_p), num(e.eps_w)]);
            r
        })
        .collect();
    write_csv(&out.join("validation.csv"), &header, &rows)?;
    let (mp, mw) = (mean(&errors, |e| e.eps_p), mean(&errors, |e| e.eps_w));
    let details = json!({
        "test_seed": cfg.test_seed(),
        "test_scheme": cfg.sampling.test_scheme,
        "mean_eps_P": mp,
        "mean_eps_w": mw,
        "modes": model.num_modes(),
        "rule_points": model.num_rule_points(),
    });
    let timings = json!({
        "total_s": elapsed,
        "full_s": errors.iter().map(|e| e.full_time).sum::<f64>(),
        "rom_s": errors.iter().map(|e| e.rom_time).sum::<f64>(),
    });
    write_manifest(out, "validate", cfg, details, &["validation.csv"], timings)?;
    println!("mean eps_P = {mp:.4e}, mean eps_w = {mw:.4e} over {} samples", errors.len());
    Ok(())
}

/// Geometric parameters at every macro Gauss point.
pub fn macro_params(problem: &MacroProblem, field: ParamField, param: &Parameterization) -> Result<Vec<GeometryParams>> {
    match field {
        ParamField::Parent => Ok(vec![param.parent_params(); problem.num_points()]),
        ParamField::GradedVoid => {
            if !matches!(param, Parameterization::VoidShape { .. }) {
                return Err(Error::Config("the graded_void field needs a void_shape parameterization".into()));
            }
            Ok(problem.gauss_points().iter().map(|x| graded_void_params(*x)).collect())
        }
    }
}

fn read_compliance(dir: &Path) -> Result<Vec<f64>> {
    let path = dir.join("compliance.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Config(format!("baseline {}: {e}", path.display())))?;
    text.lines()
        .skip(1)
        .enumerate()
        .map(|(i, l)| {
            l.split(',').nth(2).and_then(|v| v.parse().ok()).ok_or_else(|| Error::Parse { line: i + 2, message: "bad compliance row".into() })
        })
        .collect()
}

fn baseline_wall_time(dir: &Path) -> Option<f64> {
    let text = std::fs::read_to_string(dir.join("timings.json")).ok()?;
    serde_json::from_str::<serde_json::Value>(&text).ok()?["wall_time_s"].as_f64()
}

pub fn cmd_twoscale(a: &EngineArgs) -> Result<()> {
    let ctx = context(&a.common)?;
    let (cfg, out, setup) = (&ctx.cfg, &ctx.out, &ctx.setup);
    let tc = cfg.twoscale.clone().unwrap_or_default();
    let model = match &a.engine {
        Engine::Rom(p) => Some(load_model(p, setup)?),
        Engine::Full => None,
    };
    let param = model.as_ref().map_or(&setup.param, |m| &m.meta.parameterization);
    let (rve, op) = rve_and_op(setup, param)?;
    let settings = NewtonSettings { eps_rel: tc.eps_newton, ..cfg.newton() };
    let problem = MacroProblem::rectangle(tc.nx, tc.ny, tc.width, tc.height, load_unload_schedule(tc.peak, tc.steps)?, settings)?;
    let mus = macro_params(&problem, tc.field, param)?;
    // the full engine produces the baseline; surrogates are compared against it
    let baseline = match (&model, &tc.baseline) {
        (Some(_), Some(dir)) => Some((read_compliance(dir)?, baseline_wall_time(dir))),
        _ => None,
    };
    let result: TwoScaleResult = match &model {
        Some(m) => solve_twoscale(&problem, &RomEngine::new(m, &op, &mus, cfg.rom_newton())?)?,
        None => solve_twoscale(&problem, &FullEngine::new(&rve, &op, &mus, cfg.newton())?)?,
    };
    let c = result.compliance();
    let errors = match &baseline {
        Some((c_ref, _)) => Some(compliance_errors(&c, c_ref)?),
        None => None,
    };
    let rows: Vec<Vec<String>> = result
        .steps
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let e = errors.as_ref().and_then(|e| e.per_step[k]).map_or(String::new(), num);
            vec![k.to_string(), num(s.tbar), num(s.compliance), e]
        })
        .collect();
    write_csv(&out.join("compliance.csv"), &cols(&["step", "T", "C", "eps_C"]), &rows)?;
    let fd: Vec<Vec<String>> =
        result.steps.iter().enumerate().map(|(k, s)| vec![k.to_string(), num(s.tbar), num(s.probe_disp)]).collect();
    write_csv(&out.join("force_disp.csv"), &cols(&["step", "T", "u_tilde"]), &fd)?;
    let speed_up = baseline.as_ref().and_then(|b| b.1).map(|b| b / result.wall_time);
    let (n_train, n, q) = match &model {
        Some(m) => (m.meta.n_train.to_string(), m.num_modes().to_string(), m.num_rule_points().to_string()),
        None => ("-".into(), rve.num_dofs().to_string(), rve.num_points().to_string()),
    };
    let table = vec![vec![
        n_train,
        n,
        q,
        errors.as_ref().map_or(String::new(), |e| num(e.mean)),
        num(result.wall_time),
        speed_up.map_or(String::new(), num),
    ]];
    write_csv(&out.join("table.csv"), &cols(&["N_train", "N", "Q", "eps_bar_C", "runtime_s", "speed_up"]), &table)?;
    let details = json!({
        "engine": format!("{:?}", a.engine),
        "mean_eps_C": errors.as_ref().map(|e| e.mean),
        "excluded_steps": errors.as_ref().map(|e| e.excluded.clone()),
        "residual_u_tilde": result.steps.last().map(|s| s.probe_disp),
    });
    let timings = json!({ "wall_time_s": result.wall_time, "micro_solves": result.micro_solves, "speed_up": speed_up });
    write_manifest(out, "twoscale", cfg, details, &["compliance.csv", "force_disp.csv"], timings)?;
    if let Some(e) = &errors {
        println!("mean eps_C = {:.4e} (steps {:?} excluded)", e.mean, e.excluded);
    }
    Ok(())
}

pub fn cmd_propmap(a: &CommonArgs) -> Result<()> {
    let ctx = context(a)?;
    let (cfg, out, setup) = (&ctx.cfg, &ctx.out, &ctx.setup);
    let pm = cfg.propmap.as_ref().ok_or_else(|| Error::Config("propmap needs a [propmap] section".into()))?;
    if pm.axes.len() != setup.param.num_params() {
        return Err(Error::Config(format!("propmap has {} axes for {} parameters", pm.axes.len(), setup.param.num_params())));
    }
    let (rve, op) = rve_and_op(setup, &setup.param)?;
    let t0 = Instant::now();
    let props = micro_property_map(&rve, &op, &grid(&pm.axes), pm.delta, &cfg.newton())?;
    let mut header: Vec<String> = setup.param.parameter_names().iter().map(|s| s.to_string()).collect();
    header.extend(cols(&["nu_eff", "E_eff"]));
    let rows: Vec<Vec<String>> = props.iter().map(|p| p.mu.0.iter().map(|v| num(*v)).chain([num(p.nu_eff), num(p.e_eff)]).collect()).collect();
    write_csv(&out.join("property_map.csv"), &header, &rows)?;
    write_manifest(out, "propmap", cfg, json!({ "delta": pm.delta }), &["property_map.csv"], json!({ "total_s": t0.elapsed().as_secs_f64() }))
}
