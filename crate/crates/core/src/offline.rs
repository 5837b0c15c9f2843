//! Offline training and validation: parameter sampling, full-order
//! snapshot runs, POD and empirical cubature, and surrogate error studies.

use crate::ecm::{build_integrand, ecm_select_traced, mode_gradients, stress_column, weighted_stress_field, EcmIteration, EcmRule};
use crate::error::{Error, Result};
use crate::geometry::{GeometryParams, Parameterization};
use crate::microfem::{solve_rve, stretch, MacroLoad, NewtonSettings, RegionMaterials, Rve};
use crate::morph::MorphOperator;
use crate::podkit::{h1_gram, l2_gram, pod, SnapshotKind, SnapshotSet, Truncation};
use crate::rom::{build_rom, fluctuation_error, rom_solve, stress_error, RomModel, TrainingMeta};
use crate::tensor::M2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Shape of the macro stretch history over the load steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadShape {
    /// `I -> U -> 2I - U -> I`.
    Triangle,
    /// `I -> U -> I`.
    LoadUnload,
    /// `I -> U`.
    Ramp,
}

impl LoadShape {
    pub fn build(self, u: &M2, steps: usize) -> Result<MacroLoad> {
        match self {
            LoadShape::Triangle => MacroLoad::triangle_wave(u, steps),
            LoadShape::LoadUnload => MacroLoad::load_unload(u, steps),
            LoadShape::Ramp => MacroLoad::ramp(u, steps),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    /// Owen-scrambled Sobol points.
    Sobol,
    /// Independent uniform draws.
    Uniform,
}

/// One training or test case: stretch components `[U_xx, U_yy, U_xy]` and
/// geometric parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub stretch: [f64; 3],
    pub mu: GeometryParams,
}

impl Sample {
    pub fn ubar(&self) -> M2 {
        stretch(self.stretch[0], self.stretch[1], self.stretch[2])
    }
}

/// Draws `n` samples from the box `load_bounds x param.bounds()`. The
/// dimension order is the three stretch components, then the geometry.
pub fn draw_samples(scheme: SamplingScheme, n: usize, seed: u64, load_bounds: &[[f64; 2]; 3], param: &Parameterization) -> Vec<Sample> {
    let bounds: Vec<[f64; 2]> = load_bounds.iter().copied().chain(param.bounds()).collect();
    let scale = |d: usize, t: f64| bounds[d][0] + (bounds[d][1] - bounds[d][0]) * t;
    let unit: Vec<Vec<f64>> = match scheme {
        SamplingScheme::Sobol => {
            let s = (seed ^ (seed >> 32)) as u32;
            (0..n as u32).map(|i| (0..bounds.len() as u32).map(|d| sobol_burley::sample(i, d, s) as f64).collect()).collect()
        }
        SamplingScheme::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| (0..bounds.len()).map(|_| rng.random::<f64>()).collect()).collect()
        }
    };
    unit.into_iter()
        .map(|t| {
            let x: Vec<f64> = t.iter().enumerate().map(|(d, &v)| scale(d, v)).collect();
            Sample { stretch: [x[0], x[1], x[2]], mu: GeometryParams(x[3..].to_vec()) }
        })
        .collect()
}

/// Load program shared by every sample of a study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadProgram {
    pub shape: LoadShape,
    pub steps: usize,
}

impl LoadProgram {
    pub fn for_sample(&self, s: &Sample) -> Result<MacroLoad> {
        self.shape.build(&s.ubar(), self.steps)
    }
}

/// Displacement and weighted-stress snapshots of a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshots {
    pub displacement: SnapshotSet,
    pub stress: SnapshotSet,
}

/// Runs the full model for every sample (in parallel) and collects the
/// snapshots of steps `1..=K`.
pub fn collect_snapshots(rve: &Rve, op: &MorphOperator, samples: &[Sample], load: LoadProgram, settings: &NewtonSettings) -> Result<Snapshots> {
    let runs = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let run = || -> Result<_> {
                let morph = op.solve_morph(&s.mu)?;
                let sol = solve_rve(rve, &morph, &load.for_sample(s)?, settings, &[])?;
                let mut d = Vec::with_capacity(load.steps);
                let mut w = Vec::with_capacity(load.steps);
                for st in sol.steps.iter().skip(1) {
                    d.push(st.w.clone());
                    w.push(stress_column(&weighted_stress_field(&st.p, &morph)?));
                }
                Ok((d, w))
            };
            run().map_err(|e| Error::Sample { sample: i, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut displacement = SnapshotSet::new(SnapshotKind::Displacement, rve.num_dofs());
    let mut stress = SnapshotSet::new(SnapshotKind::WeightedStress, 4 * rve.num_points());
    for (i, (d, w)) in runs.into_iter().enumerate() {
        for (k, (dc, wc)) in d.into_iter().zip(w).enumerate() {
            displacement.push(i, k + 1, dc)?;
            stress.push(i, k + 1, wc)?;
        }
    }
    Ok(Snapshots { displacement, stress })
}

/// Surrogate size and cubature settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RomSettings {
    /// Displacement modes `N`.
    pub modes: usize,
    /// Weighted-stress modes `L` used to build the cubature integrand.
    pub stress_modes: usize,
    pub eps: f64,
    pub volume_row: bool,
    /// Skip the cubature and keep every quadrature point.
    pub full_quadrature: bool,
}

/// Diagnostics of one training run.
#[derive(Clone, Debug)]
pub struct TrainingReport {
    pub displacement_singular_values: Vec<f64>,
    pub stress_singular_values: Vec<f64>,
    pub full_points: usize,
    pub rule_points: usize,
    pub ecm_trace: Vec<EcmIteration>,
}

/// POD of the displacement snapshots, POD of the weighted stresses, ECM,
/// and the sealed model.
pub fn train_rom(
    rve: &Rve,
    materials: &RegionMaterials,
    snapshots: &Snapshots,
    settings: &RomSettings,
    meta: TrainingMeta,
) -> Result<(RomModel, TrainingReport)> {
    let gram = h1_gram(&rve.mesh, &rve.quad, &rve.dofs);
    let basis = pod(&snapshots.displacement, &gram, Truncation::Modes(settings.modes))?;
    let (rule, trace, stress_sv) = if settings.full_quadrature {
        (EcmRule::full(&rve.quad.weights), Vec::new(), Vec::new())
    } else {
        let sb = pod(&snapshots.stress, &l2_gram(&rve.quad), Truncation::Modes(settings.stress_modes))?;
        let grads = mode_gradients(&rve.mesh, &rve.quad, &rve.dofs, &basis);
        let j = build_integrand(&grads, basis.len(), &sb, &rve.quad.weights, settings.volume_row)?;
        let (rule, trace) = ecm_select_traced(&j, settings.eps)?;
        (rule, trace, sb.singular_values)
    };
    let report = TrainingReport {
        displacement_singular_values: basis.singular_values.clone(),
        stress_singular_values: stress_sv,
        full_points: rve.num_points(),
        rule_points: rule.len(),
        ecm_trace: trace,
    };
    Ok((build_rom(basis, rule, rve, materials, meta)?, report))
}

/// Surrogate errors of one test sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub sample: usize,
    /// Relative effective-stress error summed over the load steps.
    pub eps_p: f64,
    /// Relative fluctuation error in the norm over the morphed domain.
    pub eps_w: f64,
    /// Full-order and surrogate wall times in seconds.
    pub full_time: f64,
    pub rom_time: f64,
}

/// Solves every test sample with both models and compares them.
pub fn validate(
    model: &RomModel,
    rve: &Rve,
    op: &MorphOperator,
    samples: &[Sample],
    load: LoadProgram,
    full_settings: &NewtonSettings,
    rom_settings: &NewtonSettings,
) -> Result<Vec<SampleError>> {
    model.check_mesh(&rve.mesh.fingerprint())?;
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let run = || -> Result<SampleError> {
                let morph = op.solve_morph(&s.mu)?;
                let l = load.for_sample(s)?;
                let t0 = std::time::Instant::now();
                let full = solve_rve(rve, &morph, &l, full_settings, &[])?;
                let t1 = std::time::Instant::now();
                let rom = rom_solve(model, &morph, &l, rom_settings, &[])?;
                let t2 = std::time::Instant::now();
                let w_full: Vec<Vec<f64>> = full.steps.iter().map(|st| st.w.clone()).collect();
                let w_rom: Vec<Vec<f64>> = rom.steps.iter().map(|st| model.reconstruct(&st.a)).collect();
                Ok(SampleError {
                    sample: i,
                    eps_p: stress_error(&rom.pbar(), &full.pbar())?,
                    eps_w: fluctuation_error(rve, &morph, &w_rom, &w_full)?,
                    full_time: (t1 - t0).as_secs_f64(),
                    rom_time: (t2 - t1).as_secs_f64(),
                })
            };
            run().map_err(|e| Error::Sample { sample: i, source: Box::new(e) })
        })
        .collect()
}

/// Mean of a per-sample quantity.
pub fn mean(errors: &[SampleError], f: impl Fn(&SampleError) -> f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().map(f).sum::<f64>() / errors.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::PlasticityParams;
    use crate::mesh::generate::{single_inclusion_rve, Resolution};
    use crate::morph::assemble_aux;
    use crate::podkit::full_space;
    use proptest::prelude::*;

    const LOAD_BOUNDS: [[f64; 2]; 3] = [[0.9, 1.1], [0.9, 1.1], [-0.1, 0.1]];

    fn zeta() -> Parameterization {
        single_inclusion_rve(Resolution::new(3, 1, 1)).unwrap().1
    }

    #[test]
    fn samples_are_deterministic_and_in_bounds() {
        for scheme in [SamplingScheme::Sobol, SamplingScheme::Uniform] {
            let a = draw_samples(scheme, 16, 7, &LOAD_BOUNDS, &zeta());
            assert_eq!(a, draw_samples(scheme, 16, 7, &LOAD_BOUNDS, &zeta()));
            assert_ne!(a, draw_samples(scheme, 16, 8, &LOAD_BOUNDS, &zeta()));
            for s in &a {
                assert!(zeta().in_bounds(&s.mu));
                for (v, b) in s.stretch.iter().zip(LOAD_BOUNDS) {
                    assert!(*v >= b[0] && *v <= b[1]);
                }
            }
        }
    }

    #[test]
    fn sobol_points_stratify_each_dimension() {
        // 16 scrambled Sobol points put exactly one point in each 1/16 bin
        let s = draw_samples(SamplingScheme::Sobol, 16, 3, &[[0.0, 1.0]; 3], &zeta());
        for d in 0..4 {
            let mut bins = [0usize; 16];
            for x in &s {
                let v = if d < 3 { x.stretch[d] } else { (x.mu.0[0] - 0.5) / 0.7 };
                bins[((v * 16.0) as usize).min(15)] += 1;
            }
            assert!(bins.iter().all(|&c| c == 1), "dimension {d}: {bins:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn uniform_samples_respect_bounds(seed in any::<u64>(), n in 1usize..20) {
            let s = draw_samples(SamplingScheme::Uniform, n, seed, &LOAD_BOUNDS, &zeta());
            prop_assert_eq!(s.len(), n);
            prop_assert!(s.iter().all(|x| zeta().in_bounds(&x.mu)));
        }
    }

    struct Fixture {
        rve: Rve,
        op: MorphOperator,
        mats: RegionMaterials,
    }

    fn fixture() -> Fixture {
        let (mesh, param) = single_inclusion_rve(Resolution::new(3, 1, 1)).unwrap();
        let mut mats = RegionMaterials::uniform(PlasticityParams::new(10.0, 0.3, 0.2, 5.0).unwrap());
        mats.0.insert(1, PlasticityParams::elastic(100.0, 0.3).unwrap());
        Fixture { rve: Rve::new(mesh.clone(), &mats).unwrap(), op: assemble_aux(&mesh, &param).unwrap(), mats }
    }

    fn tight() -> NewtonSettings {
        NewtonSettings { eps_rel: 1e-12, eps_abs: 1e-13, max_iter: 25 }
    }

    #[test]
    fn snapshots_are_tagged_by_sample_and_step() {
        let fx = fixture();
        let samples = draw_samples(SamplingScheme::Sobol, 2, 1, &LOAD_BOUNDS, fx.op.parameterization());
        let load = LoadProgram { shape: LoadShape::Triangle, steps: 4 };
        let snaps = collect_snapshots(&fx.rve, &fx.op, &samples, load, &NewtonSettings::default()).unwrap();
        assert_eq!(snaps.displacement.len(), 8);
        assert_eq!(snaps.displacement.tags, snaps.stress.tags);
        assert_eq!(snaps.displacement.tags[5], (1, 2));
        assert_eq!(snaps.stress.rows(), 4 * fx.rve.num_points());
    }

    #[test]
    fn failing_sample_is_reported_by_index() {
        let fx = fixture();
        let mut samples = draw_samples(SamplingScheme::Sobol, 2, 1, &LOAD_BOUNDS, fx.op.parameterization());
        samples[1].mu = GeometryParams(vec![50.0]);
        let load = LoadProgram { shape: LoadShape::Ramp, steps: 2 };
        match collect_snapshots(&fx.rve, &fx.op, &samples, load, &NewtonSettings::default()) {
            Err(Error::Sample { sample, .. }) => assert_eq!(sample, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn smoke_training_meets_cubature_tolerance() {
        let fx = fixture();
        let samples = draw_samples(SamplingScheme::Sobol, 2, 5, &LOAD_BOUNDS, fx.op.parameterization());
        let load = LoadProgram { shape: LoadShape::Triangle, steps: 4 };
        let snaps = collect_snapshots(&fx.rve, &fx.op, &samples, load, &NewtonSettings::default()).unwrap();
        let settings = RomSettings { modes: 2, stress_modes: 2, eps: 0.01, volume_row: true, full_quadrature: false };
        let (model, report) = train_rom(&fx.rve, &fx.mats, &snaps, &settings, TrainingMeta::untrained(fx.op.parameterization().clone())).unwrap();
        assert_eq!(model.num_modes(), 2);
        assert!(model.rule.achieved_residual <= 0.01);
        assert!(report.rule_points < report.full_points);
    }

    #[test]
    fn exact_limit_has_zero_validation_error() {
        let fx = fixture();
        let gram = h1_gram(&fx.rve.mesh, &fx.rve.quad, &fx.rve.dofs);
        let model = build_rom(
            full_space(&gram).unwrap(),
            EcmRule::full(&fx.rve.quad.weights),
            &fx.rve,
            &fx.mats,
            TrainingMeta::untrained(fx.op.parameterization().clone()),
        )
        .unwrap();
        let samples = draw_samples(SamplingScheme::Uniform, 2, 9, &LOAD_BOUNDS, fx.op.parameterization());
        let load = LoadProgram { shape: LoadShape::Triangle, steps: 4 };
        let errs = validate(&model, &fx.rve, &fx.op, &samples, load, &tight(), &tight()).unwrap();
        for e in errs {
            assert!(e.eps_p < 1e-8 && e.eps_w < 1e-8, "{e:?}");
        }
    }

    /// The POD projection is the best approximation in the span, so the
    /// surrogate fluctuation error on a training sample cannot beat it.
    #[test]
    fn fluctuation_error_is_bounded_below_by_projection() {
        let fx = fixture();
        let samples = draw_samples(SamplingScheme::Sobol, 2, 2, &LOAD_BOUNDS, fx.op.parameterization());
        let load = LoadProgram { shape: LoadShape::Triangle, steps: 4 };
        let snaps = collect_snapshots(&fx.rve, &fx.op, &samples, load, &tight()).unwrap();
        let settings = RomSettings { modes: 3, stress_modes: 3, eps: 0.01, volume_row: true, full_quadrature: true };
        let meta = TrainingMeta::untrained(fx.op.parameterization().clone());
        let (model, _) = train_rom(&fx.rve, &fx.mats, &snaps, &settings, meta).unwrap();
        let gram = h1_gram(&fx.rve.mesh, &fx.rve.quad, &fx.rve.dofs);
        let s = &samples[0];
        let morph = fx.op.solve_morph(&s.mu).unwrap();
        let full = solve_rve(&fx.rve, &morph, &load.for_sample(s).unwrap(), &tight(), &[]).unwrap();
        let w_full: Vec<Vec<f64>> = full.steps.iter().map(|st| st.w.clone()).collect();
        let w_proj: Vec<Vec<f64>> = w_full.iter().map(|w| model.reconstruct(&model.basis.project(&gram, w))).collect();
        // both measured in the parent-domain H1 norm the projection is optimal in
        let parent = crate::morph::MorphField::identity(fx.rve.mesh.num_nodes(), fx.rve.num_points());
        let proj = fluctuation_error(&fx.rve, &parent, &w_proj, &w_full).unwrap();
        let errs = validate(&model, &fx.rve, &fx.op, &samples[..1], load, &tight(), &tight()).unwrap();
        let rom = rom_solve(&model, &morph, &load.for_sample(s).unwrap(), &tight(), &[]).unwrap();
        let w_rom: Vec<Vec<f64>> = rom.steps.iter().map(|st| model.reconstruct(&st.a)).collect();
        let rom_parent = fluctuation_error(&fx.rve, &parent, &w_rom, &w_full).unwrap();
        assert!(rom_parent >= proj * (1.0 - 1e-9), "{rom_parent} < {proj}");
        assert!(errs[0].eps_w > 0.0);
    }
}
