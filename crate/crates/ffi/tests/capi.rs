use podecm::material::PlasticityParams;
use podecm::mesh::generate::{single_inclusion_rve, Resolution};
use podecm::microfem::{NewtonSettings, RegionMaterials, Rve};
use podecm::morph::assemble_aux;
use podecm::offline::{collect_snapshots, draw_samples, train_rom, LoadProgram, LoadShape, RomSettings, Sample, SamplingScheme};
use podecm::rom::{rom_solve, TrainingMeta};
use podecm::store::save_rom;
use podecm::geometry::GeometryParams;
use podecm_ffi::*;
use std::ffi::{c_char, CString};
use std::path::Path;
use std::ptr;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { podecm_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf.iter().take(n.min(255)).map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

/// Trains a small surrogate and writes it next to its parent mesh.
fn write_fixture(dir: &Path) -> (podecm::rom::RomModel, podecm::morph::MorphOperator) {
    let (mesh, param) = single_inclusion_rve(Resolution::new(3, 1, 1)).unwrap();
    let mut mats = RegionMaterials::uniform(PlasticityParams::new(10.0, 0.3, 0.2, 5.0).unwrap());
    mats.0.insert(1, PlasticityParams::elastic(100.0, 0.3).unwrap());
    let rve = Rve::new(mesh.clone(), &mats).unwrap();
    let op = assemble_aux(&mesh, &param).unwrap();
    let bounds = [[0.9, 1.1], [0.9, 1.1], [-0.1, 0.1]];
    let samples = draw_samples(SamplingScheme::Sobol, 2, 4, &bounds, &param);
    let load = LoadProgram { shape: LoadShape::Triangle, steps: 4 };
    let snaps = collect_snapshots(&rve, &op, &samples, load, &NewtonSettings::default()).unwrap();
    let settings = RomSettings { modes: 3, stress_modes: 3, eps: 0.01, volume_row: true, full_quadrature: false };
    let (model, _) = train_rom(&rve, &mats, &snaps, &settings, TrainingMeta::untrained(param)).unwrap();
    save_rom(dir.join("model.podecm"), &model).unwrap();
    mesh.save(dir.join("parent.mesh")).unwrap();
    (model, op)
}

#[test]
fn solve_through_c_abi_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (model, op) = write_fixture(dir.path());
    let mut h: *mut PodecmModel = ptr::null_mut();
    let st = unsafe { podecm_model_load(cstr(&dir.path().join("model.podecm")).as_ptr(), cstr(&dir.path().join("parent.mesh")).as_ptr(), &mut h) };
    assert_eq!(st, PodecmStatus::Ok, "{}", last_error());
    unsafe {
        assert_eq!(podecm_model_num_modes(h), 3);
        assert_eq!(podecm_model_num_params(h), 1);
        assert_eq!(podecm_model_num_rule_points(h), model.num_rule_points());
    }

    let sample = Sample { stretch: [1.05, 0.97, 0.03], mu: GeometryParams(vec![0.9]) };
    let load = LoadProgram { shape: LoadShape::Triangle, steps: 4 }.for_sample(&sample).unwrap();
    let f: Vec<f64> = load.steps.iter().flat_map(|m| [m[0][0], m[0][1], m[1][0], m[1][1]]).collect();
    let mut p = vec![f64::NAN; f.len()];
    let st = unsafe { podecm_model_solve(h, sample.mu.0.as_ptr(), 1, f.as_ptr(), load.steps.len(), p.as_mut_ptr()) };
    assert_eq!(st, PodecmStatus::Ok, "{}", last_error());

    let morph = op.solve_morph(&sample.mu).unwrap();
    let direct = rom_solve(&model, &morph, &load, &NewtonSettings::default(), &[]).unwrap();
    for (k, pb) in direct.pbar().iter().enumerate() {
        assert_eq!(&p[4 * k..4 * k + 4], &[pb[0][0], pb[0][1], pb[1][0], pb[1][1]]);
    }
    unsafe { podecm_model_free(h) };
}

#[test]
fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cstr(&dir.path().join("absent.podecm"));
    let mut h: *mut PodecmModel = ptr::null_mut();
    unsafe {
        assert_eq!(podecm_model_load(missing.as_ptr(), missing.as_ptr(), &mut h), PodecmStatus::Io);
        assert!(h.is_null());
        assert!(last_error().contains("I/O"));
        assert_eq!(podecm_model_load(ptr::null(), missing.as_ptr(), &mut h), PodecmStatus::NullPointer);
        assert_eq!(podecm_model_load(missing.as_ptr(), missing.as_ptr(), ptr::null_mut()), PodecmStatus::NullPointer);

        std::fs::write(dir.path().join("junk.podecm"), b"not a container").unwrap();
        let junk = cstr(&dir.path().join("junk.podecm"));
        assert_eq!(podecm_model_load(junk.as_ptr(), missing.as_ptr(), &mut h), PodecmStatus::Format);

        assert_eq!(podecm_model_num_modes(ptr::null()), 0);
        podecm_model_free(ptr::null_mut());
        let f = [1.0, 0.0, 0.0, 1.0];
        let mut p = [0.0; 4];
        assert_eq!(podecm_model_solve(ptr::null(), ptr::null(), 0, f.as_ptr(), 1, p.as_mut_ptr()), PodecmStatus::NullPointer);
    }
}

#[test]
fn bad_inputs_are_rejected_without_panicking() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let mut h: *mut PodecmModel = ptr::null_mut();
    unsafe {
        let st = podecm_model_load(cstr(&dir.path().join("model.podecm")).as_ptr(), cstr(&dir.path().join("parent.mesh")).as_ptr(), &mut h);
        assert_eq!(st, PodecmStatus::Ok);
        let mut p = [0.0; 8];
        // first gradient must be the identity
        let f = [1.1, 0.0, 0.0, 1.0, 1.2, 0.0, 0.0, 1.0];
        assert_eq!(podecm_model_solve(h, [0.9].as_ptr(), 1, f.as_ptr(), 2, p.as_mut_ptr()), PodecmStatus::InvalidArgument);
        let f = [1.0, 0.0, 0.0, 1.0, 1.01, 0.0, 0.0, 1.0];
        assert_eq!(podecm_model_solve(h, [0.9, 1.0].as_ptr(), 2, f.as_ptr(), 2, p.as_mut_ptr()), PodecmStatus::InvalidArgument);
        assert_eq!(podecm_model_set_tolerance(h, 0.0), PodecmStatus::InvalidArgument);
        assert_eq!(podecm_model_set_tolerance(h, 1e-10), PodecmStatus::Ok);
        assert_eq!(podecm_model_solve(h, [0.9].as_ptr(), 1, f.as_ptr(), 2, p.as_mut_ptr()), PodecmStatus::Ok);
        podecm_model_free(h);
    }
}

#[test]
fn header_is_generated() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/podecm.h")).unwrap();
    for sym in ["podecm_model_load", "podecm_model_solve", "podecm_last_error", "PODECM_STATUS_OK", "typedef struct PodecmModel PodecmModel"] {
        assert!(header.contains(sym), "missing {sym}");
    }
}
