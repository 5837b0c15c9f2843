//! Run configuration (TOML). Unknown keys are rejected; every check that
//! does not need a solve runs in [`RunConfig::load`].

use crate::error::{Error, Result};
use crate::geometry::{GeometryParams, Parameterization};
use crate::material::PlasticityParams;
use crate::mesh::generate::{composite_rve, porous_rve, single_inclusion_rve, Resolution};
use crate::mesh::{load_mesh, Mesh};
use crate::microfem::{NewtonSettings, RegionMaterials};
use crate::offline::{LoadProgram, LoadShape, RomSettings, SamplingScheme};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory; `--out` takes precedence.
    pub out: Option<PathBuf>,
    pub mesh: MeshConfig,
    /// Required for file meshes; overrides the built-in parameterization otherwise.
    pub geometry: Option<Parameterization>,
    /// Material parameters keyed by region tag.
    pub materials: BTreeMap<String, MaterialConfig>,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub load: LoadConfig,
    #[serde(default)]
    pub rom: RomConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub online: Option<OnlineConfig>,
    pub twoscale: Option<TwoScaleConfig>,
    pub propmap: Option<PropMapConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinMesh {
    Composite,
    SingleInclusion,
    Porous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub builtin: Option<BuiltinMesh>,
    /// `[segments, outer_layers, inner_layers]` for built-in meshes.
    pub resolution: Option<[usize; 3]>,
    /// Parent mesh file in the `mesh2d` text format, relative to the config file.
    pub path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    #[serde(rename = "E")]
    pub e: f64,
    pub nu: f64,
    /// Omitted for purely elastic regions.
    pub sigma_y0: Option<f64>,
    #[serde(rename = "H")]
    pub h: Option<f64>,
}

impl MaterialConfig {
    pub fn params(&self) -> Result<PlasticityParams> {
        match self.sigma_y0 {
            Some(s) => PlasticityParams::new(self.e, self.nu, s, self.h.unwrap_or(0.0)),
            None if self.h.is_some() => Err(Error::Config("hardening H given without sigma_y0".into())),
            None => PlasticityParams::elastic(self.e, self.nu),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub train: usize,
    pub scheme: SamplingScheme,
    pub seed: u64,
    pub test: usize,
    pub test_scheme: SamplingScheme,
    /// Defaults to `seed + 1`.
    pub test_seed: Option<u64>,
    /// Bounds of `[U_xx, U_yy, U_xy]`.
    pub load_bounds: [[f64; 2]; 3],
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            train: 20,
            scheme: SamplingScheme::Sobol,
            seed: 0,
            test: 100,
            test_scheme: SamplingScheme::Uniform,
            test_seed: None,
            load_bounds: [[0.9, 1.1], [0.9, 1.1], [-0.1, 0.1]],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadConfig {
    pub steps: usize,
    pub shape: LoadShape,
}

impl Default for LoadConfig {
    fn default() -> Self {
        LoadConfig { steps: 40, shape: LoadShape::Triangle }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RomConfig {
    pub modes: usize,
    pub stress_modes: usize,
    pub eps: f64,
    pub volume_row: bool,
    pub full_quadrature: bool,
}

impl Default for RomConfig {
    fn default() -> Self {
        RomConfig { modes: 20, stress_modes: 15, eps: 0.01, volume_row: true, full_quadrature: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub eps_newton: f64,
    pub eps_abs: f64,
    pub max_iter: usize,
    pub rom_eps_newton: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = NewtonSettings::default();
        SolverConfig { eps_newton: d.eps_rel, eps_abs: d.eps_abs, max_iter: d.max_iter, rom_eps_newton: d.eps_rel }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineConfig {
    /// Geometric parameters; the parent geometry when omitted.
    pub mu: Option<Vec<f64>>,
    /// `[U_xx, U_yy, U_xy]` at the peak of the load program.
    pub stretch: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamField {
    /// Every macro point uses the parent geometry.
    Parent,
    /// `v_void = 0.4 + 0.1 (1 - x)^2`, `kappa = 1.5 - 0.49 y`.
    GradedVoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoScaleConfig {
    pub nx: usize,
    pub ny: usize,
    pub width: f64,
    pub height: f64,
    pub peak: f64,
    pub steps: usize,
    pub eps_newton: f64,
    pub field: ParamField,
    /// Output directory of a full-engine run to compare against.
    pub baseline: Option<PathBuf>,
}

impl Default for TwoScaleConfig {
    fn default() -> Self {
        TwoScaleConfig {
            nx: 5,
            ny: 3,
            width: 2.0,
            height: 1.0,
            peak: 0.2,
            steps: 50,
            eps_newton: 1e-6,
            field: ParamField::GradedVoid,
            baseline: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropMapConfig {
    /// Grid values per geometric parameter; the map is their Cartesian product.
    pub axes: Vec<Vec<f64>>,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    0.001
}

/// Parent mesh, parameterization and materials resolved from a config.
pub struct Setup {
    pub mesh: Mesh,
    pub param: Parameterization,
    pub materials: RegionMaterials,
}

impl RunConfig {
    /// Reads, parses and validates a config; relative paths are resolved
    /// against the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.mesh.path, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(t) = &mut cfg.twoscale {
            if let Some(b) = &mut t.baseline {
                if b.is_relative() {
                    *b = base.join(&*b);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.mesh;
        match (&m.builtin, &m.path) {
            (Some(_), Some(_)) => return Err(Error::Config("mesh: give either builtin or path, not both".into())),
            (None, None) => return Err(Error::Config("mesh: builtin or path is required".into())),
            (None, Some(p)) => {
                if !p.is_file() {
                    return Err(Error::Config(format!("mesh file {} does not exist", p.display())));
                }
                if self.geometry.is_none() {
                    return Err(Error::Config("a file mesh needs a [geometry] parameterization".into()));
                }
            }
            (Some(_), None) => {}
        }
        if let Some(r) = m.resolution {
            if r.contains(&0) {
                return Err(Error::Config("mesh resolution entries must be positive".into()));
            }
        }
        if self.materials.is_empty() {
            return Err(Error::Config("at least one material region is required".into()));
        }
        for (tag, mat) in &self.materials {
            tag.parse::<i64>().map_err(|_| Error::Config(format!("material key '{tag}' is not an integer region tag")))?;
            mat.params().map_err(|e| Error::Config(format!("material {tag}: {e}")))?;
        }
        let check_box = |name: &str, b: &[f64; 2]| {
            if !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1]) {
                return Err(Error::Config(format!("{name} bounds {b:?} are degenerate")));
            }
            Ok(())
        };
        for (b, name) in self.sampling.load_bounds.iter().zip(["U_xx", "U_yy", "U_xy"]) {
            check_box(name, b)?;
        }
        if let Some(g) = &self.geometry {
            for (b, name) in g.bounds().iter().zip(g.parameter_names()) {
                check_box(name, b)?;
            }
        }
        if self.sampling.train == 0 {
            return Err(Error::Config("sampling.train must be positive".into()));
        }
        if self.load.steps == 0 || (self.load.shape == LoadShape::Triangle && self.load.steps % 4 != 0) {
            return Err(Error::Config(format!("load.steps = {} does not fit the {:?} shape", self.load.steps, self.load.shape)));
        }
        if self.load.shape == LoadShape::LoadUnload && self.load.steps % 2 != 0 {
            return Err(Error::Config("load.steps must be even for load_unload".into()));
        }
        let r = &self.rom;
        if r.modes == 0 || (!r.full_quadrature && (r.stress_modes == 0 || !(r.eps > 0.0))) {
            return Err(Error::Config("rom.modes, rom.stress_modes and rom.eps must be positive".into()));
        }
        let s = &self.solver;
        if !(s.eps_newton > 0.0 && s.rom_eps_newton > 0.0 && s.eps_abs >= 0.0) || s.max_iter == 0 {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if let Some(t) = &self.twoscale {
            if t.nx == 0 || t.ny == 0 || !(t.width > 0.0 && t.height > 0.0 && t.eps_newton > 0.0) || t.steps % 2 != 0 || t.steps == 0 {
                return Err(Error::Config("twoscale: mesh counts, sizes, tolerance and an even step count must be positive".into()));
            }
        }
        if let Some(p) = &self.propmap {
            if p.axes.iter().any(|a| a.is_empty()) || !(p.delta > 0.0 && p.delta < 1.0) {
                return Err(Error::Config("propmap: axes must be non-empty and delta in (0, 1)".into()));
            }
        }
        Ok(())
    }

    pub fn setup(&self) -> Result<Setup> {
        let res = self.mesh.resolution.map(|r| Resolution::new(r[0], r[1], r[2]));
        let (mesh, builtin_param) = match (&self.mesh.builtin, &self.mesh.path) {
            (Some(b), _) => {
                let res = res.unwrap_or(Resolution::new(4, 1, 1));
                let (m, p) = match b {
                    BuiltinMesh::Composite => composite_rve(res)?,
                    BuiltinMesh::SingleInclusion => single_inclusion_rve(res)?,
                    BuiltinMesh::Porous => porous_rve(res)?,
                };
                (m, Some(p))
            }
            (None, Some(p)) => (load_mesh(p)?, None),
            (None, None) => return Err(Error::Config("no mesh configured".into())),
        };
        let param = self.geometry.clone().or(builtin_param).ok_or_else(|| Error::Config("no parameterization".into()))?;
        let mut materials = BTreeMap::new();
        for (tag, m) in &self.materials {
            materials.insert(tag.parse::<i64>().map_err(|_| Error::Config(format!("bad region tag '{tag}'")))?, m.params()?);
        }
        for r in &mesh.regions {
            if !materials.contains_key(r) {
                return Err(Error::Config(format!("mesh region {r} has no material")));
            }
        }
        Ok(Setup { mesh, param, materials: RegionMaterials(materials) })
    }

    pub fn newton(&self) -> NewtonSettings {
        NewtonSettings { eps_rel: self.solver.eps_newton, eps_abs: self.solver.eps_abs, max_iter: self.solver.max_iter }
    }

    pub fn rom_newton(&self) -> NewtonSettings {
        NewtonSettings { eps_rel: self.solver.rom_eps_newton, ..self.newton() }
    }

    pub fn load_program(&self) -> LoadProgram {
        LoadProgram { shape: self.load.shape, steps: self.load.steps }
    }

    pub fn rom_settings(&self) -> RomSettings {
        let r = &self.rom;
        RomSettings { modes: r.modes, stress_modes: r.stress_modes, eps: r.eps, volume_row: r.volume_row, full_quadrature: r.full_quadrature }
    }

    pub fn test_seed(&self) -> u64 {
        self.sampling.test_seed.unwrap_or(self.sampling.seed.wrapping_add(1))
    }
}

/// Cartesian product of per-parameter grid axes, last axis fastest.
pub fn grid(axes: &[Vec<f64>]) -> Vec<GeometryParams> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out.into_iter().flat_map(|p| axis.iter().map(move |v| [p.clone(), vec![*v]].concat())).collect();
    }
    out.into_iter().map(GeometryParams).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
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
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.load.steps, 40);
        assert_eq!(c.sampling.scheme, SamplingScheme::Sobol);
        let s = c.setup().unwrap();
        assert_eq!(s.param.num_params(), 1);
        assert_eq!(s.materials.get(1).unwrap().sigma_y0, 1e12);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{MINIMAL}\n[rom]\nmodez = 3\n");
        assert!(matches!(RunConfig::parse(&bad), Err(Error::Config(m)) if m.contains("modez")));
        let bad = format!("colour = 1\n{MINIMAL}");
        assert!(RunConfig::parse(&bad).is_err());
    }

    #[test]
    fn missing_mesh_file_fails_before_solving() {
        let text = MINIMAL.replace("builtin = \"single_inclusion\"", "path = \"nowhere.mesh\"");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, text).unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::Config(m)) if m.contains("does not exist")));
    }

    #[test]
    fn degenerate_bounds_are_rejected() {
        let text = format!("{MINIMAL}\n[sampling]\nload_bounds = [[1.0, 1.0], [0.9, 1.1], [-0.1, 0.1]]\n");
        let c = RunConfig::parse(&text).unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("U_xx")));
    }

    #[test]
    fn triangle_needs_multiple_of_four_steps() {
        let text = format!("{MINIMAL}\n[load]\nsteps = 6\n");
        assert!(RunConfig::parse(&text).unwrap().validate().is_err());
    }

    #[test]
    fn grid_is_cartesian() {
        let g = grid(&[vec![0.4, 0.5], vec![1.0, 1.2, 1.5]]);
        assert_eq!(g.len(), 6);
        assert_eq!(g[1].0, vec![0.4, 1.2]);
        assert_eq!(g[5].0, vec![0.5, 1.5]);
    }
}
