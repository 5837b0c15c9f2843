//! `PODECM1` array container, and its use for snapshot sets and reduced
//! models. The byte layout is documented in `docs/formats.md`.

use crate::ecm::EcmRule;
use crate::error::{Error, Result};
use crate::material::PlasticityParams;
use crate::microfem::RegionMaterials;
use crate::podkit::{GramKind, ReducedBasis, SnapshotKind, SnapshotSet};
use crate::rom::{RomModel, TrainingMeta};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"PODECM1\0";
pub const VERSION: u32 = 1;
/// Written little-endian; reads back as this value only on matching byte order.
pub const ENDIAN_MARKER: u32 = 0x0102_0304;

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl ArrayData {
    fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::I64(v) => v.len(),
        }
    }

    fn dtype(&self) -> u8 {
        match self {
            ArrayData::F64(_) => 0,
            ArrayData::I64(_) => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl Array {
    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Array { shape, data: ArrayData::F64(data) }
    }

    pub fn i64(shape: Vec<usize>, data: Vec<i64>) -> Self {
        Array { shape, data: ArrayData::I64(data) }
    }
}

/// Named arrays plus string attributes, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub attributes: BTreeMap<String, String>,
    pub arrays: Vec<(String, Array)>,
}

impl Container {
    pub fn push(&mut self, name: &str, array: Array) {
        self.arrays.push((name.to_string(), array));
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::Format(format!("missing array '{name}'")))
    }

    pub fn f64s(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.get(name)? {
            Array { shape, data: ArrayData::F64(v) } => Ok((shape, v)),
            _ => Err(Error::Format(format!("array '{name}' is not f64"))),
        }
    }

    pub fn i64s(&self, name: &str) -> Result<(&[usize], &[i64])> {
        match self.get(name)? {
            Array { shape, data: ArrayData::I64(v) } => Ok((shape, v)),
            _ => Err(Error::Format(format!("array '{name}' is not i64"))),
        }
    }

    pub fn attr(&self, key: &str) -> Result<&str> {
        self.attributes.get(key).map(String::as_str).ok_or_else(|| Error::Format(format!("missing attribute '{key}'")))
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (name, a) in &self.arrays {
            if !seen.insert(name) {
                return Err(Error::Format(format!("duplicate array name '{name}'")));
            }
            let n: usize = a.shape.iter().product();
            if n != a.data.len() {
                return Err(Error::Payload { name: name.clone(), message: format!("shape {:?} does not hold {} values", a.shape, a.data.len()) });
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut body = Vec::new();
        let attrs = serde_json::to_vec(&self.attributes).map_err(|e| Error::Format(e.to_string()))?;
        body.extend((attrs.len() as u64).to_le_bytes());
        body.extend(&attrs);
        body.extend((self.arrays.len() as u64).to_le_bytes());
        let mut offset = 0u64;
        for (name, a) in &self.arrays {
            body.extend((name.len() as u32).to_le_bytes());
            body.extend(name.as_bytes());
            body.push(a.data.dtype());
            body.extend((a.shape.len() as u32).to_le_bytes());
            for s in &a.shape {
                body.extend((*s as u64).to_le_bytes());
            }
            let len = 8 * a.data.len() as u64;
            body.extend(offset.to_le_bytes());
            body.extend(len.to_le_bytes());
            offset += len;
        }
        for (_, a) in &self.arrays {
            match &a.data {
                ArrayData::F64(v) => v.iter().for_each(|x| body.extend(x.to_le_bytes())),
                ArrayData::I64(v) => v.iter().for_each(|x| body.extend(x.to_le_bytes())),
            }
        }
        let mut out = Vec::with_capacity(body.len() + 48);
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend(ENDIAN_MARKER.to_le_bytes());
        out.extend(Sha256::digest(&body));
        out.extend(body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a PODECM1 container (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        if u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) != ENDIAN_MARKER {
            return Err(Error::Format("byte order marker mismatch".into()));
        }
        let mut r = Reader { bytes, pos: 16 };
        let checksum = r.take(32, "header")?.to_vec();
        let body_start = r.pos;
        let attr_len = r.u64("header")? as usize;
        let attributes: BTreeMap<String, String> =
            serde_json::from_slice(r.take(attr_len, "attributes")?).map_err(|e| Error::Format(format!("attributes: {e}")))?;
        let n = r.u64("header")? as usize;
        let mut dir = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name_len = r.u32("directory")? as usize;
            let name = String::from_utf8(r.take(name_len, "directory")?.to_vec()).map_err(|_| Error::Format("array name is not UTF-8".into()))?;
            let dtype = r.take(1, "directory")?[0];
            let ndim = r.u32("directory")? as usize;
            let shape = (0..ndim).map(|_| r.u64("directory").map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let offset = r.u64("directory")? as usize;
            let len = r.u64("directory")? as usize;
            dir.push((name, dtype, shape, offset, len));
        }
        let payload_start = r.pos;
        let mut arrays = Vec::with_capacity(dir.len());
        let mut expected_offset = 0;
        for (name, dtype, shape, offset, len) in dir {
            let payload_err = |m: &str| Error::Payload { name: name.clone(), message: m.to_string() };
            let count = shape.iter().try_fold(1usize, |a, &s| a.checked_mul(s)).and_then(|c| c.checked_mul(8));
            if offset != expected_offset || count != Some(len) {
                return Err(payload_err("directory entry is inconsistent with its shape"));
            }
            let start = payload_start + offset;
            let raw = start.checked_add(len).and_then(|end| bytes.get(start..end)).ok_or_else(|| payload_err("truncated payload"))?;
            expected_offset += len;
            let words = raw.chunks_exact(8).map(|c| c.try_into().expect("8 bytes"));
            let data = match dtype {
                0 => ArrayData::F64(words.map(f64::from_le_bytes).collect()),
                1 => ArrayData::I64(words.map(i64::from_le_bytes).collect()),
                t => return Err(payload_err(&format!("unknown element type {t}"))),
            };
            arrays.push((name, Array { shape, data }));
        }
        let end = payload_start + expected_offset;
        if bytes.len() != end {
            return Err(Error::Format(format!("container has {} trailing bytes", bytes.len().saturating_sub(end))));
        }
        if Sha256::digest(&bytes[body_start..]).as_slice() != checksum.as_slice() {
            return Err(Error::Format("checksum mismatch: container is corrupted".into()));
        }
        let c = Container { attributes, arrays };
        c.validate()?;
        Ok(c)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn write_container(path: impl AsRef<Path>, c: &Container) -> Result<()> {
    write_atomic(path, &c.to_bytes()?)
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container> {
    Container::from_bytes(&std::fs::read(path)?)
}

fn gram_name(k: GramKind) -> &'static str {
    match k {
        GramKind::H1 => "H1",
        GramKind::L2 => "L2",
    }
}

fn parse_gram(s: &str) -> Result<GramKind> {
    match s {
        "H1" => Ok(GramKind::H1),
        "L2" => Ok(GramKind::L2),
        _ => Err(Error::Format(format!("unknown gram kind '{s}'"))),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Format(e.to_string()))
}

fn from_json<T: serde::de::DeserializeOwned>(s: &str, what: &str) -> Result<T> {
    serde_json::from_str(s).map_err(|e| Error::Format(format!("{what}: {e}")))
}

fn expect_shape(name: &str, got: &[usize], want: &[usize]) -> Result<()> {
    if got != want {
        return Err(Error::Payload { name: name.into(), message: format!("shape {got:?}, expected {want:?}") });
    }
    Ok(())
}

fn params_row(p: &PlasticityParams) -> [f64; 4] {
    [p.e, p.nu, p.sigma_y0, p.h]
}

fn params_from(v: &[f64]) -> PlasticityParams {
    PlasticityParams { e: v[0], nu: v[1], sigma_y0: v[2], h: v[3] }
}

/// Displacement and weighted-stress snapshots in one container.
pub fn snapshots_to_container(disp: &SnapshotSet, stress: &SnapshotSet) -> Result<Container> {
    if disp.kind != SnapshotKind::Displacement || stress.kind != SnapshotKind::WeightedStress || disp.tags != stress.tags {
        return Err(Error::InvalidArgument("snapshot sets must be a displacement/stress pair with matching tags".into()));
    }
    let mut c = Container::default();
    c.attributes.insert("kind".into(), "snapshots".into());
    c.push("displacement", Array::f64(vec![disp.len(), disp.rows()], disp.columns().concat()));
    c.push("weighted_stress", Array::f64(vec![stress.len(), stress.rows()], stress.columns().concat()));
    c.push("tags", Array::i64(vec![disp.len(), 2], disp.tags.iter().flat_map(|&(s, k)| [s as i64, k as i64]).collect()));
    Ok(c)
}

pub fn snapshots_from_container(c: &Container) -> Result<(SnapshotSet, SnapshotSet)> {
    let (ts, tags) = c.i64s("tags")?;
    let m = ts.first().copied().unwrap_or(0);
    let mut out = Vec::new();
    for (name, kind) in [("displacement", SnapshotKind::Displacement), ("weighted_stress", SnapshotKind::WeightedStress)] {
        let (shape, v) = c.f64s(name)?;
        if shape.len() != 2 || shape[0] != m {
            return Err(Error::Payload { name: name.into(), message: format!("shape {shape:?} does not match {m} tags") });
        }
        let mut s = SnapshotSet::new(kind, shape[1]);
        for j in 0..m {
            s.push(tags[2 * j] as usize, tags[2 * j + 1] as usize, v[j * shape[1]..(j + 1) * shape[1]].to_vec())?;
        }
        out.push(s);
    }
    let stress = out.pop().expect("two sets");
    Ok((out.pop().expect("two sets"), stress))
}

pub fn rom_to_container(m: &RomModel) -> Result<Container> {
    let n = m.num_modes();
    let q = m.num_rule_points();
    let mut c = Container::default();
    c.attributes.insert("kind".into(), "rom_model".into());
    c.attributes.insert("mesh_fingerprint".into(), m.fingerprint.clone());
    c.attributes.insert("gram_kind".into(), gram_name(m.basis.gram_kind).into());
    c.attributes.insert("metadata".into(), to_json(&m.meta)?);
    c.push("modes", Array::f64(vec![n, m.basis.dim], m.basis.modes.clone()));
    c.push("singular_values", Array::f64(vec![m.basis.singular_values.len()], m.basis.singular_values.clone()));
    c.push("mode_gradients", Array::f64(vec![q, n, 4], m.gradients.iter().flatten().copied().collect()));
    c.push("ecm_ids", Array::i64(vec![q], m.rule.point_ids.iter().map(|&v| v as i64).collect()));
    c.push("ecm_weights", Array::f64(vec![q], m.rule.weights.clone()));
    c.push("params", Array::f64(vec![q, 4], m.point_params.iter().flat_map(params_row).collect()));
    let tags: Vec<i64> = m.materials.0.keys().copied().collect();
    c.push("region_tags", Array::i64(vec![tags.len()], tags));
    c.push("region_params", Array::f64(vec![m.materials.0.len(), 4], m.materials.0.values().flat_map(params_row).collect()));
    c.push("scalars", Array::f64(vec![3], vec![m.rule.achieved_residual, m.cell_volume, m.num_full_points as f64]));
    Ok(c)
}

pub fn rom_from_container(c: &Container) -> Result<RomModel> {
    if c.attr("kind")? != "rom_model" {
        return Err(Error::Format(format!("container holds '{}', not a reduced model", c.attr("kind")?)));
    }
    let (ms, modes) = c.f64s("modes")?;
    if ms.len() != 2 {
        return Err(Error::Payload { name: "modes".into(), message: "expected a 2-d array".into() });
    }
    let (n, dim) = (ms[0], ms[1]);
    let (_, ids) = c.i64s("ecm_ids")?;
    let q = ids.len();
    let (ws, weights) = c.f64s("ecm_weights")?;
    expect_shape("ecm_weights", ws, &[q])?;
    let (gs, grads) = c.f64s("mode_gradients")?;
    expect_shape("mode_gradients", gs, &[q, n, 4])?;
    let (ps, params) = c.f64s("params")?;
    expect_shape("params", ps, &[q, 4])?;
    let (_, tags) = c.i64s("region_tags")?;
    let (rs, rparams) = c.f64s("region_params")?;
    expect_shape("region_params", rs, &[tags.len(), 4])?;
    let (ss, scalars) = c.f64s("scalars")?;
    expect_shape("scalars", ss, &[3])?;
    let (_, sv) = c.f64s("singular_values")?;
    let point_ids: Vec<usize> = ids.iter().map(|&v| usize::try_from(v)).collect::<std::result::Result<_, _>>().map_err(|_| Error::Format("negative cubature point id".into()))?;
    let model = RomModel {
        basis: ReducedBasis { gram_kind: parse_gram(c.attr("gram_kind")?)?, dim, modes: modes.to_vec(), singular_values: sv.to_vec() },
        rule: EcmRule { point_ids, weights: weights.to_vec(), achieved_residual: scalars[0] },
        gradients: grads.chunks_exact(4).map(|g| [g[0], g[1], g[2], g[3]]).collect(),
        point_params: params.chunks_exact(4).map(params_from).collect(),
        materials: RegionMaterials(tags.iter().zip(rparams.chunks_exact(4)).map(|(t, p)| (*t, params_from(p))).collect()),
        fingerprint: c.attr("mesh_fingerprint")?.to_string(),
        num_full_points: scalars[2] as usize,
        cell_volume: scalars[1],
        meta: from_json::<TrainingMeta>(c.attr("metadata")?, "metadata")?,
    };
    model.rule.validate(model.num_full_points)?;
    Ok(model)
}

pub fn save_rom(path: impl AsRef<Path>, m: &RomModel) -> Result<()> {
    write_container(path, &rom_to_container(m)?)
}

pub fn load_rom(path: impl AsRef<Path>) -> Result<RomModel> {
    rom_from_container(&read_container(path)?)
}

/// Hex SHA-256 of a file, for run manifests.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Parameterization;
    use proptest::prelude::*;

    fn sample() -> Container {
        let mut c = Container::default();
        c.attributes.insert("note".into(), "x".into());
        c.push("a", Array::f64(vec![2, 3], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, -2.5, 3.0]));
        c.push("ids", Array::i64(vec![3], vec![-1, 0, i64::MAX]));
        c
    }

    #[test]
    fn empty_container_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.podecm");
        write_container(&p, &Container::default()).unwrap();
        assert_eq!(read_container(&p).unwrap(), Container::default());
    }

    #[test]
    fn arrays_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.podecm");
        let c = sample();
        write_container(&p, &c).unwrap();
        let back = read_container(&p).unwrap();
        let (_, a) = back.f64s("a").unwrap();
        let (_, b) = c.f64s("a").unwrap();
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(back, c);
        // no temporary file left behind
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut c = sample();
        c.push("a", Array::f64(vec![1], vec![0.0]));
        assert!(matches!(c.to_bytes(), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_magic_and_version_are_rejected() {
        let mut b = sample().to_bytes().unwrap();
        b[0] = b'X';
        assert!(matches!(Container::from_bytes(&b), Err(Error::Format(m)) if m.contains("magic")));
        let mut b = sample().to_bytes().unwrap();
        b[8] = 9;
        assert!(matches!(Container::from_bytes(&b), Err(Error::Format(m)) if m.contains("version")));
    }

    #[test]
    fn truncated_payload_names_the_array() {
        let b = sample().to_bytes().unwrap();
        let cut = &b[..b.len() - 4];
        match Container::from_bytes(cut) {
            Err(Error::Payload { name, .. }) => assert_eq!(name, "ids"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut c = Container::default();
        c.push("bad", Array::f64(vec![2, 2], vec![1.0; 3]));
        assert!(matches!(c.to_bytes(), Err(Error::Payload { .. })));
    }

    #[test]
    fn rom_model_round_trips() {
        let model = RomModel {
            basis: ReducedBasis { gram_kind: GramKind::H1, dim: 3, modes: vec![1.0, 0.0, 0.5, 0.0, 1.0, 0.25], singular_values: vec![2.0, 1.0] },
            rule: EcmRule { point_ids: vec![1, 4], weights: vec![0.4, 0.6], achieved_residual: 0.003 },
            gradients: vec![[0.1, 0.2, 0.3, 0.4], [0.0, 1.0, 0.0, -1.0], [1.5, 0.0, 0.0, 2.0], [0.7, 0.7, 0.7, 0.7]],
            point_params: vec![PlasticityParams::new(10.0, 0.3, 0.2, 5.0).unwrap(), PlasticityParams::elastic(100.0, 0.3).unwrap()],
            materials: RegionMaterials::uniform(PlasticityParams::new(10.0, 0.3, 0.2, 5.0).unwrap()),
            fingerprint: "abc".into(),
            num_full_points: 6,
            cell_volume: 1.0,
            meta: TrainingMeta::untrained(Parameterization::Fixed),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.podecm");
        save_rom(&p, &model).unwrap();
        assert_eq!(load_rom(&p).unwrap(), model);
        let again = dir.path().join("m2.podecm");
        save_rom(&again, &load_rom(&p).unwrap()).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn snapshot_pair_round_trips() {
        let mut d = SnapshotSet::new(SnapshotKind::Displacement, 2);
        let mut s = SnapshotSet::new(SnapshotKind::WeightedStress, 4);
        for k in 0..3 {
            d.push(1, k, vec![k as f64, 1.0]).unwrap();
            s.push(1, k, vec![0.5 * k as f64; 4]).unwrap();
        }
        let c = Container::from_bytes(&snapshots_to_container(&d, &s).unwrap().to_bytes().unwrap()).unwrap();
        let (d2, s2) = snapshots_from_container(&c).unwrap();
        assert_eq!((d2, s2), (d, s));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn single_bit_corruption_is_detected(bit in 0usize..10_000) {
            let b = sample().to_bytes().unwrap();
            let mut bad = b.clone();
            let i = bit % (8 * b.len());
            bad[i / 8] ^= 1 << (i % 8);
            prop_assert!(Container::from_bytes(&bad).is_err());
        }

        #[test]
        fn random_arrays_round_trip(v in proptest::collection::vec(any::<f64>(), 0..50), w in proptest::collection::vec(any::<i64>(), 0..20)) {
            let mut c = Container::default();
            c.push("v", Array::f64(vec![v.len()], v.clone()));
            c.push("w", Array::i64(vec![w.len()], w.clone()));
            let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
            let (_, v2) = back.f64s("v").unwrap();
            prop_assert!(v2.iter().zip(&v).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(back.i64s("w").unwrap().1, &w[..]);
        }
    }
}
