//! Volumes, voxel sets and tissue masks, plus the raw + JSON sidecar file format.
//!
//! A volume on disk is two files sharing a base name: `<name>.json` holds the
//! header and `<name>.raw` the payload. Float volumes use dtype `"f32le"`,
//! masks use `"u8"`. Voxels are stored x-fastest, then y, then z.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DTYPE_F32: &str = "f32le";
pub const DTYPE_U8: &str = "u8";
pub const ORDER_X_FASTEST: &str = "x-fastest";

/// Grid shape and physical voxel size shared by volumes and masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid("dims", format!("{dims:?} has a zero axis")));
        }
        if spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid(
                "spacing_mm",
                format!("{spacing_mm:?} must be finite and positive"),
            ));
        }
        Ok(Self { dims, spacing_mm })
    }

    #[inline]
    pub fn n_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[0];
        let rest = index / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Errors unless `other` has identical dims and spacing.
    pub fn ensure_matches(&self, other: &Geometry) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                actual: other.dims,
            });
        }
        if self.spacing_mm != other.spacing_mm {
            return Err(Error::SpacingMismatch {
                expected: self.spacing_mm,
                actual: other.spacing_mm,
            });
        }
        Ok(())
    }
}

/// A 3D scalar image with finite 32-bit voxel values.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    geometry: Geometry,
    data: Vec<f32>,
    modality_tag: String,
}

impl Volume {
    pub fn new(geometry: Geometry, data: Vec<f32>, modality_tag: impl Into<String>) -> Result<Self> {
        if data.len() != geometry.n_voxels() {
            return Err(Error::invalid(
                "volume data",
                format!(
                    "length {} does not match dims {:?}",
                    data.len(),
                    geometry.dims
                ),
            ));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "volume data",
                format!("non-finite value at voxel {index}"),
            ));
        }
        Ok(Self {
            geometry,
            data,
            modality_tag: modality_tag.into(),
        })
    }

    pub fn filled(geometry: Geometry, value: f32) -> Self {
        assert!(value.is_finite());
        Self {
            data: vec![value; geometry.n_voxels()],
            geometry,
            modality_tag: String::new(),
        }
    }

    /// Builds a volume from a per-voxel function of (x, y, z).
    pub fn from_fn(geometry: Geometry, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let [nx, ny, nz] = geometry.dims;
        let mut data = Vec::with_capacity(geometry.n_voxels());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(geometry, data, "")
    }

    /// Same geometry and tag, new data. Values must be finite.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.geometry, data, self.modality_tag.clone())
    }

    pub fn with_modality(mut self, tag: impl Into<String>) -> Self {
        self.modality_tag = tag.into();
        self
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.geometry.spacing_mm
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn modality_tag(&self) -> &str {
        &self.modality_tag
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.geometry.index(x, y, z)]
    }

    /// Values of the voxels in `set`, in storage order.
    pub fn values_in(&self, set: &VoxelSet) -> Vec<f32> {
        set.iter().map(|i| self.data[i]).collect()
    }

    /// `(min, max)` over all voxels.
    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// A subset of the voxels of a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelSet {
    dims: [usize; 3],
    members: Vec<bool>,
}

impl VoxelSet {
    pub fn empty(dims: [usize; 3]) -> Self {
        Self {
            dims,
            members: vec![false; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn full(dims: [usize; 3]) -> Self {
        Self {
            dims,
            members: vec![true; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_members(dims: [usize; 3], members: Vec<bool>) -> Self {
        assert_eq!(members.len(), dims[0] * dims[1] * dims[2]);
        Self { dims, members }
    }

    pub fn from_predicate(dims: [usize; 3], f: impl Fn(usize) -> bool) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Self {
            dims,
            members: (0..n).map(f).collect(),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn contains(&self, index: usize) -> bool {
        self.members[index]
    }

    #[inline]
    pub fn insert(&mut self, index: usize) {
        self.members[index] = true;
    }

    #[inline]
    pub fn remove(&mut self, index: usize) {
        self.members[index] = false;
    }

    pub fn members(&self) -> &[bool] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.members.iter().any(|&m| m)
    }

    /// Member indices in ascending storage order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }

    pub fn union(&self, other: &VoxelSet) -> VoxelSet {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &VoxelSet) -> VoxelSet {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &VoxelSet) -> VoxelSet {
        self.zip_with(other, |a, b| a && !b)
    }

    fn zip_with(&self, other: &VoxelSet, f: impl Fn(bool, bool) -> bool) -> VoxelSet {
        assert_eq!(self.dims, other.dims, "voxel sets over different grids");
        VoxelSet {
            dims: self.dims,
            members: self
                .members
                .iter()
                .zip(&other.members)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Sørensen–Dice overlap; 1.0 when both sets are empty.
    pub fn dice(&self, other: &VoxelSet) -> f64 {
        let inter = self.intersection(other).len();
        let total = self.len() + other.len();
        if total == 0 {
            1.0
        } else {
            2.0 * inter as f64 / total as f64
        }
    }

    /// Mean voxel coordinate (index space).
    pub fn centroid(&self) -> Option<[f64; 3]> {
        let geometry = Geometry {
            dims: self.dims,
            spacing_mm: [1.0; 3],
        };
        let mut sum = [0.0f64; 3];
        let mut n = 0usize;
        for i in self.iter() {
            let c = geometry.coords(i);
            for a in 0..3 {
                sum[a] += c[a] as f64;
            }
            n += 1;
        }
        (n > 0).then(|| sum.map(|s| s / n as f64))
    }
}

/// Tissue classes and their on-disk label codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Tissue {
    Background = 0,
    Air = 1,
    Fat = 2,
    Dense = 3,
    Heart = 4,
    Tumor = 5,
}

impl Tissue {
    pub const ALL: [Tissue; 6] = [
        Tissue::Background,
        Tissue::Air,
        Tissue::Fat,
        Tissue::Dense,
        Tissue::Heart,
        Tissue::Tumor,
    ];

    /// The four control-point tissues, in their conventional order.
    pub const ANCHORS: [Tissue; 4] = [Tissue::Air, Tissue::Fat, Tissue::Dense, Tissue::Heart];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Tissue> {
        Tissue::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Tissue::Background => "background",
            Tissue::Air => "air",
            Tissue::Fat => "fat",
            Tissue::Dense => "dense",
            Tissue::Heart => "heart",
            Tissue::Tumor => "tumor",
        }
    }
}

impl fmt::Display for Tissue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-voxel tissue labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueMask {
    geometry: Geometry,
    labels: Vec<u8>,
}

impl TissueMask {
    pub fn new(geometry: Geometry, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != geometry.n_voxels() {
            return Err(Error::invalid(
                "mask labels",
                format!(
                    "length {} does not match dims {:?}",
                    labels.len(),
                    geometry.dims
                ),
            ));
        }
        if let Some(index) = labels.iter().position(|&c| Tissue::from_code(c).is_none()) {
            return Err(Error::IllegalLabel {
                code: labels[index],
                index,
            });
        }
        Ok(Self { geometry, labels })
    }

    pub fn background(geometry: Geometry) -> Self {
        Self {
            labels: vec![0; geometry.n_voxels()],
            geometry,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label_at(&self, index: usize) -> Tissue {
        Tissue::from_code(self.labels[index]).expect("labels validated at construction")
    }

    pub fn voxels(&self, tissue: Tissue) -> VoxelSet {
        let code = tissue.code();
        VoxelSet::from_predicate(self.geometry.dims, |i| self.labels[i] == code)
    }

    pub fn count(&self, tissue: Tissue) -> usize {
        let code = tissue.code();
        self.labels.iter().filter(|&&c| c == code).count()
    }

    /// Voxel count per label code 0..=5.
    pub fn histogram(&self) -> [usize; 6] {
        let mut h = [0usize; 6];
        for &c in &self.labels {
            h[c as usize] += 1;
        }
        h
    }

    /// Overwrites the given voxels with `tissue`.
    pub fn paint(&mut self, set: &VoxelSet, tissue: Tissue) {
        assert_eq!(set.dims(), self.geometry.dims);
        let code = tissue.code();
        for i in set.iter() {
            self.labels[i] = code;
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: String,
    order: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    modality: String,
}

/// `(header, payload)` paths for a volume reference. Accepts the base name or
/// either of the two file names.
pub fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
    let base = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = OsString::from(base.as_os_str());
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".json"), with(".raw"))
}

fn read_sidecar(header_path: &Path, dtype: &'static str) -> Result<(Sidecar, Geometry)> {
    if !header_path.exists() {
        return Err(Error::MissingFile(header_path.to_path_buf()));
    }
    let text = std::fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header: Sidecar =
        serde_json::from_str(&text).map_err(|e| Error::parse(header_path, &e))?;
    if header.dtype != dtype {
        return Err(Error::UnsupportedDtype {
            path: header_path.to_path_buf(),
            dtype: header.dtype,
            expected: dtype,
        });
    }
    if header.order != ORDER_X_FASTEST {
        return Err(Error::invalid(
            "order",
            format!("{}: {:?}", header_path.display(), header.order),
        ));
    }
    let geometry = Geometry::new(header.dims, header.spacing_mm)?;
    Ok((header, geometry))
}

fn read_payload(payload_path: &Path, expected: u64) -> Result<Vec<u8>> {
    if !payload_path.exists() {
        return Err(Error::MissingFile(payload_path.to_path_buf()));
    }
    let bytes = std::fs::read(payload_path).map_err(|e| Error::io(payload_path, e))?;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: payload_path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(bytes)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let (header_path, payload_path) = sidecar_paths(path.as_ref());
    let (header, geometry) = read_sidecar(&header_path, DTYPE_F32)?;
    let bytes = read_payload(&payload_path, 4 * geometry.n_voxels() as u64)?;
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            path: payload_path,
            index,
        });
    }
    Ok(Volume {
        geometry,
        data,
        modality_tag: header.modality,
    })
}

pub fn save_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let (header_path, payload_path) = sidecar_paths(path.as_ref());
    let mut payload = Vec::with_capacity(4 * volume.data.len());
    for v in &volume.data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&payload_path, &payload)?;
    write_sidecar(&header_path, &volume.geometry, DTYPE_F32, &volume.modality_tag)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<TissueMask> {
    let (header_path, payload_path) = sidecar_paths(path.as_ref());
    let (_, geometry) = read_sidecar(&header_path, DTYPE_U8)?;
    let labels = read_payload(&payload_path, geometry.n_voxels() as u64)?;
    TissueMask::new(geometry, labels)
}

pub fn save_mask(mask: &TissueMask, path: impl AsRef<Path>) -> Result<()> {
    let (header_path, payload_path) = sidecar_paths(path.as_ref());
    write_atomic(&payload_path, &mask.labels)?;
    write_sidecar(&header_path, &mask.geometry, DTYPE_U8, "mask")
}

fn write_sidecar(path: &Path, geometry: &Geometry, dtype: &str, modality: &str) -> Result<()> {
    let header = Sidecar {
        dims: geometry.dims,
        spacing_mm: geometry.spacing_mm,
        dtype: dtype.to_string(),
        order: ORDER_X_FASTEST.to_string(),
        modality: modality.to_string(),
    };
    let mut text = serde_json::to_string_pretty(&header).expect("sidecar serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
