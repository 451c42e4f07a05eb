//! Tissue masks for anchor extraction.
//!
//! Segmentation strategies implement [`Segmenter`] and are looked up by name
//! in a [`SegmenterRegistry`]. The built-in strategies are:
//!
//! * `external` - use the mask file named in the manifest.
//! * `classical` - threshold/geometry pipeline (air, breast, dense, heart).
//! * `auto` - `external` when the subject has a mask, else `classical`.

pub mod classical;
pub mod morphology;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::StudySeries;
use crate::volume::{load_mask, Geometry, Tissue, TissueMask, VoxelSet};

pub use classical::{
    chest_wall_rows, segment_air, segment_body, segment_breast, segment_dense, segment_heart,
    DenseSplit,
};

/// Which Otsu class of the breast is dense tissue.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensePolarity {
    /// Non-fat-suppressed T1: fat is bright, dense is the darker class.
    #[default]
    Darker,
    Brighter,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenseThresholdMethod {
    #[default]
    Otsu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    /// Registered segmenter name.
    pub method: String,
    pub air_fraction: f64,
    pub heart_enhancement_percentile: f64,
    pub dense_threshold_method: DenseThresholdMethod,
    pub dense_polarity: DensePolarity,
    pub min_component_voxels: usize,
    pub morphology_radius: usize,
    /// Fraction of the air-to-99th-percentile span added to the air
    /// threshold to separate body from background.
    pub body_threshold_fraction: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            method: "auto".to_string(),
            air_fraction: 0.05,
            heart_enhancement_percentile: 99.0,
            dense_threshold_method: DenseThresholdMethod::Otsu,
            dense_polarity: DensePolarity::Darker,
            min_component_voxels: 500,
            morphology_radius: 1,
            body_threshold_fraction: 0.2,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.air_fraction > 0.0 && self.air_fraction < 1.0) {
            return Err(Error::invalid(
                "segmentation.air_fraction",
                format!("{} not in (0, 1)", self.air_fraction),
            ));
        }
        if !(0.0..=100.0).contains(&self.heart_enhancement_percentile) {
            return Err(Error::invalid(
                "segmentation.heart_enhancement_percentile",
                format!("{} not in [0, 100]", self.heart_enhancement_percentile),
            ));
        }
        if self.min_component_voxels == 0 {
            return Err(Error::invalid("segmentation.min_component_voxels", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.body_threshold_fraction) {
            return Err(Error::invalid(
                "segmentation.body_threshold_fraction",
                format!("{} not in [0, 1)", self.body_threshold_fraction),
            ));
        }
        Ok(())
    }
}

/// Everything a segmenter may draw on for one subject.
pub struct SegmentationInput<'a> {
    pub series: &'a StudySeries,
    /// Resolved path of an externally supplied full tissue mask.
    pub external_mask: Option<PathBuf>,
    /// Externally supplied tumor voxels, painted over classical results.
    pub tumor: Option<VoxelSet>,
}

pub trait Segmenter: Send + Sync {
    fn name(&self) -> &'static str;

    fn segment(&self, input: &SegmentationInput<'_>) -> Result<TissueMask>;
}

/// Name-keyed collection of segmentation strategies.
pub struct SegmenterRegistry {
    entries: BTreeMap<&'static str, Box<dyn Segmenter>>,
}

impl SegmenterRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// The built-in strategies configured from `cfg`.
    pub fn with_defaults(cfg: &SegmentationConfig) -> Self {
        let mut r = Self::empty();
        r.register(Box::new(ClassicalSegmenter::new(cfg.clone())));
        r.register(Box::new(ExternalSegmenter));
        r.register(Box::new(AutoSegmenter {
            classical: ClassicalSegmenter::new(cfg.clone()),
        }));
        r
    }

    pub fn register(&mut self, segmenter: Box<dyn Segmenter>) {
        self.entries.insert(segmenter.name(), segmenter);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Segmenter> {
        self.entries
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "segmentation",
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

pub struct ClassicalSegmenter {
    cfg: SegmentationConfig,
}

impl ClassicalSegmenter {
    pub fn new(cfg: SegmentationConfig) -> Self {
        Self { cfg }
    }
}

impl Segmenter for ClassicalSegmenter {
    fn name(&self) -> &'static str {
        "classical"
    }

    fn segment(&self, input: &SegmentationInput<'_>) -> Result<TissueMask> {
        let series = input.series;
        let pre = series.pre();
        let run = || -> Result<TissueMask> {
            let air = segment_air(pre, &self.cfg)?;
            let breast = segment_breast(pre, &self.cfg)?;
            let split = segment_dense(pre, &breast, &self.cfg)?;
            let body = segment_body(pre, &self.cfg)?;
            let heart = segment_heart(pre, series.post1(), &body, &self.cfg)?;
            let tumor = input
                .tumor
                .clone()
                .unwrap_or_else(|| VoxelSet::empty(pre.dims()));
            assemble_mask(&air, &split.fat, &split.dense, &heart, &tumor, series.geometry())
        };
        run().map_err(|e| match e {
            Error::SegmentationFailed { stage, reason, .. } => Error::SegmentationFailed {
                subject: series.subject_id.clone(),
                stage,
                reason,
            },
            other => other,
        })
    }
}

pub struct ExternalSegmenter;

impl Segmenter for ExternalSegmenter {
    fn name(&self) -> &'static str {
        "external"
    }

    fn segment(&self, input: &SegmentationInput<'_>) -> Result<TissueMask> {
        let path = input.external_mask.as_ref().ok_or_else(|| Error::SegmentationFailed {
            subject: input.series.subject_id.clone(),
            stage: "external",
            reason: "no mask path in manifest".to_string(),
        })?;
        load_external_mask(path, input.series)
    }
}

pub struct AutoSegmenter {
    classical: ClassicalSegmenter,
}

impl Segmenter for AutoSegmenter {
    fn name(&self) -> &'static str {
        "auto"
    }

    fn segment(&self, input: &SegmentationInput<'_>) -> Result<TissueMask> {
        if input.external_mask.is_some() {
            ExternalSegmenter.segment(input)
        } else {
            self.classical.segment(input)
        }
    }
}

/// Labels voxels with precedence tumor > heart > dense > fat > air > background.
pub fn assemble_mask(
    air: &VoxelSet,
    fat: &VoxelSet,
    dense: &VoxelSet,
    heart: &VoxelSet,
    tumor: &VoxelSet,
    geometry: &Geometry,
) -> Result<TissueMask> {
    let mut mask = TissueMask::background(*geometry);
    for (set, tissue) in [
        (air, Tissue::Air),
        (fat, Tissue::Fat),
        (dense, Tissue::Dense),
        (heart, Tissue::Heart),
        (tumor, Tissue::Tumor),
    ] {
        if set.dims() != geometry.dims {
            return Err(Error::DimensionMismatch {
                expected: geometry.dims,
                actual: set.dims(),
            });
        }
        mask.paint(set, tissue);
    }
    Ok(mask)
}

pub fn load_external_mask(path: &Path, series: &StudySeries) -> Result<TissueMask> {
    let mask = load_mask(path)?;
    series.geometry().ensure_matches(mask.geometry())?;
    Ok(mask)
}

/// Tumor voxels from a u8 mask file: every non-zero label.
pub fn load_tumor_mask(path: &Path, series: &StudySeries) -> Result<VoxelSet> {
    let mask = load_mask(path)?;
    series.geometry().ensure_matches(mask.geometry())?;
    Ok(VoxelSet::from_predicate(mask.geometry().dims, |i| {
        mask.labels()[i] != 0
    }))
}
