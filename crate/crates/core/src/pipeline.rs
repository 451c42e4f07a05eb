//! Dataset-level stages: segment, train, normalize, extract features.
//!
//! Subjects are processed in parallel on the current rayon pool. A subject
//! that fails for data reasons (segmentation, missing tissue, degenerate
//! anchors) is skipped with a warning; I/O errors abort the stage, as does a
//! stage in which every subject failed.

use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;

use crate::anchors::{extract_anchors_with, AnchorSet, AnchorStatisticRegistry};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureVector};
use crate::manifest::{DatasetManifest, StudySeries, SubjectEntry};
use crate::mapping::{apply_mapping, build_mapping, export_mapping_curve, write_curve_csv, MappingFunction};
use crate::model::{train_archetype, NormalizationModel};
use crate::segmentation::{load_tumor_mask, SegmentationInput, SegmenterRegistry};
use crate::volume::{load_mask, save_mask, save_volume, sidecar_paths, TissueMask};

/// Suffix added to the modality tag of normalized volumes.
pub const NORMALIZED_TAG: &str = "normalized";

/// Samples per exported mapping curve.
pub const CURVE_SAMPLES: usize = 256;

pub struct Pipeline {
    pub config: PipelineConfig,
    pub segmenters: SegmenterRegistry,
    pub anchor_statistics: AnchorStatisticRegistry,
}

/// Per-subject results of a stage together with the subjects that were skipped.
#[derive(Debug)]
pub struct StageOutput<T> {
    pub results: Vec<T>,
    pub skipped: Vec<(String, Error)>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            segmenters: SegmenterRegistry::with_defaults(&config.segmentation),
            anchor_statistics: AnchorStatisticRegistry::default(),
            config,
        })
    }

    /// Mask of one subject with the configured segmenter. An explicit
    /// `masks_dir` holding `<id>_mask` takes precedence.
    pub fn subject_mask(
        &self,
        manifest: &DatasetManifest,
        entry: &SubjectEntry,
        series: &StudySeries,
        masks_dir: Option<&Path>,
    ) -> Result<TissueMask> {
        if let Some(dir) = masks_dir {
            let mask = load_mask(mask_path(dir, &entry.subject_id))?;
            series.geometry().ensure_matches(mask.geometry())?;
            return Ok(mask);
        }
        let tumor = match &entry.tumor_mask {
            Some(p) => Some(load_tumor_mask(&manifest.resolve(p), series)?),
            None => None,
        };
        let input = SegmentationInput {
            series,
            external_mask: entry.mask.as_ref().map(|p| manifest.resolve(p)),
            tumor,
        };
        self.segmenters.get(&self.config.segmentation.method)?.segment(&input)
    }

    fn for_each_subject<T: Send>(
        &self,
        manifest: &DatasetManifest,
        f: impl Fn(&SubjectEntry) -> Result<T> + Sync,
    ) -> Result<StageOutput<T>> {
        let outcomes: Vec<Result<T>> = manifest.subjects.par_iter().map(&f).collect();
        let mut out = StageOutput {
            results: Vec::new(),
            skipped: Vec::new(),
        };
        for (entry, r) in manifest.subjects.iter().zip(outcomes) {
            match r {
                Ok(t) => out.results.push(t),
                Err(e) if e.is_io() => return Err(e),
                Err(e) => {
                    warn!("skipping {}: {e}", entry.subject_id);
                    out.skipped.push((entry.subject_id.clone(), e));
                }
            }
        }
        if out.results.is_empty() {
            if let Some((_, e)) = out.skipped.drain(..).next() {
                return Err(e);
            }
        }
        Ok(out)
    }

    fn series_and_mask(
        &self,
        manifest: &DatasetManifest,
        entry: &SubjectEntry,
        masks_dir: Option<&Path>,
    ) -> Result<(StudySeries, TissueMask)> {
        let series = manifest.load_series(entry)?;
        let mask = self.subject_mask(manifest, entry, &series, masks_dir)?;
        Ok((series, mask))
    }

    pub fn subject_anchors(&self, series: &StudySeries, mask: &TissueMask) -> Result<AnchorSet> {
        let stat = self.anchor_statistics.get(&self.config.anchors.heart_statistic)?;
        extract_anchors_with(series, mask, stat)
    }

    /// Segments every subject and writes `<out>/masks/<id>_mask` plus a
    /// `manifest.json` referencing them. Volume paths in the new manifest
    /// are absolute.
    pub fn segment_dataset(&self, manifest: &DatasetManifest, out: &Path) -> Result<StageOutput<SubjectEntry>> {
        let masks = out.join("masks");
        std::fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
        let stage = self.for_each_subject(manifest, |entry| {
            let (_, mask) = self.series_and_mask(manifest, entry, None)?;
            save_mask(&mask, mask_path(&masks, &entry.subject_id))?;
            let mut derived = absolute_entry(manifest, entry)?;
            derived.mask = Some(PathBuf::from(format!("masks/{}_mask", entry.subject_id)));
            derived.tumor_mask = None;
            Ok(derived)
        })?;
        DatasetManifest::new(out, stage.results.clone()).save(out.join("manifest.json"))?;
        Ok(stage)
    }

    pub fn dataset_anchors(&self, manifest: &DatasetManifest) -> Result<StageOutput<AnchorSet>> {
        self.for_each_subject(manifest, |entry| {
            let (series, mask) = self.series_and_mask(manifest, entry, None)?;
            self.subject_anchors(&series, &mask)
        })
    }

    pub fn train(&self, manifest: &DatasetManifest) -> Result<(NormalizationModel, StageOutput<AnchorSet>)> {
        let anchors = self.dataset_anchors(manifest)?;
        let model = train_archetype(&anchors.results)?;
        Ok((model, anchors))
    }

    /// Normalizes one subject; returns the mapped series, its mask and map.
    pub fn normalize_subject(
        &self,
        manifest: &DatasetManifest,
        entry: &SubjectEntry,
        model: &NormalizationModel,
    ) -> Result<(StudySeries, TissueMask, MappingFunction)> {
        let (series, mask) = self.series_and_mask(manifest, entry, None)?;
        let anchors = self.subject_anchors(&series, &mask)?;
        let f = build_mapping(&anchors, model)?;
        let mapped = apply_mapping(&f, &series)?.try_map_volumes(|v| {
            let tag = v.modality_tag();
            let tag = if tag.is_empty() { NORMALIZED_TAG.to_string() } else { format!("{tag} {NORMALIZED_TAG}") };
            Ok(v.clone().with_modality(tag))
        })?;
        Ok((mapped, mask, f))
    }

    /// Writes normalized volumes to `<out>/volumes`, the masks used for
    /// anchoring to `<out>/masks`, and a manifest. With `curves`, each
    /// subject's mapping is sampled to `<curves>/<id>_mapping.csv`.
    pub fn normalize_dataset(
        &self,
        manifest: &DatasetManifest,
        model: &NormalizationModel,
        out: &Path,
        curves: Option<&Path>,
    ) -> Result<StageOutput<SubjectEntry>> {
        for dir in [out.join("volumes"), out.join("masks")].iter().map(PathBuf::as_path).chain(curves) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let stage = self.for_each_subject(manifest, |entry| {
            let (series, mask, f) = self.normalize_subject(manifest, entry, model)?;
            let id = &entry.subject_id;
            let pre = PathBuf::from(format!("volumes/{id}_pre"));
            save_volume(series.pre(), out.join(&pre))?;
            let mut posts = Vec::new();
            for (k, v) in series.posts().iter().enumerate() {
                let p = PathBuf::from(format!("volumes/{id}_post{}", k + 1));
                save_volume(v, out.join(&p))?;
                posts.push(p);
            }
            let mask_rel = PathBuf::from(format!("masks/{id}_mask"));
            save_mask(&mask, out.join(&mask_rel))?;
            if let Some(dir) = curves {
                let hi = 1.25 * f.control_points()[3].v;
                let lo = f.control_points()[0].v.min(0.0);
                let rows = export_mapping_curve(&f, CURVE_SAMPLES, (lo, hi))?;
                write_curve_csv(&rows, dir.join(format!("{id}_mapping.csv")))?;
            }
            Ok(SubjectEntry {
                pre,
                posts,
                mask: Some(mask_rel),
                tumor_mask: None,
                ..entry.clone()
            })
        })?;
        DatasetManifest::new(out, stage.results.clone()).save(out.join("manifest.json"))?;
        Ok(stage)
    }

    pub fn dataset_features(
        &self,
        manifest: &DatasetManifest,
        masks_dir: Option<&Path>,
        denoise_radius: Option<usize>,
    ) -> Result<StageOutput<FeatureVector>> {
        self.for_each_subject(manifest, |entry| {
            let (series, mask) = self.series_and_mask(manifest, entry, masks_dir)?;
            let mut fv = extract_features(&series, &mask, denoise_radius)?;
            fv.normalized = series.pre().modality_tag().ends_with(NORMALIZED_TAG);
            Ok(fv)
        })
    }
}

pub fn mask_path(dir: &Path, subject_id: &str) -> PathBuf {
    dir.join(format!("{subject_id}_mask"))
}

fn absolute(manifest: &DatasetManifest, p: &Path) -> Result<PathBuf> {
    let resolved = manifest.resolve(p);
    let (header, _) = sidecar_paths(&resolved);
    let header = std::fs::canonicalize(&header).map_err(|e| Error::io(&header, e))?;
    Ok(header.with_extension(""))
}

fn absolute_entry(manifest: &DatasetManifest, entry: &SubjectEntry) -> Result<SubjectEntry> {
    Ok(SubjectEntry {
        pre: absolute(manifest, &entry.pre)?,
        posts: entry.posts.iter().map(|p| absolute(manifest, p)).collect::<Result<_>>()?,
        mask: entry.mask.as_deref().map(|p| absolute(manifest, p)).transpose()?,
        tumor_mask: entry.tumor_mask.as_deref().map(|p| absolute(manifest, p)).transpose()?,
        ..entry.clone()
    })
}
