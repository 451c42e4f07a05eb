//! Threshold-and-geometry tissue segmentation.
//!
//! Images are assumed axial with y increasing from anterior to posterior, so
//! the breast sits at small y and the heart behind it.

use log::warn;

use super::morphology::{closing, largest_component};
use super::{DensePolarity, SegmentationConfig};
use crate::error::{Error, Result};
use crate::stats::{percentile, volume_percentile};
use crate::volume::{Volume, VoxelSet};

pub const OTSU_BINS: usize = 256;

/// The weakest `air_fraction` of the volume; every voxel tied with the
/// threshold is included.
pub fn segment_air(pre: &Volume, cfg: &SegmentationConfig) -> Result<VoxelSet> {
    let threshold = volume_percentile(pre, None, cfg.air_fraction * 100.0)?;
    Ok(VoxelSet::from_predicate(pre.dims(), |i| pre.data()[i] <= threshold))
}

/// Intensity above which a voxel counts as body tissue: the air threshold
/// raised by `body_threshold_fraction` of the span up to the 99th percentile.
pub fn body_threshold(pre: &Volume, cfg: &SegmentationConfig) -> Result<f32> {
    let mut values = pre.data().to_vec();
    let air = crate::stats::percentile_in_place(&mut values, cfg.air_fraction * 100.0)? as f64;
    let bright = crate::stats::percentile_in_place(&mut values, 99.0)? as f64;
    Ok((air + cfg.body_threshold_fraction * (bright - air).max(0.0)) as f32)
}

pub fn segment_body(pre: &Volume, cfg: &SegmentationConfig) -> Result<VoxelSet> {
    let t = body_threshold(pre, cfg)?;
    Ok(VoxelSet::from_predicate(pre.dims(), |i| pre.data()[i] > t))
}

/// Per axial slice, the y of the posterior-most row whose longest run of
/// body voxels exceeds half the slice's longest run. `None` for slices
/// without body voxels.
pub fn chest_wall_rows(body: &VoxelSet) -> Vec<Option<usize>> {
    let [nx, ny, nz] = body.dims();
    (0..nz)
        .map(|z| {
            let runs: Vec<usize> = (0..ny)
                .map(|y| {
                    let row = nx * (y + ny * z);
                    let mut best = 0;
                    let mut cur = 0;
                    for x in 0..nx {
                        if body.contains(row + x) {
                            cur += 1;
                            best = best.max(cur);
                        } else {
                            cur = 0;
                        }
                    }
                    best
                })
                .collect();
            let max_run = runs.iter().copied().max().unwrap_or(0);
            if max_run == 0 {
                return None;
            }
            (0..ny).rev().find(|&y| 2 * runs[y] > max_run)
        })
        .collect()
}

fn split_by_wall(body: &VoxelSet, rows: &[Option<usize>], anterior: bool) -> VoxelSet {
    let [nx, ny, _] = body.dims();
    VoxelSet::from_predicate(body.dims(), |i| {
        if !body.contains(i) {
            return false;
        }
        let y = (i / nx) % ny;
        let z = i / (nx * ny);
        match rows[z] {
            Some(wall) => (y <= wall) == anterior,
            None => false,
        }
    })
}

pub fn segment_breast(pre: &Volume, cfg: &SegmentationConfig) -> Result<VoxelSet> {
    let body = segment_body(pre, cfg)?;
    let rows = chest_wall_rows(&body);
    let anterior = split_by_wall(&body, &rows, true);
    let closed = closing(&anterior, cfg.morphology_radius);
    let breast = largest_component(&closed).ok_or_else(|| failure("breast", "no body voxels"))?;
    let n = breast.len();
    if n < cfg.min_component_voxels {
        return Err(failure(
            "breast",
            format!("largest component has {n} voxels (< {})", cfg.min_component_voxels),
        ));
    }
    Ok(breast)
}

/// Result of the dense/fat split of a breast region.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSplit {
    pub dense: VoxelSet,
    pub fat: VoxelSet,
    /// Otsu threshold (upper edge of the last low-class bin); `None` when the
    /// breast histogram is degenerate.
    pub threshold: Option<f64>,
}

/// Otsu split of `values` over a fixed `OTSU_BINS`-bin histogram spanning
/// `[min, max]`. Returns the last bin of the low class, or `None` when all
/// values are equal.
pub fn otsu_bin(values: &[f32]) -> Option<(usize, f64, f64)> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v as f64), b.max(v as f64))
        });
    if values.is_empty() || hi <= lo {
        return None;
    }
    let mut hist = [0u64; OTSU_BINS];
    for &v in values {
        hist[histogram_bin(v as f64, lo, hi, OTSU_BINS)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0f64, 0.0f64);
    let mut best = (0usize, -1.0f64);
    for (k, &c) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += c as f64;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best.1 {
            best = (k, between);
        }
    }
    Some((best.0, lo, hi))
}

/// Bin of `x` in `bins` equal-width bins over `[lo, hi]`; `hi` lands in the last bin.
#[inline]
pub fn histogram_bin(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = ((x - lo) / (hi - lo) * bins as f64).floor();
    (t.max(0.0) as usize).min(bins - 1)
}

pub fn segment_dense(pre: &Volume, breast: &VoxelSet, cfg: &SegmentationConfig) -> Result<DenseSplit> {
    if breast.is_empty() {
        return Err(failure("dense", "empty breast region"));
    }
    let values = pre.values_in(breast);
    let Some((k, lo, hi)) = otsu_bin(&values) else {
        warn!("dense/fat split: breast intensities are constant; all breast voxels labelled fat");
        return Ok(DenseSplit {
            dense: VoxelSet::empty(breast.dims()),
            fat: breast.clone(),
            threshold: None,
        });
    };
    let mut low = VoxelSet::empty(breast.dims());
    for i in breast.iter() {
        if histogram_bin(pre.data()[i] as f64, lo, hi, OTSU_BINS) <= k {
            low.insert(i);
        }
    }
    let high = breast.difference(&low);
    let threshold = Some(lo + (k + 1) as f64 * (hi - lo) / OTSU_BINS as f64);
    let (dense, fat) = match cfg.dense_polarity {
        DensePolarity::Darker => (low, high),
        DensePolarity::Brighter => (high, low),
    };
    Ok(DenseSplit { dense, fat, threshold })
}

/// Largest 26-connected group of strongly enhancing body voxels behind the
/// chest wall. Candidates must reach the configured percentile of the
/// subtraction image `post1 - pre` and be strictly positive there.
pub fn segment_heart(
    pre: &Volume,
    post1: &Volume,
    body: &VoxelSet,
    cfg: &SegmentationConfig,
) -> Result<VoxelSet> {
    pre.geometry().ensure_matches(post1.geometry())?;
    let sub: Vec<f32> = post1
        .data()
        .iter()
        .zip(pre.data())
        .map(|(a, b)| a - b)
        .collect();
    let threshold = percentile(&sub, cfg.heart_enhancement_percentile)?;
    let rows = chest_wall_rows(body);
    let posterior = split_by_wall(body, &rows, false);
    let candidates = VoxelSet::from_predicate(body.dims(), |i| {
        posterior.contains(i) && sub[i] >= threshold && sub[i] > 0.0
    });
    let heart = largest_component(&candidates)
        .ok_or_else(|| failure("heart", "no enhancing posterior voxels"))?;
    let n = heart.len();
    if n < cfg.min_component_voxels {
        return Err(failure(
            "heart",
            format!("largest component has {n} voxels (< {})", cfg.min_component_voxels),
        ));
    }
    Ok(heart)
}

// The subject id is filled in by the calling segmenter.
fn failure(stage: &'static str, reason: impl Into<String>) -> Error {
    Error::SegmentationFailed {
        subject: String::new(),
        stage,
        reason: reason.into(),
    }
}
