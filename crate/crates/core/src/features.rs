//! Enhancement and shape features F1-F15.
//!
//! | Feature | Definition |
//! |---|---|
//! | F1, F6 | mean, std of voxel-wise SER over healthy dense tissue |
//! | F2 | mean SER over tumor |
//! | F3 | mean washin over healthy dense tissue |
//! | F4, F5 | mean, std of washin over tumor |
//! | F7 | entropy (bits, 64 bins) of percentage enhancement over healthy dense tissue |
//! | F8 | DHoG: entropy of the magnitude-weighted 9-bin in-plane gradient orientation histogram of `post1 - pre` over tumor |
//! | F9 | major axis length of the tumor (mm), `4 * sqrt(largest covariance eigenvalue)` |
//! | F10-F15 | mean, std of `post1` over fat, dense, tumor |
//!
//! SER is `(S1 - S0) / (S_last - S0)` and washin `(S1 - S0) / max(S0, eps)`,
//! where `eps = 1e-6 * (max - min)` over the whole series. SER voxels with
//! `|S_last - S0| < eps` are set to 0 and counted. Standard deviations are
//! population (divide by n).

use std::f64::consts::PI;
use std::path::Path;

use log::warn;
use nalgebra::{Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::manifest::StudySeries;
use crate::stats::{entropy_bits, mean_std, median_filter};
use crate::volume::{write_atomic, Tissue, TissueMask, Volume, VoxelSet};

pub const N_FEATURES: usize = 15;
pub const PE_BINS: usize = 64;
pub const DHOG_BINS: usize = 9;
pub const EPS_FRACTION: f64 = 1e-6;

/// Denominator guard for a series.
pub fn series_epsilon(series: &StudySeries) -> f64 {
    let (lo, hi) = series.dynamic_range();
    EPS_FRACTION * (hi as f64 - lo as f64)
}

/// SER of one voxel; `None` when the denominator is guarded.
#[inline]
pub fn ser_value(s0: f64, s1: f64, s_last: f64, eps: f64) -> Option<f64> {
    let den = s_last - s0;
    if den.abs() < eps || den == 0.0 {
        None
    } else {
        Some((s1 - s0) / den)
    }
}

/// Washin of one voxel and whether the baseline fell below `eps`.
#[inline]
pub fn washin_value(s0: f64, s1: f64, eps: f64) -> (f64, bool) {
    let den = s0.max(eps);
    if den <= 0.0 {
        (0.0, true)
    } else {
        ((s1 - s0) / den, s0 < eps)
    }
}

/// A voxel-wise map together with the number of guarded voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancementMap {
    pub map: Volume,
    pub guarded: usize,
}

pub fn ser_map(series: &StudySeries) -> Result<EnhancementMap> {
    let posts = series.posts();
    if posts.len() < 2 {
        return Err(Error::invalid("SER", "needs at least two post-contrast volumes"));
    }
    let eps = series_epsilon(series);
    let (s0, s1, sl) = (series.pre().data(), posts[0].data(), posts[posts.len() - 1].data());
    let mut guarded = 0;
    let data = (0..s0.len())
        .map(|i| match ser_value(s0[i] as f64, s1[i] as f64, sl[i] as f64, eps) {
            Some(v) => v as f32,
            None => {
                guarded += 1;
                0.0
            }
        })
        .collect();
    Ok(EnhancementMap {
        map: series.pre().with_data(data)?.with_modality("ser"),
        guarded,
    })
}

pub fn washin_map(series: &StudySeries) -> Result<EnhancementMap> {
    let eps = series_epsilon(series);
    let (s0, s1) = (series.pre().data(), series.post1().data());
    let mut guarded = 0;
    let data = (0..s0.len())
        .map(|i| {
            let (w, g) = washin_value(s0[i] as f64, s1[i] as f64, eps);
            guarded += g as usize;
            w as f32
        })
        .collect();
    Ok(EnhancementMap {
        map: series.pre().with_data(data)?.with_modality("washin"),
        guarded,
    })
}

/// Entropy in bits of `values` binned into `bins` equal bins over their range.
pub fn histogram_entropy(values: &[f64], bins: usize) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if values.is_empty() || hi <= lo {
        return 0.0;
    }
    let mut hist = vec![0.0f64; bins];
    for &v in values {
        hist[crate::segmentation::classical::histogram_bin(v, lo, hi, bins)] += 1.0;
    }
    entropy_bits(&hist)
}

/// Entropy of the percentage enhancement `100 * washin` over `tissue`.
pub fn pe_entropy(series: &StudySeries, tissue: &VoxelSet) -> Result<f64> {
    if tissue.is_empty() {
        return Err(Error::EmptySelection);
    }
    let eps = series_epsilon(series);
    let (s0, s1) = (series.pre().data(), series.post1().data());
    let pe: Vec<f64> = tissue
        .iter()
        .map(|i| 100.0 * washin_value(s0[i] as f64, s1[i] as f64, eps).0)
        .collect();
    Ok(histogram_entropy(&pe, PE_BINS))
}

/// In-plane derivative of `d` along x (`axis == 0`) or y at voxel `i`:
/// central differences inside, one-sided at the edges, in units per mm.
fn in_plane_derivative(d: &[f64], dims: [usize; 3], spacing: f64, axis: usize, i: usize) -> f64 {
    let (stride, pos, len) = if axis == 0 {
        (1, i % dims[0], dims[0])
    } else {
        (dims[0], (i / dims[0]) % dims[1], dims[1])
    };
    if len < 2 {
        return 0.0;
    }
    if pos == 0 {
        (d[i + stride] - d[i]) / spacing
    } else if pos == len - 1 {
        (d[i] - d[i - stride]) / spacing
    } else {
        (d[i + stride] - d[i - stride]) / (2.0 * spacing)
    }
}

/// Orientation bin of an unsigned gradient direction in [0, 180) degrees.
#[inline]
pub fn orientation_bin(gx: f64, gy: f64) -> usize {
    let mut theta = gy.atan2(gx);
    if theta < 0.0 {
        theta += PI;
    }
    if theta >= PI {
        theta -= PI;
    }
    ((theta / (PI / DHOG_BINS as f64)).floor() as usize).min(DHOG_BINS - 1)
}

pub fn dhog(series: &StudySeries, tumor: &VoxelSet) -> Result<f64> {
    if tumor.is_empty() {
        return Err(Error::EmptySelection);
    }
    let g = series.geometry();
    let mut in_plane: Vec<(usize, usize)> = tumor
        .iter()
        .map(|i| {
            let [x, y, _] = g.coords(i);
            (x, y)
        })
        .collect();
    in_plane.sort_unstable();
    in_plane.dedup();
    if in_plane.len() < 2 {
        return Err(Error::invalid("DHoG", "tumor spans fewer than two in-plane positions"));
    }
    let d: Vec<f64> = series
        .post1()
        .data()
        .iter()
        .zip(series.pre().data())
        .map(|(&a, &b)| a as f64 - b as f64)
        .collect();
    let mut hist = [0.0f64; DHOG_BINS];
    for i in tumor.iter() {
        let gx = in_plane_derivative(&d, g.dims, g.spacing_mm[0], 0, i);
        let gy = in_plane_derivative(&d, g.dims, g.spacing_mm[1], 1, i);
        let mag = gx.hypot(gy);
        if mag > 0.0 {
            hist[orientation_bin(gx, gy)] += mag;
        }
    }
    if hist.iter().all(|&w| w == 0.0) {
        warn!("DHoG for {}: all tumor gradients are zero", series.subject_id);
        return Ok(0.0);
    }
    Ok(entropy_bits(&hist))
}

/// `4 * sqrt(largest eigenvalue)` of the population covariance of the
/// physical voxel coordinates, in mm.
pub fn major_axis_length(tumor: &VoxelSet, spacing_mm: [f64; 3]) -> Result<f64> {
    let n = tumor.len();
    if n < 2 {
        return Err(Error::invalid("major axis", format!("{n} voxels (< 2)")));
    }
    let dims = tumor.dims();
    let coords: Vec<[f64; 3]> = tumor
        .iter()
        .map(|i| {
            let x = i % dims[0];
            let y = (i / dims[0]) % dims[1];
            let z = i / (dims[0] * dims[1]);
            [x as f64 * spacing_mm[0], y as f64 * spacing_mm[1], z as f64 * spacing_mm[2]]
        })
        .collect();
    let mut mean = [0.0; 3];
    for c in &coords {
        for a in 0..3 {
            mean[a] += c[a];
        }
    }
    let mean = mean.map(|s| s / n as f64);
    let mut cov = Matrix3::<f64>::zeros();
    for c in &coords {
        for r in 0..3 {
            for k in 0..3 {
                cov[(r, k)] += (c[r] - mean[r]) * (c[k] - mean[k]);
            }
        }
    }
    cov /= n as f64;
    let eig = SymmetricEigen::new(cov);
    let largest = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    Ok(4.0 * largest.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub subject_id: String,
    /// F1..F15; `None` marks a feature whose mask is empty.
    pub values: [Option<f64>; N_FEATURES],
    pub denoised: bool,
    pub normalized: bool,
}

impl FeatureVector {
    /// Feature by 1-based number (F1 = 1).
    pub fn get(&self, number: usize) -> Option<f64> {
        self.values[number - 1]
    }
}

pub fn feature_name(index: usize) -> String {
    format!("F{}", index + 1)
}

fn mean_std_over(volume_values: impl Iterator<Item = f64>) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = volume_values.collect();
    match mean_std(&v) {
        Some((m, s)) => (Some(m), Some(s)),
        None => (None, None),
    }
}

/// All fifteen features. With `denoise_radius`, every volume is median
/// filtered first; F9 depends on the mask alone.
pub fn extract_features(
    series: &StudySeries,
    mask: &TissueMask,
    denoise_radius: Option<usize>,
) -> Result<FeatureVector> {
    series.geometry().ensure_matches(mask.geometry())?;
    let filtered;
    let series = match denoise_radius {
        Some(r) => {
            filtered = series.try_map_volumes(|v| median_filter(v, r))?;
            &filtered
        }
        None => series,
    };
    let tissue = mask.voxels(Tissue::Dense);
    let fat = mask.voxels(Tissue::Fat);
    let tumor = mask.voxels(Tissue::Tumor);
    let eps = series_epsilon(series);
    let s0 = series.pre().data();
    let s1 = series.post1().data();
    let posts = series.posts();
    let sl = posts[posts.len() - 1].data();
    let has_ser = posts.len() >= 2;

    let ser_at = |i: usize| ser_value(s0[i] as f64, s1[i] as f64, sl[i] as f64, eps).unwrap_or(0.0);
    let washin_at = |i: usize| washin_value(s0[i] as f64, s1[i] as f64, eps).0;
    let post1_at = |i: usize| s1[i] as f64;

    let mut f = [None; N_FEATURES];
    if has_ser {
        let (m, s) = mean_std_over(tissue.iter().map(ser_at));
        f[0] = m;
        f[5] = s;
        f[1] = mean_std_over(tumor.iter().map(ser_at)).0;
    }
    f[2] = mean_std_over(tissue.iter().map(washin_at)).0;
    (f[3], f[4]) = mean_std_over(tumor.iter().map(washin_at));
    f[6] = if tissue.is_empty() { None } else { Some(pe_entropy(series, &tissue)?) };
    f[7] = dhog(series, &tumor).ok();
    f[8] = major_axis_length(&tumor, series.geometry().spacing_mm).ok();
    (f[9], f[10]) = mean_std_over(fat.iter().map(post1_at));
    (f[11], f[12]) = mean_std_over(tissue.iter().map(post1_at));
    (f[13], f[14]) = mean_std_over(tumor.iter().map(post1_at));

    Ok(FeatureVector {
        subject_id: series.subject_id.clone(),
        values: f,
        denoised: denoise_radius.is_some(),
        normalized: false,
    })
}

pub fn features_to_csv(rows: &[FeatureVector]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["subject_id".to_string()];
    header.extend((0..N_FEATURES).map(feature_name));
    header.push("denoised".into());
    header.push("normalized".into());
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.subject_id.clone()];
        rec.extend(r.values.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        rec.push((r.denoised as u8).to_string());
        rec.push((r.normalized as u8).to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid("csv", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_features_csv(rows: &[FeatureVector], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), features_to_csv(rows)?.as_bytes())
}

pub fn read_features_csv(path: impl AsRef<Path>) -> Result<Vec<FeatureVector>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let header = r.headers().map_err(|e| table_err(path, 1, e))?.clone();
    let expected = features_to_csv(&[])?;
    if header.iter().collect::<Vec<_>>().join(",") != expected.trim_end() {
        return Err(Error::invalid("features table", format!("{}: unexpected header", path.display())));
    }
    let mut rows = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let line = n + 2;
        let rec = rec.map_err(|e| table_err(path, line, e))?;
        let mut values = [None; N_FEATURES];
        for (k, slot) in values.iter_mut().enumerate() {
            let field = &rec[k + 1];
            if !field.is_empty() {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    column: k + 2,
                    message: format!("bad number {field:?}"),
                })?;
                *slot = Some(v);
            }
        }
        let flag = |k: usize| -> Result<bool> {
            match &rec[k] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    column: k + 1,
                    message: format!("flag must be 0 or 1, got {other:?}"),
                }),
            }
        };
        rows.push(FeatureVector {
            subject_id: rec[0].to_string(),
            values,
            denoised: flag(N_FEATURES + 1)?,
            normalized: flag(N_FEATURES + 2)?,
        });
    }
    Ok(rows)
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid("csv", e.to_string())
}

fn table_err(path: &Path, line: usize, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column: 0,
        message: e.to_string(),
    }
}
