//! Order statistics and small summary helpers.
//!
//! Percentiles use the nearest-rank convention throughout: the q-th percentile
//! of n values is the ascending-sorted value at index `ceil(q/100 * n) - 1`,
//! with q = 0 mapping to index 0.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{Volume, VoxelSet};

/// 0-based index of the nearest-rank q-th percentile among `n` values.
pub fn nearest_rank_index(q: f64, n: usize) -> usize {
    debug_assert!(n > 0);
    let r = q * n as f64 / 100.0;
    // Snap products like 7.000000000000001 that are integral up to round-off.
    let nearest = r.round();
    let rank = if (r - nearest).abs() <= 1e-9 * r.abs().max(1.0) {
        nearest
    } else {
        r.ceil()
    };
    (rank as usize).clamp(1, n) - 1
}

fn check_q(q: f64) -> Result<()> {
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::invalid("percentile", format!("q = {q} outside [0, 100]")));
    }
    Ok(())
}

/// Nearest-rank percentile; reorders `values`.
pub fn percentile_in_place(values: &mut [f32], q: f64) -> Result<f32> {
    check_q(q)?;
    if values.is_empty() {
        return Err(Error::EmptySelection);
    }
    let k = nearest_rank_index(q, values.len());
    let (_, v, _) = values.select_nth_unstable_by(k, f32::total_cmp);
    Ok(*v)
}

pub fn percentile(values: &[f32], q: f64) -> Result<f32> {
    let mut buf = values.to_vec();
    percentile_in_place(&mut buf, q)
}

/// Percentile over a volume, optionally restricted to a voxel set.
pub fn volume_percentile(volume: &Volume, selection: Option<&VoxelSet>, q: f64) -> Result<f32> {
    let mut values = match selection {
        Some(set) => volume.values_in(set),
        None => volume.data().to_vec(),
    };
    percentile_in_place(&mut values, q)
}

/// Cubic median filter of side `2 * radius + 1`; windows are clipped at the
/// volume edges, and each output is the nearest-rank median of its window.
pub fn median_filter(volume: &Volume, radius: usize) -> Result<Volume> {
    if radius == 0 {
        return Err(Error::invalid("median radius", "must be at least 1"));
    }
    let [nx, ny, nz] = volume.dims();
    let g = *volume.geometry();
    let data = volume.data();
    let mut out = vec![0.0f32; data.len()];
    let side = 2 * radius + 1;

    out.par_chunks_mut(nx * ny)
        .enumerate()
        .for_each_init(
            || Vec::with_capacity(side * side * side),
            |window, (z, slice)| {
                let (z0, z1) = (z.saturating_sub(radius), (z + radius).min(nz - 1));
                for y in 0..ny {
                    let (y0, y1) = (y.saturating_sub(radius), (y + radius).min(ny - 1));
                    for x in 0..nx {
                        let (x0, x1) = (x.saturating_sub(radius), (x + radius).min(nx - 1));
                        window.clear();
                        for wz in z0..=z1 {
                            for wy in y0..=y1 {
                                let row = g.index(0, wy, wz);
                                window.extend_from_slice(&data[row + x0..=row + x1]);
                            }
                        }
                        let k = nearest_rank_index(50.0, window.len());
                        let (_, m, _) = window.select_nth_unstable_by(k, f32::total_cmp);
                        slice[x + nx * y] = *m;
                    }
                }
            },
        );
    volume.with_data(out)
}

/// Population mean and standard deviation (divide by n).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Shannon entropy in bits of a histogram of non-negative weights.
pub fn entropy_bits(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let h = weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| {
            let p = w / total;
            -p * p.log2()
        })
        .sum::<f64>();
    // -0.0 for a single populated bin
    h.max(0.0)
}
