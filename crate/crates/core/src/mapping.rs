//! Subject-specific piecewise linear intensity mapping.
//!
//! Control points are the pairs (V^t, M^t) for the four anchor tissues.
//! Between control points the map interpolates linearly. Above the highest
//! control point it continues with the dense-to-heart slope; below the lowest
//! it continues with the air-to-fat slope and is clamped from below.

use std::fmt::Write as _;
use std::path::Path;

use crate::anchors::AnchorSet;
use crate::error::{Error, Result};
use crate::manifest::StudySeries;
use crate::model::NormalizationModel;
use crate::volume::{write_atomic, Tissue};

pub const DEFAULT_CLAMP_FLOOR: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlPoint {
    pub tissue: Tissue,
    pub v: f64,
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingFunction {
    /// Sorted by strictly increasing `v`, with non-decreasing `m`.
    points: [ControlPoint; 4],
    upper_slope: f64,
    lower_slope: f64,
    /// Lower clamp actually applied: the configured floor, lowered to the
    /// first control value when that sits below it, so the map stays
    /// monotone and continuous.
    floor: f64,
}

pub fn build_mapping(anchors: &AnchorSet, model: &NormalizationModel) -> Result<MappingFunction> {
    MappingFunction::new(anchors.values(), model.values(), DEFAULT_CLAMP_FLOOR)
}

impl MappingFunction {
    /// `v` and `m` are given in `Tissue::ANCHORS` order (air, fat, dense, heart).
    pub fn new(v: [f64; 4], m: [f64; 4], clamp_floor: f64) -> Result<Self> {
        if v.iter().chain(&m).any(|x| !x.is_finite()) {
            return Err(Error::invalid("mapping", "non-finite control point"));
        }
        let mut points = [0, 1, 2, 3].map(|i| ControlPoint {
            tissue: Tissue::ANCHORS[i],
            v: v[i],
            m: m[i],
        });
        points.sort_by(|a, b| a.v.total_cmp(&b.v));
        for w in points.windows(2) {
            if w[1].v == w[0].v {
                return Err(Error::DegenerateAnchors {
                    first: w[0].tissue,
                    second: w[1].tissue,
                    value: w[0].v,
                });
            }
            if w[1].m < w[0].m {
                return Err(Error::NonMonotoneModel {
                    lower: w[0].tissue,
                    upper: w[1].tissue,
                    lower_m: w[0].m,
                    upper_m: w[1].m,
                });
            }
        }
        let [air, fat, dense, heart] = [0, 1, 2, 3];
        let upper_slope = (m[heart] - m[dense]) / (v[heart] - v[dense]);
        let lower_slope = (m[fat] - m[air]) / (v[fat] - v[air]);
        Ok(Self {
            floor: clamp_floor.min(points[0].m),
            points,
            upper_slope,
            lower_slope,
        })
    }

    /// Identity on the given abscissae.
    pub fn identity(v: [f64; 4]) -> Result<Self> {
        Self::new(v, v, DEFAULT_CLAMP_FLOOR.min(v.iter().copied().fold(f64::INFINITY, f64::min)))
    }

    pub fn control_points(&self) -> &[ControlPoint; 4] {
        &self.points
    }

    pub fn upper_slope(&self) -> f64 {
        self.upper_slope
    }

    pub fn lower_slope(&self) -> f64 {
        self.lower_slope
    }

    pub fn clamp_floor(&self) -> f64 {
        self.floor
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        let p = &self.points;
        let last = &p[3];
        if x >= last.v {
            return last.m + self.upper_slope * (x - last.v);
        }
        let first = &p[0];
        if x < first.v {
            return (first.m + self.lower_slope * (x - first.v)).max(self.floor);
        }
        let k = if x < p[1].v {
            0
        } else if x < p[2].v {
            1
        } else {
            2
        };
        let (a, b) = (&p[k], &p[k + 1]);
        if x == a.v {
            return a.m;
        }
        let t = (x - a.v) / (b.v - a.v);
        // Rounding must not step outside the segment's range.
        (a.m + t * (b.m - a.m)).clamp(a.m, b.m)
    }

    /// Maps one 32-bit voxel value.
    #[inline]
    pub fn apply_value(&self, x: f32) -> f32 {
        self.evaluate(x as f64) as f32
    }
}

/// Maps every voxel of the pre- and post-contrast volumes with one function.
pub fn apply_mapping(f: &MappingFunction, series: &StudySeries) -> Result<StudySeries> {
    series.try_map_volumes(|v| v.with_data(v.data().iter().map(|&x| f.apply_value(x)).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub x: f64,
    pub fx: f64,
    pub is_anchor: bool,
}

/// `n_samples` evenly spaced samples over `[lo, hi]` merged with the four
/// control points, sorted by x. A sample that coincides with a control point
/// is emitted once, marked as an anchor.
pub fn export_mapping_curve(f: &MappingFunction, n_samples: usize, range: (f64, f64)) -> Result<Vec<CurveRow>> {
    let (lo, hi) = range;
    if n_samples < 2 {
        return Err(Error::invalid("curve samples", format!("{n_samples} < 2")));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid("curve range", format!("[{lo}, {hi}]")));
    }
    let step = (hi - lo) / (n_samples - 1) as f64;
    let mut xs: Vec<(f64, bool)> = (0..n_samples)
        .map(|i| (if i + 1 == n_samples { hi } else { lo + i as f64 * step }, false))
        .collect();
    xs.extend(f.points.iter().map(|p| (p.v, true)));
    xs.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
    let mut rows: Vec<CurveRow> = Vec::with_capacity(xs.len());
    for (x, is_anchor) in xs {
        if let Some(prev) = rows.last_mut() {
            if prev.x == x {
                prev.is_anchor |= is_anchor;
                continue;
            }
        }
        rows.push(CurveRow {
            x,
            fx: f.evaluate(x),
            is_anchor,
        });
    }
    Ok(rows)
}

pub fn curve_to_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("x,fx,is_anchor\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.x, r.fx, r.is_anchor as u8);
    }
    out
}

pub fn write_curve_csv(rows: &[CurveRow], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), curve_to_csv(rows).as_bytes())
}
