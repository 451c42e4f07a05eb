//! Per-subject tissue anchor intensities.
//!
//! Air, fat and dense anchors are medians of the pre-contrast volume inside
//! their labels. The heart anchor is read from the first post-contrast
//! volume with a configurable high-order statistic (the 90th percentile by
//! default), because the enhancing blood pool is inhomogeneous.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::StudySeries;
use crate::stats::{nearest_rank_index, percentile_in_place};
use crate::volume::{Tissue, TissueMask};

/// An order statistic used to summarise a tissue's intensities.
pub trait AnchorStatistic: Send + Sync {
    fn name(&self) -> &'static str;

    /// `values` is non-empty and may be reordered.
    fn compute(&self, values: &mut [f32]) -> Result<f64>;
}

/// Nearest-rank percentile.
pub struct Percentile {
    pub name: &'static str,
    pub q: f64,
}

impl AnchorStatistic for Percentile {
    fn name(&self) -> &'static str {
        self.name
    }

    fn compute(&self, values: &mut [f32]) -> Result<f64> {
        percentile_in_place(values, self.q).map(f64::from)
    }
}

/// Mean of the values at or above the nearest-rank 90th percentile.
pub struct TopDecileMean;

impl AnchorStatistic for TopDecileMean {
    fn name(&self) -> &'static str {
        "top_decile_mean"
    }

    fn compute(&self, values: &mut [f32]) -> Result<f64> {
        if values.is_empty() {
            return Err(Error::EmptySelection);
        }
        let k = nearest_rank_index(90.0, values.len());
        values.select_nth_unstable_by(k, f32::total_cmp);
        let top = &values[k..];
        Ok(top.iter().map(|&v| v as f64).sum::<f64>() / top.len() as f64)
    }
}

pub const MEDIAN: Percentile = Percentile { name: "median", q: 50.0 };
pub const P90: Percentile = Percentile { name: "p90", q: 90.0 };

pub struct AnchorStatisticRegistry {
    entries: BTreeMap<&'static str, Box<dyn AnchorStatistic>>,
}

impl Default for AnchorStatisticRegistry {
    fn default() -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        r.register(Box::new(MEDIAN));
        r.register(Box::new(P90));
        r.register(Box::new(TopDecileMean));
        r
    }
}

impl AnchorStatisticRegistry {
    pub fn register(&mut self, stat: Box<dyn AnchorStatistic>) {
        self.entries.insert(stat.name(), stat);
    }

    pub fn get(&self, name: &str) -> Result<&dyn AnchorStatistic> {
        self.entries
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "anchor statistic",
                name: name.to_string(),
                available: self.entries.keys().copied().collect::<Vec<_>>().join(", "),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    /// Registered statistic used for the heart anchor.
    pub heart_statistic: String,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            heart_statistic: P90.name.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorCounts {
    pub air: usize,
    pub fat: usize,
    pub dense: usize,
    pub heart: usize,
}

/// Anchor intensities V^t of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub subject_id: String,
    pub v_air: f64,
    pub v_fat: f64,
    pub v_dense: f64,
    pub v_heart: f64,
    pub counts: AnchorCounts,
}

impl AnchorSet {
    pub fn value(&self, tissue: Tissue) -> f64 {
        match tissue {
            Tissue::Air => self.v_air,
            Tissue::Fat => self.v_fat,
            Tissue::Dense => self.v_dense,
            Tissue::Heart => self.v_heart,
            other => panic!("{other} is not an anchor tissue"),
        }
    }

    /// Values in `Tissue::ANCHORS` order.
    pub fn values(&self) -> [f64; 4] {
        Tissue::ANCHORS.map(|t| self.value(t))
    }
}

/// Anchors with the default statistics (median, heart p90).
pub fn extract_anchors(series: &StudySeries, mask: &TissueMask) -> Result<AnchorSet> {
    extract_anchors_with(series, mask, &P90)
}

pub fn extract_anchors_with(
    series: &StudySeries,
    mask: &TissueMask,
    heart_statistic: &dyn AnchorStatistic,
) -> Result<AnchorSet> {
    series.geometry().ensure_matches(mask.geometry())?;
    let labels = mask.labels();
    let mut buckets: [Vec<f32>; 4] = Default::default();
    let pre = series.pre().data();
    let post1 = series.post1().data();
    for (i, &code) in labels.iter().enumerate() {
        match Tissue::from_code(code) {
            Some(Tissue::Air) => buckets[0].push(pre[i]),
            Some(Tissue::Fat) => buckets[1].push(pre[i]),
            Some(Tissue::Dense) => buckets[2].push(pre[i]),
            Some(Tissue::Heart) => buckets[3].push(post1[i]),
            _ => {}
        }
    }
    for (bucket, tissue) in buckets.iter().zip(Tissue::ANCHORS) {
        if bucket.is_empty() {
            return Err(Error::MissingTissue {
                subject: series.subject_id.clone(),
                tissue,
            });
        }
    }
    let counts = AnchorCounts {
        air: buckets[0].len(),
        fat: buckets[1].len(),
        dense: buckets[2].len(),
        heart: buckets[3].len(),
    };
    let [air, fat, dense, heart] = &mut buckets;
    Ok(AnchorSet {
        subject_id: series.subject_id.clone(),
        v_air: MEDIAN.compute(air)?,
        v_fat: MEDIAN.compute(fat)?,
        v_dense: MEDIAN.compute(dense)?,
        v_heart: heart_statistic.compute(heart)?,
        counts,
    })
}
