//! Common intensity space: the archetype subject and its anchors.
//!
//! Every training subject is ranked per tissue by its anchor value; the
//! subject whose mean rank is closest to the middle, (N + 1) / 2, is the
//! archetype, and its anchors become the common-space values M^t.

use std::path::Path;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::error::{Error, Result};
use crate::volume::{write_atomic, Tissue};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationModel {
    pub format_version: u32,
    pub m_air: f64,
    pub m_fat: f64,
    pub m_dense: f64,
    pub m_heart: f64,
    pub archetype_subject_id: String,
    pub n_training: usize,
    pub training_subjects: Vec<String>,
    pub created_at: DateTime<Utc>,
}

impl NormalizationModel {
    pub fn value(&self, tissue: Tissue) -> f64 {
        match tissue {
            Tissue::Air => self.m_air,
            Tissue::Fat => self.m_fat,
            Tissue::Dense => self.m_dense,
            Tissue::Heart => self.m_heart,
            other => panic!("{other} is not an anchor tissue"),
        }
    }

    pub fn values(&self) -> [f64; 4] {
        Tissue::ANCHORS.map(|t| self.value(t))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("model serializes");
        text.push('\n');
        write_atomic(path.as_ref(), text.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
        // Check the version before the schema so future files fail clearly.
        let found = raw
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::invalid("model", format!("{}: missing format_version", path.display())))?;
        if found != MODEL_FORMAT_VERSION as u64 {
            return Err(Error::VersionMismatch {
                found: found.min(u32::MAX as u64) as u32,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let model: Self = serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
        if model.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("model", "non-finite anchor value"));
        }
        Ok(model)
    }
}

/// Fractional ranks (1-based, ties share the mean of their positions), in
/// input order.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their mean
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn rank_subjects(anchors: &[AnchorSet], tissue: Tissue) -> Vec<f64> {
    let values: Vec<f64> = anchors.iter().map(|a| a.value(tissue)).collect();
    fractional_ranks(&values)
}

/// Mean of the four per-tissue ranks of every subject.
pub fn rank_scores(anchors: &[AnchorSet]) -> Vec<f64> {
    let per_tissue: Vec<Vec<f64>> = Tissue::ANCHORS
        .iter()
        .map(|&t| rank_subjects(anchors, t))
        .collect();
    (0..anchors.len())
        .map(|i| per_tissue.iter().map(|r| r[i]).sum::<f64>() / 4.0)
        .collect()
}

/// Index of the archetype: score closest to (N + 1) / 2, ties broken by the
/// lexicographically smallest subject id.
pub fn select_archetype(anchors: &[AnchorSet]) -> Result<usize> {
    if anchors.is_empty() {
        return Err(Error::invalid("training set", "no anchor sets"));
    }
    let scores = rank_scores(anchors);
    let middle = (anchors.len() as f64 + 1.0) / 2.0;
    let best = (0..anchors.len())
        .min_by(|&a, &b| {
            let da = (scores[a] - middle).abs();
            let db = (scores[b] - middle).abs();
            da.total_cmp(&db)
                .then_with(|| anchors[a].subject_id.cmp(&anchors[b].subject_id))
        })
        .expect("non-empty");
    Ok(best)
}

pub fn train_archetype(anchors: &[AnchorSet]) -> Result<NormalizationModel> {
    train_archetype_at(anchors, creation_time())
}

pub fn train_archetype_at(anchors: &[AnchorSet], created_at: DateTime<Utc>) -> Result<NormalizationModel> {
    let best = &anchors[select_archetype(anchors)?];
    Ok(NormalizationModel {
        format_version: MODEL_FORMAT_VERSION,
        m_air: best.v_air,
        m_fat: best.v_fat,
        m_dense: best.v_dense,
        m_heart: best.v_heart,
        archetype_subject_id: best.subject_id.clone(),
        n_training: anchors.len(),
        training_subjects: anchors.iter().map(|a| a.subject_id.clone()).collect(),
        created_at,
    })
}

/// Honors `SOURCE_DATE_EPOCH` so repeated runs can produce identical files.
fn creation_time() -> DateTime<Utc> {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| Utc.timestamp_opt(secs, 0).single())
        .unwrap_or_else(|| {
            let now = Utc::now();
            Utc.timestamp_opt(now.timestamp(), 0).single().unwrap_or(now)
        })
}
