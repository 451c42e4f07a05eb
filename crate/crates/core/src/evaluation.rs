//! Scanner-parameter grouping and before/after comparisons.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{feature_name, FeatureVector, N_FEATURES};
use crate::manifest::{DatasetManifest, StudySeries};
use crate::stats::mean_std;
use crate::volume::{write_atomic, Tissue, TissueMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKey {
    Te,
    Tr,
    Field,
}

impl GroupKey {
    pub const ALL: [GroupKey; 3] = [GroupKey::Te, GroupKey::Tr, GroupKey::Field];
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupKey::Te => "te",
            GroupKey::Tr => "tr",
            GroupKey::Field => "field",
        })
    }
}

impl FromStr for GroupKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "te" => Ok(GroupKey::Te),
            "tr" => Ok(GroupKey::Tr),
            "field" => Ok(GroupKey::Field),
            other => Err(Error::invalid("group key", format!("{other:?} (expected te, tr or field)"))),
        }
    }
}

/// Two-way split points. A subject exactly on a threshold joins the high group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingSpec {
    pub te_threshold_ms: f64,
    pub tr_threshold_ms: f64,
    /// Midpoint of the 1.5 T and 3.0 T bins.
    pub field_threshold_t: f64,
}

impl Default for GroupingSpec {
    fn default() -> Self {
        Self {
            te_threshold_ms: 2.0,
            tr_threshold_ms: 4.5,
            field_threshold_t: 2.25,
        }
    }
}

impl GroupingSpec {
    pub fn threshold(&self, key: GroupKey) -> f64 {
        match key {
            GroupKey::Te => self.te_threshold_ms,
            GroupKey::Tr => self.tr_threshold_ms,
            GroupKey::Field => self.field_threshold_t,
        }
    }

    pub fn labels(&self, key: GroupKey) -> [String; 2] {
        match key {
            GroupKey::Field => ["1.5T".into(), "3.0T".into()],
            _ => {
                let t = self.threshold(key);
                [format!("{key}<{t}"), format!("{key}>={t}")]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub key: GroupKey,
    pub low: Vec<String>,
    pub high: Vec<String>,
}

pub fn group_subjects(manifest: &DatasetManifest, key: GroupKey, spec: &GroupingSpec) -> Result<Partition> {
    let threshold = spec.threshold(key);
    let mut p = Partition {
        key,
        low: Vec::new(),
        high: Vec::new(),
    };
    for s in &manifest.subjects {
        let (value, field) = match key {
            GroupKey::Te => (s.te_ms, "te_ms"),
            GroupKey::Tr => (s.tr_ms, "tr_ms"),
            GroupKey::Field => (s.field_t, "field_t"),
        };
        let value = value.ok_or_else(|| Error::MissingMetadata {
            subject: s.subject_id.clone(),
            field,
        })?;
        if value >= threshold {
            p.high.push(s.subject_id.clone());
        } else {
            p.low.push(s.subject_id.clone());
        }
    }
    Ok(p)
}

/// Two-sample Kolmogorov-Smirnov statistic: sup |F_a - F_b| of the
/// empirical CDFs.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        // Step past every copy of the smallest remaining value in both samples.
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Area under the ROC curve in its Mann-Whitney form: the probability that a
/// positive outscores a negative, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("AUC", "scores and labels differ in length"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("AUC", "both classes must be present"));
    }
    let ranks = crate::model::fractional_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Mean intensity of each labelled tissue on the pre-contrast and first
/// post-contrast volumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueIntensities {
    pub subject_id: String,
    pub pre: BTreeMap<Tissue, f64>,
    pub post1: BTreeMap<Tissue, f64>,
}

pub const REPORTED_TISSUES: [Tissue; 5] = [Tissue::Air, Tissue::Fat, Tissue::Dense, Tissue::Heart, Tissue::Tumor];

pub fn tissue_intensities(series: &StudySeries, mask: &TissueMask) -> Result<TissueIntensities> {
    series.geometry().ensure_matches(mask.geometry())?;
    let mut sums: BTreeMap<Tissue, (f64, f64, usize)> = BTreeMap::new();
    let (pre, post) = (series.pre().data(), series.post1().data());
    for (i, &code) in mask.labels().iter().enumerate() {
        let t = mask.label_at(i);
        if code == 0 {
            continue;
        }
        let e = sums.entry(t).or_insert((0.0, 0.0, 0));
        e.0 += pre[i] as f64;
        e.1 += post[i] as f64;
        e.2 += 1;
    }
    let mut out = TissueIntensities {
        subject_id: series.subject_id.clone(),
        pre: BTreeMap::new(),
        post1: BTreeMap::new(),
    };
    for (t, (a, b, n)) in sums {
        out.pre.insert(t, a / n as f64);
        out.post1.insert(t, b / n as f64);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl GroupStats {
    fn of(values: &[f64]) -> Self {
        let ms = mean_std(values);
        Self {
            n: values.len(),
            mean: ms.map(|m| m.0),
            std: ms.map(|m| m.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageComparison {
    /// Low group, then high group.
    pub groups: [GroupStats; 2],
    pub ks: Option<f64>,
    /// Ratio of group means, high over low.
    pub ratio: Option<f64>,
}

impl StageComparison {
    fn of(low: &[f64], high: &[f64]) -> Self {
        let groups = [GroupStats::of(low), GroupStats::of(high)];
        let ratio = match (groups[0].mean, groups[1].mean) {
            (Some(l), Some(h)) if l != 0.0 => Some(h / l),
            _ => None,
        };
        Self {
            ks: ks_statistic(low, high).ok(),
            groups,
            ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueComparison {
    pub tissue: Tissue,
    /// `pre` or `post1`.
    pub sequence: String,
    pub before: Option<StageComparison>,
    pub after: Option<StageComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureComparison {
    pub feature: String,
    pub before: StageComparison,
    pub after: StageComparison,
    pub auc_before: Option<f64>,
    pub auc_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub count: usize,
    pub subject_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingReport {
    pub key: GroupKey,
    pub threshold: f64,
    pub groups: [GroupSummary; 2],
    pub tissues: Vec<TissueComparison>,
    pub features: Vec<FeatureComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_subjects: usize,
    pub groupings: Vec<GroupingReport>,
}

/// Inputs to [`build_report`]; the tissue tables are optional.
pub struct ReportInputs<'a> {
    pub manifest: &'a DatasetManifest,
    pub features_before: &'a [FeatureVector],
    pub features_after: &'a [FeatureVector],
    pub tissues_before: Option<&'a [TissueIntensities]>,
    pub tissues_after: Option<&'a [TissueIntensities]>,
}

pub fn build_report(inputs: &ReportInputs<'_>, keys: &[GroupKey], spec: &GroupingSpec) -> Result<EvaluationReport> {
    let before: HashMap<&str, &FeatureVector> =
        inputs.features_before.iter().map(|f| (f.subject_id.as_str(), f)).collect();
    let after: HashMap<&str, &FeatureVector> =
        inputs.features_after.iter().map(|f| (f.subject_id.as_str(), f)).collect();
    let ids_before: HashSet<&str> = before.keys().copied().collect();
    let ids_after: HashSet<&str> = after.keys().copied().collect();
    if ids_before != ids_after {
        let mut diff: Vec<&str> = ids_before.symmetric_difference(&ids_after).copied().collect();
        diff.sort_unstable();
        return Err(Error::CoverageMismatch(format!("subjects in only one table: {}", diff.join(", "))));
    }
    if let Some(missing) = ids_before.iter().find(|id| inputs.manifest.get(id).is_none()) {
        return Err(Error::CoverageMismatch(format!("{missing} is not in the manifest")));
    }
    // Evaluate in manifest order.
    let evaluated = DatasetManifest::new(
        inputs.manifest.root(),
        inputs
            .manifest
            .subjects
            .iter()
            .filter(|s| ids_before.contains(s.subject_id.as_str()))
            .cloned()
            .collect(),
    );
    let labels: HashMap<&str, bool> = evaluated
        .subjects
        .iter()
        .filter_map(|s| s.label.map(|l| (s.subject_id.as_str(), l == 1)))
        .collect();

    let mut groupings = Vec::new();
    for &key in keys {
        let part = group_subjects(&evaluated, key, spec)?;
        let [low_label, high_label] = spec.labels(key);

        let feature_values = |table: &HashMap<&str, &FeatureVector>, ids: &[String], k: usize| -> Vec<f64> {
            ids.iter().filter_map(|id| table[id.as_str()].values[k]).collect()
        };
        let auc = |table: &HashMap<&str, &FeatureVector>, k: usize| -> Option<f64> {
            let (scores, ls): (Vec<f64>, Vec<bool>) = evaluated
                .subjects
                .iter()
                .filter_map(|s| {
                    let id = s.subject_id.as_str();
                    Some((table[id].values[k]?, *labels.get(id)?))
                })
                .unzip();
            roc_auc(&scores, &ls).ok()
        };
        let features = (0..N_FEATURES)
            .map(|k| FeatureComparison {
                feature: feature_name(k),
                before: StageComparison::of(
                    &feature_values(&before, &part.low, k),
                    &feature_values(&before, &part.high, k),
                ),
                after: StageComparison::of(
                    &feature_values(&after, &part.low, k),
                    &feature_values(&after, &part.high, k),
                ),
                auc_before: auc(&before, k),
                auc_after: auc(&after, k),
            })
            .collect();

        let tissue_stage = |table: Option<&[TissueIntensities]>, t: Tissue, post: bool| {
            let table = table?;
            let by_id: HashMap<&str, &TissueIntensities> =
                table.iter().map(|r| (r.subject_id.as_str(), r)).collect();
            let pick = |ids: &[String]| -> Vec<f64> {
                ids.iter()
                    .filter_map(|id| {
                        let r = by_id.get(id.as_str())?;
                        let m = if post { &r.post1 } else { &r.pre };
                        m.get(&t).copied()
                    })
                    .collect()
            };
            Some(StageComparison::of(&pick(&part.low), &pick(&part.high)))
        };
        let mut tissues = Vec::new();
        if inputs.tissues_before.is_some() || inputs.tissues_after.is_some() {
            for t in REPORTED_TISSUES {
                for (sequence, post) in [("pre", false), ("post1", true)] {
                    tissues.push(TissueComparison {
                        tissue: t,
                        sequence: sequence.to_string(),
                        before: tissue_stage(inputs.tissues_before, t, post),
                        after: tissue_stage(inputs.tissues_after, t, post),
                    });
                }
            }
        }

        groupings.push(GroupingReport {
            key,
            threshold: spec.threshold(key),
            groups: [
                GroupSummary {
                    label: low_label,
                    count: part.low.len(),
                    subject_ids: part.low.clone(),
                },
                GroupSummary {
                    label: high_label,
                    count: part.high.len(),
                    subject_ids: part.high.clone(),
                },
            ],
            tissues,
            features,
        });
    }
    Ok(EvaluationReport {
        n_subjects: evaluated.len(),
        groupings,
    })
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Flat table: `key,section,item,stage,group,statistic,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("key,section,item,stage,group,statistic,value\n");
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let stage_rows = |out: &mut String, key: GroupKey, section: &str, item: &str, stage: &str, c: &StageComparison, labels: [&str; 2]| {
            for (g, label) in c.groups.iter().zip(labels) {
                out.push_str(&format!("{key},{section},{item},{stage},{label},n,{}\n", g.n));
                out.push_str(&format!("{key},{section},{item},{stage},{label},mean,{}\n", fmt(g.mean)));
                out.push_str(&format!("{key},{section},{item},{stage},{label},std,{}\n", fmt(g.std)));
            }
            out.push_str(&format!("{key},{section},{item},{stage},,ks,{}\n", fmt(c.ks)));
            out.push_str(&format!("{key},{section},{item},{stage},,ratio,{}\n", fmt(c.ratio)));
        };
        for g in &self.groupings {
            let labels = [g.groups[0].label.as_str(), g.groups[1].label.as_str()];
            for t in &g.tissues {
                let item = format!("{}_{}", t.tissue, t.sequence);
                for (stage, c) in [("before", &t.before), ("after", &t.after)] {
                    if let Some(c) = c {
                        stage_rows(&mut out, g.key, "tissue", &item, stage, c, labels);
                    }
                }
            }
            for f in &g.features {
                stage_rows(&mut out, g.key, "feature", &f.feature, "before", &f.before, labels);
                stage_rows(&mut out, g.key, "feature", &f.feature, "after", &f.after, labels);
                out.push_str(&format!("{},feature,{},before,,auc,{}\n", g.key, f.feature, fmt(f.auc_before)));
                out.push_str(&format!("{},feature,{},after,,auc,{}\n", g.key, f.feature, fmt(f.auc_after)));
            }
        }
        out
    }

    /// Writes `path` (JSON) and the flat CSV next to it with a `.csv` extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_atomic(&path.with_extension("csv"), self.to_csv().as_bytes())?;
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn grouping(&self, key: GroupKey) -> Option<&GroupingReport> {
        self.groupings.iter().find(|g| g.key == key)
    }
}

impl GroupingReport {
    /// Feature comparison by 1-based number.
    pub fn feature(&self, number: usize) -> &FeatureComparison {
        &self.features[number - 1]
    }

    pub fn tissue(&self, tissue: Tissue, sequence: &str) -> Option<&TissueComparison> {
        self.tissues.iter().find(|t| t.tissue == tissue && t.sequence == sequence)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucRow {
    pub feature: String,
    pub auc: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Single-feature AUCs against binary labels keyed by subject id. Subjects
/// without a label or a value for a feature are left out of that feature.
pub fn feature_aucs(features: &[FeatureVector], labels: &HashMap<String, bool>) -> Vec<AucRow> {
    (0..N_FEATURES)
        .map(|k| {
            let (scores, ls): (Vec<f64>, Vec<bool>) = features
                .iter()
                .filter_map(|f| Some((f.values[k]?, *labels.get(&f.subject_id)?)))
                .unzip();
            let n_pos = ls.iter().filter(|&&l| l).count();
            AucRow {
                feature: feature_name(k),
                auc: roc_auc(&scores, &ls).ok(),
                n_pos,
                n_neg: ls.len() - n_pos,
            }
        })
        .collect()
}

pub fn auc_rows_to_csv(rows: &[AucRow]) -> String {
    let mut out = String::from("feature,auc,n_pos,n_neg\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.feature,
            r.auc.map(|a| a.to_string()).unwrap_or_default(),
            r.n_pos,
            r.n_neg
        ));
    }
    out
}

/// Reads `subject_id,label` rows with labels 0 or 1.
pub fn read_labels_csv(path: impl AsRef<Path>) -> Result<HashMap<String, bool>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let mut out = HashMap::new();
    for (n, rec) in r.records().enumerate() {
        let line = n + 2;
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            column: 0,
            message: e.to_string(),
        })?;
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            column: 2,
            message: msg,
        };
        if rec.len() != 2 {
            return Err(bad(format!("expected 2 fields, got {}", rec.len())));
        }
        let label = match &rec[1] {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("label must be 0 or 1, got {other:?}"))),
        };
        if out.insert(rec[0].to_string(), label).is_some() {
            return Err(Error::DuplicateSubject(rec[0].to_string()));
        }
    }
    Ok(out)
}
