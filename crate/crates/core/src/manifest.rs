//! Dataset manifests and per-subject study series.
//!
//! `manifest.json` is a JSON array of subject records. Volume and mask paths
//! are resolved relative to the directory that holds the manifest.
//!
//! ```json
//! [
//!   {
//!     "subject_id": "sub-000",
//!     "pre": "volumes/sub-000_pre",
//!     "posts": ["volumes/sub-000_post1", "volumes/sub-000_post2"],
//!     "te_ms": 1.8, "tr_ms": 4.1, "field_t": 1.5,
//!     "mask": "masks/sub-000_mask",
//!     "tumor_mask": "masks/sub-000_tumor",
//!     "label": 1
//!   }
//! ]
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{load_volume, sidecar_paths, write_atomic, Geometry, Volume};

/// One subject record of a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub pre: PathBuf,
    pub posts: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub te_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tr_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_t: Option<f64>,
    /// Full tissue mask; takes precedence over classical segmentation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    /// Tumor-only mask (any non-zero label marks tumor), merged into
    /// classically segmented masks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tumor_mask: Option<PathBuf>,
    /// Binary outcome label (1 = positive class).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    root: PathBuf,
    pub subjects: Vec<SubjectEntry>,
}

impl DatasetManifest {
    /// A manifest whose relative paths resolve against `root`.
    pub fn new(root: impl Into<PathBuf>, subjects: Vec<SubjectEntry>) -> Self {
        Self {
            root: root.into(),
            subjects,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let subjects: Vec<SubjectEntry> =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let manifest = Self { root, subjects };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Writes the subject records; paths are stored exactly as held.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.subjects).expect("manifest serializes");
        text.push('\n');
        write_atomic(path.as_ref(), text.as_bytes())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn get(&self, subject_id: &str) -> Option<&SubjectEntry> {
        self.subjects.iter().find(|s| s.subject_id == subject_id)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.subjects {
            if s.subject_id.is_empty() {
                return Err(Error::invalid("manifest", "empty subject_id"));
            }
            if !seen.insert(s.subject_id.as_str()) {
                return Err(Error::DuplicateSubject(s.subject_id.clone()));
            }
            if s.posts.is_empty() {
                return Err(Error::invalid(
                    "manifest",
                    format!("subject {:?} has no post-contrast volumes", s.subject_id),
                ));
            }
            for (field, value) in [("te_ms", s.te_ms), ("tr_ms", s.tr_ms), ("field_t", s.field_t)] {
                if let Some(v) = value {
                    if !(v.is_finite() && v > 0.0) {
                        return Err(Error::invalid(
                            "manifest",
                            format!("subject {:?}: {field} = {v} must be positive", s.subject_id),
                        ));
                    }
                }
            }
            if let Some(label) = s.label {
                if label > 1 {
                    return Err(Error::invalid(
                        "manifest",
                        format!("subject {:?}: label {label} is not 0 or 1", s.subject_id),
                    ));
                }
            }
            let refs = std::iter::once(&s.pre)
                .chain(&s.posts)
                .chain(s.mask.iter())
                .chain(s.tumor_mask.iter());
            for r in refs {
                let (header, payload) = sidecar_paths(&self.resolve(r));
                for p in [header, payload] {
                    if !p.exists() {
                        return Err(Error::MissingFile(p));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn load_series(&self, entry: &SubjectEntry) -> Result<StudySeries> {
        let pre = load_volume(self.resolve(&entry.pre))?;
        let posts = entry
            .posts
            .iter()
            .map(|p| load_volume(self.resolve(p)))
            .collect::<Result<Vec<_>>>()?;
        StudySeries::new(
            entry.subject_id.clone(),
            pre,
            posts,
            ScanParams {
                te_ms: entry.te_ms,
                tr_ms: entry.tr_ms,
                field_t: entry.field_t,
            },
        )
    }
}

/// Acquisition parameters; any of them may be unknown.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanParams {
    pub te_ms: Option<f64>,
    pub tr_ms: Option<f64>,
    pub field_t: Option<f64>,
}

/// A subject's pre-contrast volume and its ordered post-contrast volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySeries {
    pub subject_id: String,
    pre: Volume,
    posts: Vec<Volume>,
    pub params: ScanParams,
}

impl StudySeries {
    pub fn new(
        subject_id: impl Into<String>,
        pre: Volume,
        posts: Vec<Volume>,
        params: ScanParams,
    ) -> Result<Self> {
        if posts.is_empty() {
            return Err(Error::invalid("series", "at least one post-contrast volume required"));
        }
        for p in &posts {
            pre.geometry().ensure_matches(p.geometry())?;
        }
        Ok(Self {
            subject_id: subject_id.into(),
            pre,
            posts,
            params,
        })
    }

    pub fn pre(&self) -> &Volume {
        &self.pre
    }

    pub fn posts(&self) -> &[Volume] {
        &self.posts
    }

    /// The first post-contrast volume.
    pub fn post1(&self) -> &Volume {
        &self.posts[0]
    }

    pub fn geometry(&self) -> &Geometry {
        self.pre.geometry()
    }

    /// Applies `f` to every volume, keeping id and parameters.
    pub fn try_map_volumes(&self, mut f: impl FnMut(&Volume) -> Result<Volume>) -> Result<Self> {
        let pre = f(&self.pre)?;
        let posts = self.posts.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
        Self::new(self.subject_id.clone(), pre, posts, self.params)
    }

    /// `(min, max)` over all volumes of the series.
    pub fn dynamic_range(&self) -> (f32, f32) {
        std::iter::once(&self.pre)
            .chain(&self.posts)
            .map(Volume::min_max)
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), (a, b)| {
                (lo.min(a), hi.max(b))
            })
    }
}
