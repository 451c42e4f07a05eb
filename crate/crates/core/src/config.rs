//! Pipeline configuration file.
//!
//! ```json
//! {
//!   "segmentation": { "method": "auto", "air_fraction": 0.05 },
//!   "anchors": { "heart_statistic": "p90" },
//!   "features": { "denoise_median": 1 },
//!   "evaluation": { "te_threshold_ms": 2.0 }
//! }
//! ```
//!
//! Every section and key is optional; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anchors::{AnchorConfig, AnchorStatisticRegistry};
use crate::error::{Error, Result};
use crate::evaluation::GroupingSpec;
use crate::segmentation::SegmentationConfig;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Median filter radius applied to every volume before extraction.
    pub denoise_median: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub format_version: u32,
    pub segmentation: SegmentationConfig,
    pub anchors: AnchorConfig,
    pub features: FeatureConfig,
    pub evaluation: GroupingSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            segmentation: SegmentationConfig::default(),
            anchors: AnchorConfig::default(),
            features: FeatureConfig::default(),
            evaluation: GroupingSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: self.format_version,
                expected: CONFIG_FORMAT_VERSION,
            });
        }
        self.segmentation.validate()?;
        AnchorStatisticRegistry::default().get(&self.anchors.heart_statistic)?;
        if self.features.denoise_median == Some(0) {
            return Err(Error::invalid("features.denoise_median", "radius must be positive"));
        }
        let e = &self.evaluation;
        if [e.te_threshold_ms, e.tr_threshold_ms, e.field_threshold_t]
            .iter()
            .any(|t| !t.is_finite())
        {
            return Err(Error::invalid("evaluation", "thresholds must be finite"));
        }
        Ok(())
    }
}
