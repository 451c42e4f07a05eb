//! Tissue-anchored intensity normalization for breast DCE-MRI.
//!
//! A subject's anchor intensities (air, fat, dense tissue, enhancing heart)
//! are mapped onto those of an archetype subject by a monotone piecewise
//! linear function, which is then applied to every volume of the series.

pub mod anchors;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod manifest;
pub mod mapping;
pub mod model;
pub mod phantom;
pub mod pipeline;
pub mod segmentation;
pub mod stats;
pub mod volume;

pub use anchors::{extract_anchors, AnchorSet};
pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use features::{extract_features, FeatureVector};
pub use manifest::{DatasetManifest, StudySeries, SubjectEntry};
pub use mapping::{apply_mapping, build_mapping, MappingFunction};
pub use model::{train_archetype, NormalizationModel};
pub use phantom::{generate_phantom, PhantomConfig};
pub use pipeline::Pipeline;
pub use segmentation::{SegmentationConfig, SegmenterRegistry};
pub use volume::{Geometry, Tissue, TissueMask, Volume, VoxelSet};
