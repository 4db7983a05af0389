//! Preprocessing, patch extraction, augmentation and dataset assembly.

pub mod augment;
pub mod dataset;
pub mod patches;
pub mod preprocess;

pub use augment::{augment, sample_rotation, sample_translation, AugmentMode, AugmentSpec, Rejection};
pub use dataset::{build_dataset, read_dataset, write_dataset, DatasetConfig, DatasetStats, PatchDataset, PatchRecord};
pub use patches::{extract_patches, Patch, PatchConfig, PatchOrigin, PatchSample, PatchTarget, PAD_VALUE};
pub use preprocess::{median_filter, normalize, preprocess};
