//! Dataset ingestion, synthetic multi-domain data, fold splitting, patch
//! sampling and augmentation.

mod augment;
mod folds;
mod image_io;
mod manifest;
mod sampling;
mod synth;

pub use augment::{augment, flip_horizontal, flip_vertical, rot90, scale_intensity, AugmentConfig};
pub use folds::{make_folds, stratified_folds, FoldSplit};
pub use image_io::{ImageData, MaskData};
pub use manifest::{load_manifest, Dataset, DatasetManifest, LoadedSample, Sample};
pub use sampling::{extract, sample_minibatch, Patch};
pub use synth::{chroma_hue_degrees, hue_rotation, render_sample, synth_generate, DomainStyle, SynthSpec};
