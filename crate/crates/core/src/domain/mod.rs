//! Core data types shared by every pipeline stage: the component taxonomy,
//! image buffers, component masks, poses, camera intrinsics, and the
//! on-disk dataset layout.
//!
//! All types are immutable value objects after construction and safe to share
//! across threads.

mod dataset;
mod image_buf;
mod mask;
mod pose;
mod sample;
mod taxonomy;

pub use dataset::{load_manifest, load_sample, write_sample, Dataset, ManifestEntry, PoseFile};
pub use image_buf::ImageBuffer;
pub use mask::{object_mask, resize_mask, validate_mask, BinaryMask, ComponentMask, MaskReport};
pub use pose::{CameraIntrinsics, PoseRecord};
pub use sample::{AnnotatedSample, DomainTag};
pub use taxonomy::ComponentTaxonomy;
