//! Component-aware, structure-preserving synthetic-to-real image translation
//! for annotation-preserving dataset construction.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! 1. **Scene generation** (`scenegen`): a procedural toy-satellite renderer
//!    that emits synthetic samples with exact component masks and poses, plus
//!    an appearance-shifted pseudo-real domain for end-to-end verification.
//! 2. **Weak pairing** (`weakpair`): view-wise instance consistency filtering
//!    and viewpoint-matched real/synthetic pair construction.
//! 3. **Style transfer** (`styletransfer`): a mask-conditioned translation
//!    network with region-wise masked style pooling and mask-aligned
//!    modulation, trained against a convolutional discriminator.
//! 4. **Training** (`training`): non-saturating adversarial losses with R1
//!    regularization, patch-contrastive structure preservation, foreground
//!    self-regularization, and Sobel edge consistency.
//! 5. **Inference** (`inference`): foreground-only translation with mask-based
//!    composition, annotation inheritance, and component-selective transfer.
//! 6. **Metrics** (`metrics`): FID/KID image fidelity, mask IoU and edge-error
//!    structural consistency, and ADD/pass-rate/AUC pose scoring.
//!
//! All stages are deterministic given their seeds; datasets use a plain
//! directory layout (`images/`, `masks/`, `poses/`, `manifest.jsonl`) so that
//! every artifact can be inspected with standard tools.

pub mod config;
pub mod domain;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod nn;
pub mod scenegen;
pub mod styletransfer;
pub mod training;
pub mod weakpair;

pub use error::{Error, Result};
