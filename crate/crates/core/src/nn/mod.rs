//! Minimal reverse-mode autodiff engine backing the translation network.
//!
//! Kept deliberately small: dense/conv primitives, the few fused ops the
//! architecture needs (spatial standardization, region broadcast/pooling,
//! patch gathering, diagonal-target contrastive loss), an Adam optimizer,
//! and deterministic initialization. Everything runs in `f32` on the CPU.

pub mod adam;
pub mod conv;
pub mod graph;
pub mod init;
pub mod params;

pub use adam::Adam;
pub use graph::{Arr, Graph, Var};
pub use params::{ParamId, ParamStore};
