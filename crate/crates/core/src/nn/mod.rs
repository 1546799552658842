//! Deterministic small neural-network engine.
//!
//! Layer construction from an architecture descriptor, forward inference,
//! exact reverse-mode gradients, Adam updates and a flat parameter view.

mod arch;
mod engine;

pub use arch::{ArchDescriptor, LayerSpec};
pub use engine::{
    adam_step, backward, build_model, forward, softmax_cross_entropy, Logits, ModelState,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("bad architecture descriptor: {0}")]
    BadDescriptor(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("parameter vector length mismatch: expected {expected}, got {actual}")]
    ParamLength { expected: usize, actual: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite gradient entry at index {index}")]
    NonFiniteGradient { index: usize },
}
