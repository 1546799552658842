//! Explanation-weighted incremental training for spectrogram classifiers.
//!
//! The crate wires together a small deterministic CNN engine ([`nn`]), audio
//! ingestion and synthetic dataset generation ([`audio`]), SLIC superpixel
//! segmentation ([`segment`]), LIME feature-score generation ([`lime`]),
//! elastic weight consolidation ([`ewc`]), a weighted-loss trainer
//! ([`trainer`]) and the multi-session incremental-learning orchestrator
//! ([`sessions`]).
//!
//! Everything is seeded: a run is a pure function of its inputs and one
//! master seed, down to the bit pattern of every emitted file.

pub mod audio;
pub mod data;
pub mod ewc;
pub mod lime;
pub mod nn;
pub mod rng;
pub mod segment;
pub mod sessions;
pub mod trainer;

pub use data::Spectrogram;
pub use nn::{ArchDescriptor, Logits, ModelState};
