//! Audio ingestion: WAV parsing, length normalization, STFT spectrograms,
//! speaker-disjoint splits, synthetic dataset generation and the on-disk
//! spectrogram cache.

mod cache;
mod split;
mod stft;
mod synth;
mod wav;

pub use cache::{cache_read, cache_write};
pub use split::{split_by_speaker, DatasetSplit, HasSpeaker, SplitRatios};
pub use stft::{spectrogram, StftConfig};
pub use synth::{gen_synthetic, SynthConfig};
pub use wav::{read_manifest, read_wav, ManifestEntry, WavData};

use thiserror::Error;

/// A length-normalized, labeled, speaker-tagged mono clip at 16 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    /// Samples in [-1, 1].
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: usize,
    pub speaker_id: String,
    pub source_id: String,
}

pub const TARGET_SAMPLES: usize = 16_000;
pub const TARGET_RATE: u32 = 16_000;

/// Normalize a clip to exactly `target` samples: shorter clips are
/// zero-padded at the tail, longer clips are tail-truncated.
pub fn normalize_length(mut clip: AudioClip, target: usize) -> AudioClip {
    clip.samples.resize(target, 0.0);
    clip
}

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: {0}")]
    BadMagic(String),
    #[error("unsupported wav format: {0}")]
    UnsupportedFormat(String),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("bad manifest line {line}: {reason}")]
    BadManifest { line: usize, reason: String },
    #[error("cache dimension overflow: {0}")]
    DimensionOverflow(String),
    #[error("need at least {needed} speakers, found {found}")]
    TooFewSpeakers { needed: usize, found: usize },
    #[error("synthetic dataset needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
}
