//! Shared dataset substrate.

/// A labeled, speaker-tagged spectrogram: the model input and the LIME
/// perturbation substrate.
///
/// Values are stored as `f32` row-major (frequency rows × time columns),
/// matching the on-disk cache encoding exactly so cache roundtrips are
/// bit-exact; all model arithmetic widens to `f64` at the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Vec<f32>,
    pub freq_bins: usize,
    pub time_frames: usize,
    pub label: usize,
    pub speaker_id: String,
    pub source_id: String,
}

impl Spectrogram {
    pub fn new(
        values: Vec<f32>,
        freq_bins: usize,
        time_frames: usize,
        label: usize,
        speaker_id: impl Into<String>,
        source_id: impl Into<String>,
    ) -> Self {
        assert_eq!(
            values.len(),
            freq_bins * time_frames,
            "value count vs shape"
        );
        Spectrogram {
            values,
            freq_bins,
            time_frames,
            label,
            speaker_id: speaker_id.into(),
            source_id: source_id.into(),
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.freq_bins * self.time_frames
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.time_frames + col]
    }
}
