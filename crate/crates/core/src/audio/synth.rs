//! Synthetic spectrogram datasets: a desk-scale stand-in for real keyword
//! audio. Each class is a rectangular time-frequency energy blob whose
//! position is a deterministic function of the class index, plus seeded
//! uniform noise.

use crate::data::Spectrogram;
use crate::rng::Rng;

use super::AudioError;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub freq_bins: usize,
    pub time_frames: usize,
    /// Size of the synthetic speaker pool; speakers are assigned round-robin
    /// over the global sample index so splits stay class-balanced.
    pub speaker_pool: usize,
    /// Uniform noise amplitude added to every pixel, in [0, noise_level).
    pub noise_level: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            freq_bins: 128,
            time_frames: 128,
            speaker_pool: 40,
            noise_level: 0.0,
        }
    }
}

/// Generate `classes * per_class` labeled spectrograms. Identical
/// `(cfg, seed)` yields bit-identical datasets.
pub fn gen_synthetic(
    classes: usize,
    per_class: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<Vec<Spectrogram>, AudioError> {
    if classes < 2 {
        return Err(AudioError::TooFewClasses(classes));
    }
    let mut rng = Rng::seed_from(seed);
    let mut out = Vec::with_capacity(classes * per_class);
    let mut index = 0usize;
    for class in 0..classes {
        let (r0, r1, c0, c1) = blob_rect(class, classes, cfg.freq_bins, cfg.time_frames);
        for sample in 0..per_class {
            let mut values = vec![0.0f32; cfg.freq_bins * cfg.time_frames];
            for r in r0..r1 {
                for c in c0..c1 {
                    values[r * cfg.time_frames + c] = 1.0;
                }
            }
            if cfg.noise_level > 0.0 {
                for v in &mut values {
                    *v += (rng.next_f64() * cfg.noise_level) as f32;
                }
            }
            let speaker = format!("synth-spk-{:03}", index % cfg.speaker_pool);
            out.push(Spectrogram::new(
                values,
                cfg.freq_bins,
                cfg.time_frames,
                class,
                speaker,
                format!("synth:c{class}:{sample}"),
            ));
            index += 1;
        }
    }
    Ok(out)
}

/// Deterministic blob placement: classes fill a ceil(sqrt(classes)) grid,
/// each blob covering the middle half of its cell.
fn blob_rect(
    class: usize,
    classes: usize,
    freq_bins: usize,
    time_frames: usize,
) -> (usize, usize, usize, usize) {
    let grid = (classes as f64).sqrt().ceil() as usize;
    let cell_h = freq_bins / grid;
    let cell_w = time_frames / grid;
    assert!(
        cell_h >= 2 && cell_w >= 2,
        "spectrogram too small for {classes} classes"
    );
    let gy = class / grid;
    let gx = class % grid;
    let r0 = gy * cell_h + cell_h / 4;
    let c0 = gx * cell_w + cell_w / 4;
    (r0, r0 + (cell_h / 2).max(1), c0, c0 + (cell_w / 2).max(1))
}
