//! Magnitude STFT with log1p compression.
//!
//! Defaults: Hann window, n_fft = 256, hop = 128, Nyquist bin dropped
//! (128 frequency bins), frames zero-padded to 128 columns, so a 16000-sample
//! clip always lands on a 128x128 grid that survives two 2x2 pools cleanly.

use crate::data::Spectrogram;

use super::AudioClip;

#[derive(Debug, Clone)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    /// Output frequency bins; at most n_fft/2 (the Nyquist bin is dropped).
    pub freq_bins: usize,
    /// Output frame count; shorter signals are padded with zero columns.
    pub time_frames: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            n_fft: 256,
            hop: 128,
            freq_bins: 128,
            time_frames: 128,
        }
    }
}

/// Periodic Hann window of length n.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / n as f64).cos()))
        .collect()
}

/// In-place iterative radix-2 FFT. `re.len()` must be a power of two.
fn fft(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -std::f64::consts::TAU / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        let mut start = 0;
        while start < n {
            let (mut cr, mut ci) = (1.0f64, 0.0f64);
            for k in 0..len / 2 {
                let a = start + k;
                let b = a + len / 2;
                let tr = re[b] * cr - im[b] * ci;
                let ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
            start += len;
        }
        len <<= 1;
    }
}

/// Compute the log1p-magnitude spectrogram of a normalized clip.
pub fn spectrogram(clip: &AudioClip, cfg: &StftConfig) -> Spectrogram {
    assert!(
        cfg.freq_bins <= cfg.n_fft / 2,
        "freq_bins must drop the Nyquist bin"
    );
    let window = hann(cfg.n_fft);
    let n_frames = if clip.samples.len() >= cfg.n_fft {
        (clip.samples.len() - cfg.n_fft) / cfg.hop + 1
    } else {
        0
    };
    let mut values = vec![0.0f32; cfg.freq_bins * cfg.time_frames];
    let mut re = vec![0.0f64; cfg.n_fft];
    let mut im = vec![0.0f64; cfg.n_fft];
    for frame in 0..n_frames.min(cfg.time_frames) {
        let start = frame * cfg.hop;
        for i in 0..cfg.n_fft {
            re[i] = clip.samples[start + i] * window[i];
            im[i] = 0.0;
        }
        fft(&mut re, &mut im);
        for bin in 0..cfg.freq_bins {
            let mag = (re[bin] * re[bin] + im[bin] * im[bin]).sqrt();
            values[bin * cfg.time_frames + frame] = mag.ln_1p() as f32;
        }
    }
    Spectrogram::new(
        values,
        cfg.freq_bins,
        cfg.time_frames,
        clip.label,
        clip.speaker_id.clone(),
        clip.source_id.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{normalize_length, TARGET_RATE, TARGET_SAMPLES};

    fn clip_from(samples: Vec<f64>) -> AudioClip {
        normalize_length(
            AudioClip {
                samples,
                sample_rate: TARGET_RATE,
                label: 0,
                speaker_id: "s".into(),
                source_id: "t".into(),
            },
            TARGET_SAMPLES,
        )
    }

    /// Direct DFT of one Hann-windowed frame; the independent oracle for the
    /// FFT-based implementation.
    fn dft_frame_magnitude(samples: &[f64], bin: usize) -> f64 {
        let n = samples.len();
        let window = hann(n);
        let mut re = 0.0;
        let mut im = 0.0;
        for (i, &s) in samples.iter().enumerate() {
            let ang = -std::f64::consts::TAU * bin as f64 * i as f64 / n as f64;
            re += s * window[i] * ang.cos();
            im += s * window[i] * ang.sin();
        }
        (re * re + im * im).sqrt()
    }

    #[test]
    fn zero_clip_gives_zero_spectrogram() {
        let spec = spectrogram(
            &clip_from(vec![0.0; TARGET_SAMPLES]),
            &StftConfig::default(),
        );
        assert_eq!(spec.freq_bins, 128);
        assert_eq!(spec.time_frames, 128);
        assert!(spec.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fft_matches_direct_dft() {
        let cfg = StftConfig::default();
        let samples: Vec<f64> = (0..cfg.n_fft)
            .map(|i| (i as f64 * 0.73).sin() * 0.4 + (i as f64 * 0.11).cos() * 0.2)
            .collect();
        let window = hann(cfg.n_fft);
        let mut re: Vec<f64> = samples.iter().zip(&window).map(|(s, w)| s * w).collect();
        let mut im = vec![0.0; cfg.n_fft];
        fft(&mut re, &mut im);
        for bin in [0usize, 1, 7, 63, 127] {
            let oracle = dft_frame_magnitude(&samples, bin);
            let got = (re[bin] * re[bin] + im[bin] * im[bin]).sqrt();
            assert!((oracle - got).abs() < 1e-9, "bin {bin}: {oracle} vs {got}");
        }
    }

    #[test]
    fn constant_clip_energy_sits_in_bin_zero() {
        let spec = spectrogram(
            &clip_from(vec![0.5; TARGET_SAMPLES]),
            &StftConfig::default(),
        );
        // Per the DFT of a Hann-windowed constant, only bins 0 and 1 carry
        // energy; everything from bin 2 up is numerically zero.
        let frame = 3;
        let bin0 = spec.at(0, frame) as f64;
        let oracle = dft_frame_magnitude(&vec![0.5; 256], 0).ln_1p();
        assert!((bin0 - oracle).abs() < 1e-6, "{bin0} vs {oracle}");
        for bin in 2..128 {
            assert!(
                (spec.at(bin, frame) as f64) < 1e-6 * bin0,
                "bin {bin} unexpectedly hot: {}",
                spec.at(bin, frame)
            );
        }
    }

    #[test]
    fn sinusoid_at_bin_center_peaks_at_that_bin() {
        // Bin width = 16000 / 256 = 62.5 Hz, so a tone at 62.5*k Hz lands
        // exactly on bin k.
        for k in [3usize, 17, 40] {
            let freq = 62.5 * k as f64;
            let samples: Vec<f64> = (0..TARGET_SAMPLES)
                .map(|i| (std::f64::consts::TAU * freq * i as f64 / TARGET_RATE as f64).sin() * 0.7)
                .collect();
            let spec = spectrogram(&clip_from(samples), &StftConfig::default());
            for frame in [1usize, 50, 100] {
                let argmax = (0..128)
                    .max_by(|&a, &b| spec.at(a, frame).partial_cmp(&spec.at(b, frame)).unwrap())
                    .unwrap();
                assert_eq!(argmax, k, "frame {frame}");
            }
        }
    }

    #[test]
    fn tail_frames_beyond_signal_are_zero_padded() {
        // 16000 samples, n_fft 256, hop 128 -> 124 real frames, 4 zero pads.
        let samples: Vec<f64> = (0..TARGET_SAMPLES)
            .map(|i| (i as f64 * 0.21).sin())
            .collect();
        let spec = spectrogram(&clip_from(samples), &StftConfig::default());
        for frame in 124..128 {
            for bin in 0..128 {
                assert_eq!(spec.at(bin, frame), 0.0);
            }
        }
        assert!((0..128).any(|bin| spec.at(bin, 123) != 0.0));
    }

    #[test]
    fn energy_is_monotone_in_amplitude() {
        let base: Vec<f64> = (0..TARGET_SAMPLES)
            .map(|i| (i as f64 * 0.13).sin() * 0.3)
            .collect();
        let energy = |scale: f64| -> f64 {
            let scaled: Vec<f64> = base.iter().map(|s| s * scale).collect();
            spectrogram(&clip_from(scaled), &StftConfig::default())
                .values
                .iter()
                .map(|&v| f64::from(v))
                .sum()
        };
        let (e_half, e_one, e_two) = (energy(0.5), energy(1.0), energy(2.0));
        assert!(
            e_half <= e_one && e_one <= e_two,
            "{e_half} {e_one} {e_two}"
        );
    }
}
