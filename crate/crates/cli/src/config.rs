//! Run configuration: a single JSON document with strict keys, defaults for
//! everything optional, and exactly one data source.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use limetrain_core::audio::{StftConfig, SynthConfig};
use limetrain_core::lime::LimeConfig;
use limetrain_core::nn::ArchDescriptor;
use limetrain_core::segment::SlicConfig;
use limetrain_core::sessions::WeightMetric;
use limetrain_core::trainer::TrainConfig;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub classes: usize,
    pub per_class: usize,
    #[serde(default)]
    pub noise_level: f64,
    #[serde(default = "default_bins")]
    pub freq_bins: usize,
    #[serde(default = "default_bins")]
    pub time_frames: usize,
    #[serde(default = "default_pool")]
    pub speaker_pool: usize,
}

fn default_bins() -> usize {
    16
}

fn default_pool() -> usize {
    40
}

impl SyntheticSection {
    pub fn to_core(&self) -> SynthConfig {
        SynthConfig {
            freq_bins: self.freq_bins,
            time_frames: self.time_frames,
            speaker_pool: self.speaker_pool,
            noise_level: self.noise_level,
        }
    }
}

/// Exactly one of the three sources must be present.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub synthetic: Option<SyntheticSection>,
    #[serde(default)]
    pub wav_manifest: Option<PathBuf>,
    #[serde(default)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub shuffle: bool,
    pub weight_floor: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            lr: d.lr,
            batch_size: d.batch_size,
            epochs: d.epochs,
            shuffle: d.shuffle,
            weight_floor: d.weight_floor,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionsSection {
    pub n_sessions: usize,
    pub lambda: f64,
    pub metric: String,
    pub sqrt_weights: bool,
    pub session_epochs: Option<usize>,
}

impl Default for SessionsSection {
    fn default() -> Self {
        SessionsSection {
            n_sessions: 3,
            lambda: 1.0,
            metric: "euclidean".into(),
            sqrt_weights: false,
            session_epochs: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimeSection {
    pub n_samples: usize,
    pub sigma: f64,
    pub ridge: f64,
    /// Off-segment fill value; `null` means the spectrogram's global mean.
    pub baseline: Option<f64>,
}

impl Default for LimeSection {
    fn default() -> Self {
        let d = LimeConfig::default();
        LimeSection {
            n_samples: d.n_samples,
            sigma: d.sigma,
            ridge: d.ridge,
            baseline: d.baseline,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlicSection {
    pub segments: usize,
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicSection {
    fn default() -> Self {
        let d = SlicConfig::default();
        SlicSection {
            segments: d.segments,
            compactness: d.compactness,
            iterations: d.iterations,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftSection {
    pub n_fft: usize,
    pub hop: usize,
    pub freq_bins: usize,
    pub time_frames: usize,
}

impl Default for StftSection {
    fn default() -> Self {
        let d = StftConfig::default();
        StftSection {
            n_fft: d.n_fft,
            hop: d.hop,
            freq_bins: d.freq_bins,
            time_frames: d.time_frames,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub arch: String,
    pub data: DataSection,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sessions: SessionsSection,
    #[serde(default)]
    pub lime: LimeSection,
    #[serde(default)]
    pub slic: SlicSection,
    #[serde(default)]
    pub stft: StftSection,
}

fn default_seed() -> u64 {
    42
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("limetrain-out")
}

impl RunConfig {
    /// Parse and validate a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let mut sources = Vec::new();
        if self.data.synthetic.is_some() {
            sources.push("synthetic");
        }
        if self.data.wav_manifest.is_some() {
            sources.push("wav_manifest");
        }
        if self.data.cache.is_some() {
            sources.push("cache");
        }
        match sources.len() {
            0 => {
                return Err(ConfigError(
                    "data: one of `synthetic`, `wav_manifest`, `cache` is required".into(),
                ))
            }
            1 => {}
            _ => {
                return Err(ConfigError(format!(
                    "data: exactly one source allowed, found {}",
                    sources.join(" and ")
                )))
            }
        }
        if let Some(path) = &self.data.wav_manifest {
            if !path.exists() {
                return Err(ConfigError(format!(
                    "data.wav_manifest: {} does not exist",
                    path.display()
                )));
            }
        }
        if let Some(path) = &self.data.cache {
            if !path.exists() {
                return Err(ConfigError(format!(
                    "data.cache: {} does not exist",
                    path.display()
                )));
            }
        }
        self.parsed_arch()?;
        self.metric()?;
        if self.train.lr <= 0.0 {
            return Err(ConfigError(format!(
                "train.lr must be positive, got {}",
                self.train.lr
            )));
        }
        if self.train.batch_size == 0 {
            return Err(ConfigError("train.batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn parsed_arch(&self) -> Result<ArchDescriptor, ConfigError> {
        ArchDescriptor::parse(&self.arch).map_err(|e| ConfigError(format!("arch: {e}")))
    }

    pub fn metric(&self) -> Result<WeightMetric, ConfigError> {
        self.sessions
            .metric
            .parse()
            .map_err(|e| ConfigError(format!("sessions.metric: {e}")))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            seed: self.seed,
            lambda: self.sessions.lambda,
            shuffle: self.train.shuffle,
            weight_floor: self.train.weight_floor,
        }
    }

    pub fn lime_config(&self) -> LimeConfig {
        LimeConfig {
            n_samples: self.lime.n_samples,
            sigma: self.lime.sigma,
            ridge: self.lime.ridge,
            baseline: self.lime.baseline,
            seed: self.seed,
        }
    }

    pub fn slic_config(&self) -> SlicConfig {
        SlicConfig {
            segments: self.slic.segments,
            compactness: self.slic.compactness,
            iterations: self.slic.iterations,
        }
    }

    pub fn stft_config(&self) -> StftConfig {
        StftConfig {
            n_fft: self.stft.n_fft,
            hop: self.stft.hop,
            freq_bins: self.stft.freq_bins,
            time_frames: self.stft.time_frames,
        }
    }
}
