//! Minimal RIFF/WAVE reader for 16-bit signed PCM mono files, plus the
//! `path,label,speaker_id` manifest format.

use std::fs;
use std::path::{Path, PathBuf};

use super::AudioError;

/// Decoded samples straight from a WAV file, before labeling and length
/// normalization.
#[derive(Debug, Clone)]
pub struct WavData {
    /// Samples scaled by 1/32768 into [-1, 1].
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

fn io_err(path: &Path, source: std::io::Error) -> AudioError {
    AudioError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn u16_le(b: &[u8], off: usize) -> u16 {
    u16::from_le_bytes([b[off], b[off + 1]])
}

fn u32_le(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

/// Parse a RIFF/WAVE file containing 16-bit signed little-endian PCM mono
/// audio. Unknown chunks are skipped; format deviations get distinct errors.
pub fn read_wav(path: impl AsRef<Path>) -> Result<WavData, AudioError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    parse_wav(&bytes)
}

fn parse_wav(bytes: &[u8]) -> Result<WavData, AudioError> {
    if bytes.len() < 12 {
        return Err(AudioError::Truncated("shorter than a RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(AudioError::BadMagic(format!(
            "expected RIFF, found {:?}",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(AudioError::BadMagic(format!(
            "expected WAVE form type, found {:?}",
            String::from_utf8_lossy(&bytes[8..12])
        )));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    let mut pos = 12usize;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_le(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start + size;
        if body_end > bytes.len() {
            return Err(AudioError::Truncated(format!(
                "chunk {:?} claims {size} bytes past end of file",
                String::from_utf8_lossy(id)
            )));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(AudioError::Truncated(
                        "fmt chunk shorter than 16 bytes".into(),
                    ));
                }
                fmt = Some((
                    u16_le(body, 0),
                    u16_le(body, 2),
                    u32_le(body, 4),
                    u16_le(body, 14),
                ));
            }
            b"data" => {
                data = Some(body);
            }
            _ => {} // skip LIST, fact, ...
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        pos = body_end + (size & 1);
    }

    let (format, channels, sample_rate, bits) =
        fmt.ok_or_else(|| AudioError::Truncated("missing fmt chunk".into()))?;
    if format != 1 {
        return Err(AudioError::UnsupportedFormat(format!(
            "audio format tag {format}, only PCM (1) is supported"
        )));
    }
    if channels != 1 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{channels} channels, only mono is supported"
        )));
    }
    if bits != 16 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{bits}-bit samples, only 16-bit is supported"
        )));
    }
    let data = data.ok_or_else(|| AudioError::Truncated("missing data chunk".into()))?;
    let samples = data
        .chunks_exact(2)
        .map(|pair| f64::from(i16::from_le_bytes([pair[0], pair[1]])) / 32768.0)
        .collect();
    Ok(WavData {
        samples,
        sample_rate,
    })
}

/// One `path,label,speaker_id` manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub speaker_id: String,
}

/// Read a CSV manifest of `path,label,speaker_id` lines. A `path,label`
/// header row is tolerated, blank lines are skipped. When the speaker field
/// is empty, the Speech Commands convention applies: the file-stem substring
/// before `_nohash_` is the speaker id.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, AudioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("path,")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(AudioError::BadManifest {
                line: lineno + 1,
                reason: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let label = fields[1]
            .trim()
            .parse::<usize>()
            .map_err(|_| AudioError::BadManifest {
                line: lineno + 1,
                reason: format!("bad label `{}`", fields[1]),
            })?;
        let wav_path = PathBuf::from(fields[0].trim());
        let speaker = fields[2].trim();
        let speaker_id = if speaker.is_empty() {
            speaker_from_filename(&wav_path).ok_or_else(|| AudioError::BadManifest {
                line: lineno + 1,
                reason: "empty speaker and no _nohash_ convention in filename".into(),
            })?
        } else {
            speaker.to_string()
        };
        entries.push(ManifestEntry {
            path: wav_path,
            label,
            speaker_id,
        });
    }
    Ok(entries)
}

/// Speech Commands naming convention: `<speaker>_nohash_<take>.wav`.
fn speaker_from_filename(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    let idx = stem.find("_nohash_")?;
    Some(stem[..idx].to_string())
}
