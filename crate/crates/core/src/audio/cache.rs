//! Bit-exact spectrogram cache.
//!
//! Layout: magic `SPC1`, u32-LE record count, u32-LE freq bins, u32-LE time
//! frames; per record: u32-LE label, u16-LE speaker-id byte length, the
//! speaker-id UTF-8 bytes, then `F*T` 32-bit IEEE-754 LE values row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::Spectrogram;

use super::AudioError;

const MAGIC: &[u8; 4] = b"SPC1";

/// Write a dataset cache atomically (temp file + rename).
pub fn cache_write(dataset: &[Spectrogram], path: impl AsRef<Path>) -> Result<(), AudioError> {
    let path = path.as_ref();
    let io = |e: std::io::Error| AudioError::Io {
        path: path.display().to_string(),
        source: e,
    };

    let (f, t) = match dataset.first() {
        Some(s) => (s.freq_bins, s.time_frames),
        None => (0, 0),
    };
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(dataset.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(f as u32).to_le_bytes());
    bytes.extend_from_slice(&(t as u32).to_le_bytes());
    for spec in dataset {
        assert_eq!(
            (spec.freq_bins, spec.time_frames),
            (f, t),
            "cache requires a uniform spectrogram shape"
        );
        bytes.extend_from_slice(&(spec.label as u32).to_le_bytes());
        let speaker = spec.speaker_id.as_bytes();
        assert!(speaker.len() <= u16::MAX as usize, "speaker id too long");
        bytes.extend_from_slice(&(speaker.len() as u16).to_le_bytes());
        bytes.extend_from_slice(speaker);
        for &v in &spec.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }

    let tmp = path.with_extension("spc.tmp");
    {
        let mut file = fs::File::create(&tmp).map_err(io)?;
        file.write_all(&bytes).map_err(io)?;
        file.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

/// Read a cache written by [`cache_write`]. Roundtrips are bit-exact on
/// values, labels and speaker ids; `source_id` is rebuilt from the file name
/// and record index.
pub fn cache_read(path: impl AsRef<Path>) -> Result<Vec<Spectrogram>, AudioError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| AudioError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    if bytes.len() < 16 {
        return Err(AudioError::Truncated(
            "cache shorter than its header".into(),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(AudioError::BadMagic(format!(
            "expected SPC1, found {:?}",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let f = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let t = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let pixels = f
        .checked_mul(t)
        .ok_or_else(|| AudioError::DimensionOverflow(format!("{f} x {t} pixels")))?;
    let value_bytes = pixels
        .checked_mul(4)
        .ok_or_else(|| AudioError::DimensionOverflow(format!("{pixels} pixel payload")))?;

    let mut out = Vec::with_capacity(count);
    let mut pos = 16usize;
    for record in 0..count {
        let truncated = |what: &str| {
            AudioError::Truncated(format!(
                "header claims {count} records but record {record} is missing its {what}"
            ))
        };
        if pos + 6 > bytes.len() {
            return Err(truncated("label and speaker length"));
        }
        let label = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let spk_len = u16::from_le_bytes(bytes[pos + 4..pos + 6].try_into().unwrap()) as usize;
        pos += 6;
        if pos + spk_len > bytes.len() {
            return Err(truncated("speaker id"));
        }
        let speaker = String::from_utf8_lossy(&bytes[pos..pos + spk_len]).into_owned();
        pos += spk_len;
        if pos + value_bytes > bytes.len() {
            return Err(truncated("pixel payload"));
        }
        let values: Vec<f32> = bytes[pos..pos + value_bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += value_bytes;
        out.push(Spectrogram::new(
            values,
            f,
            t,
            label,
            speaker,
            format!("{stem}#{record}"),
        ));
    }
    Ok(out)
}
