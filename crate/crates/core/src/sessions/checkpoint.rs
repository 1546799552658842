//! Model checkpoints.
//!
//! Layout: magic `LEWC`, u32-LE version (currently 1), u32-LE descriptor
//! byte length, the UTF-8 architecture descriptor, u32-LE session id, u64-LE
//! parameter count, the parameters as 64-bit IEEE-754 LE, a u8 flag byte
//! (bit 0 = anchor and Fisher present), then the anchor and Fisher vectors,
//! each as a u64-LE count followed by 64-bit LE values.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::nn::{build_model, ArchDescriptor, ModelState};

use super::SessionError;

const MAGIC: &[u8; 4] = b"LEWC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A persisted model: enough to resume an incremental run mid-sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub descriptor: String,
    pub params: Vec<f64>,
    pub session_id: usize,
    /// Anchor parameters and Fisher diagonal of the session that produced
    /// this model, when it trained with EWC.
    pub ewc: Option<(Vec<f64>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn from_model(model: &ModelState, session_id: usize) -> Checkpoint {
        Checkpoint {
            descriptor: model.arch.to_string(),
            params: model.params_snapshot(),
            session_id,
            ewc: None,
        }
    }

    /// Rebuild a model from the checkpoint; the optimizer state starts fresh.
    pub fn to_model(&self) -> Result<ModelState, SessionError> {
        let arch = ArchDescriptor::parse(&self.descriptor)?;
        let mut model = build_model(&arch, 0)?;
        model.params_load(&self.params)?;
        Ok(model)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> SessionError {
    SessionError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn check_consistent(ckpt: &Checkpoint) -> Result<(), SessionError> {
    let arch = ArchDescriptor::parse(&ckpt.descriptor)?;
    let expected = arch.param_count()?;
    if ckpt.params.len() != expected {
        return Err(SessionError::ParamCount(format!(
            "descriptor `{}` implies {expected} params, checkpoint carries {}",
            ckpt.descriptor,
            ckpt.params.len()
        )));
    }
    if let Some((anchor, fisher)) = &ckpt.ewc {
        if anchor.len() != expected || fisher.len() != expected {
            return Err(SessionError::ParamCount(format!(
                "anchor/fisher lengths {}/{} do not match {expected} params",
                anchor.len(),
                fisher.len()
            )));
        }
    }
    Ok(())
}

fn push_vector(bytes: &mut Vec<u8>, values: &[f64]) {
    bytes.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn checkpoint_save(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), SessionError> {
    let path = path.as_ref();
    check_consistent(ckpt)?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let desc = ckpt.descriptor.as_bytes();
    bytes.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    bytes.extend_from_slice(desc);
    bytes.extend_from_slice(&(ckpt.session_id as u32).to_le_bytes());
    bytes.extend_from_slice(&(ckpt.params.len() as u64).to_le_bytes());
    for v in &ckpt.params {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    match &ckpt.ewc {
        Some((anchor, fisher)) => {
            bytes.push(1u8);
            push_vector(&mut bytes, anchor);
            push_vector(&mut bytes, fisher);
        }
        None => bytes.push(0u8),
    }
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut file = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        file.write_all(&bytes).map_err(|e| io_err(&tmp, e))?;
        file.sync_all().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], SessionError> {
        if self.pos + n > self.bytes.len() {
            return Err(SessionError::Truncated(format!(
                "expected {n} more bytes for {what}, found {}",
                self.bytes.len() - self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32, SessionError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, SessionError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn vector(&mut self, what: &str) -> Result<Vec<f64>, SessionError> {
        let count = self.u64(what)? as usize;
        let raw = self.take(
            count.checked_mul(8).ok_or_else(|| {
                SessionError::ParamCount(format!("{what} count {count} overflows"))
            })?,
            what,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<Checkpoint, SessionError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };

    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(SessionError::BadMagic(
            String::from_utf8_lossy(magic).into_owned(),
        ));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(SessionError::Version(version));
    }
    let desc_len = r.u32("descriptor length")? as usize;
    let descriptor = String::from_utf8(r.take(desc_len, "descriptor")?.to_vec())
        .map_err(|_| SessionError::Truncated("descriptor is not UTF-8".into()))?;
    let session_id = r.u32("session id")? as usize;
    let declared = r.u64("param count")? as usize;
    let available = (bytes.len() - r.pos) / 8;
    if available < declared {
        // Distinguish a short payload from generic truncation: the header
        // made a promise the file cannot keep.
        return Err(SessionError::ParamCount(format!(
            "header declares {declared} params, payload holds at most {available}"
        )));
    }
    let raw = r.take(declared * 8, "params")?;
    let params: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let flags = r.take(1, "flags")?[0];
    let ewc = if flags & 1 != 0 {
        let anchor = r.vector("anchor")?;
        let fisher = r.vector("fisher")?;
        Some((anchor, fisher))
    } else {
        None
    };
    let ckpt = Checkpoint {
        descriptor,
        params,
        session_id,
        ewc,
    };
    check_consistent(&ckpt)?;
    Ok(ckpt)
}
