//! `.tsr` representation files: magic `TSR1`, little-endian `u32` frames,
//! `u32` channels, `u32` stats-id length, the stats-id bytes, then
//! `frames * channels` row-major `f32` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{NoteRepresentation, ReprError, Result};
use crate::N_CHANNELS;

pub const TSR_MAGIC: &[u8; 4] = b"TSR1";

pub fn encode_repr(repr: &NoteRepresentation) -> Vec<u8> {
    let id = repr.norm_stats_id.as_bytes();
    let mut out = Vec::with_capacity(16 + id.len() + repr.values.len() * 4);
    out.extend_from_slice(TSR_MAGIC);
    out.extend_from_slice(&(repr.frames as u32).to_le_bytes());
    out.extend_from_slice(&(N_CHANNELS as u32).to_le_bytes());
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id);
    for v in &repr.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_repr(bytes: &[u8]) -> Result<NoteRepresentation> {
    if bytes.len() < 4 || &bytes[..4] != TSR_MAGIC {
        return Err(ReprError::BadMagic);
    }
    let mut pos = 4;
    let mut next_u32 = |what: &str| -> Result<u32> {
        let b = bytes
            .get(pos..pos + 4)
            .ok_or_else(|| ReprError::ShapeMismatch(format!("truncated before {what}")))?;
        pos += 4;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    };
    let frames = next_u32("frame count")? as usize;
    let channels = next_u32("channel count")? as usize;
    let id_len = next_u32("stats id")? as usize;
    if channels != N_CHANNELS {
        return Err(ReprError::ShapeMismatch(format!("{channels} channels, expected {N_CHANNELS}")));
    }
    let id = bytes
        .get(pos..pos + id_len)
        .ok_or_else(|| ReprError::ShapeMismatch("truncated stats id".into()))?;
    let id = String::from_utf8(id.to_vec()).map_err(|_| ReprError::ShapeMismatch("stats id is not utf-8".into()))?;
    pos += id_len;
    let payload = &bytes[pos..];
    let expected = frames * channels * 4;
    if payload.len() != expected {
        return Err(ReprError::ShapeMismatch(format!(
            "payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    NoteRepresentation::new(frames, values, id)
}

pub fn write_repr(path: impl AsRef<Path>, repr: &NoteRepresentation) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_repr(repr))?;
    Ok(())
}

pub fn read_repr(path: impl AsRef<Path>) -> Result<NoteRepresentation> {
    decode_repr(&fs::read(path)?)
}
