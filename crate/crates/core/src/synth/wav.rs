use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use super::{Result, SynthError};

/// Encodes mono samples in `[-1, 1]` as a 16-bit PCM WAV file in memory.
pub fn encode_wav(samples: &[f32], sample_rate: u32) -> Result<Vec<u8>> {
    if let Some((index, &value)) = samples.iter().enumerate().find(|(_, s)| !(s.abs() <= 1.0)) {
        return Err(SynthError::ClippedInput { index, value });
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::with_capacity(44 + 2 * samples.len()));
    {
        let mut w = WavWriter::new(&mut buf, spec)?;
        let mut pcm = w.get_i16_writer(samples.len() as u32);
        for &s in samples {
            pcm.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16);
        }
        pcm.flush()?;
        w.finalize()?;
    }
    Ok(buf.into_inner())
}

pub fn write_wav(path: impl AsRef<Path>, samples: &[f32], sample_rate: u32) -> Result<()> {
    let bytes = encode_wav(samples, sample_rate)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Reads a mono WAV file (16/24/32-bit PCM or 32-bit float) as samples in
/// `[-1, 1]` and its sample rate.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<f32>, u32)> {
    let reader = hound::WavReader::open(path)?;
    decode(reader)
}

pub fn decode_wav(bytes: &[u8]) -> Result<(Vec<f32>, u32)> {
    decode(hound::WavReader::new(Cursor::new(bytes))?)
}

fn decode<R: std::io::Read>(mut reader: hound::WavReader<R>) -> Result<(Vec<f32>, u32)> {
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(SynthError::UnsupportedWav(format!("{} channels, expected mono", spec.channels)));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader.samples::<f32>().collect::<Result<Vec<_>, _>>()?,
        (SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<Result<Vec<_>, _>>()?
        }
        (fmt, bits) => {
            return Err(SynthError::UnsupportedWav(format!("{bits}-bit {fmt:?} samples")));
        }
    };
    Ok((samples, spec.sample_rate))
}
