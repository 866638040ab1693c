use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use crate::error::{IrisError, Result};
use crate::signal::{WaveformBuffer, SAMPLE_RATE};

const FULL_SCALE: f64 = 32768.0;

fn spec() -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

fn check(path: &Path, field: &'static str, found: impl ToString, expected: impl ToString) -> Result<()> {
    let (found, expected) = (found.to_string(), expected.to_string());
    if found == expected {
        return Ok(());
    }
    Err(IrisError::WavFormat {
        path: path.to_path_buf(),
        field,
        found,
        expected,
    })
}

/// Reads a 16 kHz mono 16-bit PCM file.
pub fn read_wav(path: &Path) -> Result<WaveformBuffer> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => IrisError::io(path, io),
        other => IrisError::Wav(other),
    })?;
    let s = reader.spec();
    check(path, "channels", s.channels, 1)?;
    check(path, "sample_rate", s.sample_rate, SAMPLE_RATE)?;
    check(path, "bits_per_sample", s.bits_per_sample, 16)?;
    check(
        path,
        "sample_format",
        format!("{:?}", s.sample_format),
        format!("{:?}", SampleFormat::Int),
    )?;
    let samples = reader
        .into_samples::<i16>()
        .map(|v| v.map(|x| x as f64 / FULL_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    WaveformBuffer::new(samples)
}

/// Quantizes to 16 bits. Samples outside `[-1, 1]` are clipped with a warning.
pub fn encode_pcm16(wave: &WaveformBuffer) -> Vec<i16> {
    let clipped = wave.samples().iter().filter(|v| v.abs() > 1.0).count();
    if clipped > 0 {
        log::warn!("clipping {clipped} samples outside [-1, 1]");
    }
    wave.samples()
        .iter()
        .map(|&v| (v.clamp(-1.0, 1.0) * FULL_SCALE).round().clamp(-FULL_SCALE, FULL_SCALE - 1.0) as i16)
        .collect()
}

/// The waveform as it reads back after a 16-bit round trip.
pub fn quantize(wave: &WaveformBuffer) -> WaveformBuffer {
    let samples = encode_pcm16(wave).into_iter().map(|v| v as f64 / FULL_SCALE).collect();
    WaveformBuffer::new(samples).expect("quantized samples are finite and non-empty")
}

pub fn write_wav(path: &Path, wave: &WaveformBuffer) -> Result<()> {
    let mut w = WavWriter::create(path, spec()).map_err(|e| match e {
        hound::Error::IoError(io) => IrisError::io(path, io),
        other => IrisError::Wav(other),
    })?;
    for v in encode_pcm16(wave) {
        w.write_sample(v)?;
    }
    w.finalize()?;
    Ok(())
}
