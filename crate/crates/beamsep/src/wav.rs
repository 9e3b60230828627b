//! WAV input/output. Reads integer PCM (16/24/32-bit) and 32-bit float;
//! always writes 32-bit float.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::Array2;

use crate::error::{Error, Result};

/// Read a WAV file into a channels x samples array of f64 in [-1, 1]
/// (integer formats are scaled by 2^(bits-1)).
pub fn read_wav(path: &Path) -> Result<(Array2<f64>, u32)> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::WavFormat("zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = (1i64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(Error::WavFormat(format!(
                "unsupported sample format {fmt:?} at {bits} bits"
            )));
        }
    };
    let frames = interleaved.len() / channels;
    let data = Array2::from_shape_fn((channels, frames), |(c, t)| {
        interleaved[t * channels + c]
    });
    Ok((data, spec.sample_rate))
}

/// Write a channels x samples array as 32-bit float WAV.
pub fn write_wav(path: &Path, data: &Array2<f64>, sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: data.nrows() as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for t in 0..data.ncols() {
        for c in 0..data.nrows() {
            writer.write_sample(data[(c, t)] as f32)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Write a single-channel signal as 32-bit float WAV.
pub fn write_wav_mono(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let data = Array2::from_shape_vec((1, samples.len()), samples.to_vec())
        .expect("shape follows from len");
    write_wav(path, &data, sample_rate)
}
