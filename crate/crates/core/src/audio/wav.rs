use std::path::Path;

use crate::error::{Error, Result};

/// Reads a mono PCM or float WAV file as samples in [-1, 1].
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    let format = reader.spec();
    if format.channels != 1 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            msg: format!("expected mono audio, found {} channels", format.channels),
        });
    }
    let samples = match format.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (format.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<Vec<_>, _>>()?
        }
    };
    Ok((samples, format.sample_rate))
}

/// Writes 16-bit PCM, clipping to [-1, 1].
pub fn write_wav_i16(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let format = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, format)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}
