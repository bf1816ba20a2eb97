use std::fs::File;
use std::io::{self, BufReader};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

/// Reads PCM16 or IEEE float32 RIFF/WAVE. PCM16 maps to `[-1, 1)` by dividing by 32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io { path: path.into(), source })?;
    // The file is readable, so any I/O failure while parsing means a short header.
    let reader = WavReader::new(BufReader::new(file)).map_err(|e| match e {
        hound::Error::IoError(err) => Error::CorruptHeader { path: path.into(), reason: err.to_string() },
        other => classify(path, other),
    })?;
    let spec = reader.spec();
    let n_ch = spec.channels as usize;
    if n_ch == 0 {
        return Err(Error::CorruptHeader { path: path.into(), reason: "zero channels".into() });
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| classify(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| classify(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat {
                path: path.into(),
                reason: format!("{bits}-bit {fmt:?} samples (need 16-bit PCM or 32-bit float)"),
            })
        }
    };

    let frames = interleaved.len() / n_ch;
    let mut channels = vec![Vec::with_capacity(frames); n_ch];
    for frame in interleaved.chunks_exact(n_ch) {
        for (c, &v) in channels.iter_mut().zip(frame) {
            c.push(v);
        }
    }
    Waveform::new(spec.sample_rate, channels)
}

/// Writes interleaved IEEE float32.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: w.n_channels() as u16,
        sample_rate: w.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| classify(path, e))?;
    for t in 0..w.len() {
        for c in w.channels() {
            writer.write_sample(c[t] as f32).map_err(|e| classify(path, e))?;
        }
    }
    writer.finalize().map_err(|e| classify(path, e))
}

fn classify(path: &Path, e: hound::Error) -> Error {
    let path = path.to_path_buf();
    match e {
        hound::Error::IoError(err) if err.kind() == io::ErrorKind::UnexpectedEof => {
            Error::CorruptHeader { path, reason: "file ends inside the header".into() }
        }
        hound::Error::IoError(source) => Error::Io { path, source },
        hound::Error::FormatError(reason) => Error::CorruptHeader { path, reason: reason.into() },
        hound::Error::Unsupported => {
            Error::UnsupportedFormat { path, reason: "unsupported WAVE feature".into() }
        }
        other => Error::UnsupportedFormat { path, reason: other.to_string() },
    }
}
