//! Time-domain audio containers, STFT analysis/synthesis and WAV I/O.

mod stft;
mod wav;

pub use stft::{hamming, istft, stft, StftConfig, WindowKind};
pub use wav::{read_wav, write_wav};

use ndarray::Array3;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Multichannel audio at a fixed sample rate. All channels share one length.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    sample_rate: u32,
    channels: Vec<Vec<f64>>,
}

impl Waveform {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidParameter {
                field: "sample_rate",
                reason: "must be positive".into(),
            });
        }
        if let Some(first) = channels.first() {
            if channels.iter().any(|c| c.len() != first.len()) {
                return Err(Error::DimensionMismatch("channels differ in length".into()));
            }
        }
        Ok(Self { sample_rate, channels })
    }

    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        Self::new(sample_rate, vec![samples])
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, m: usize) -> &[f64] {
        &self.channels[m]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }
}

/// One-sided multichannel STFT, indexed `(frequency, frame, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Array3<Complex64>,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn new(data: Array3<Complex64>, sample_rate: u32) -> Self {
        let data = if data.is_standard_layout() { data } else { data.as_standard_layout().to_owned() };
        Self { data, sample_rate }
    }

    pub fn n_freqs(&self) -> usize {
        self.data.dim().0
    }

    pub fn n_frames(&self) -> usize {
        self.data.dim().1
    }

    pub fn n_channels(&self) -> usize {
        self.data.dim().2
    }

    /// All frames of bin `i`, frame-major, `J * M` values.
    pub fn bin(&self, i: usize) -> &[Complex64] {
        let (_, j, m) = self.data.dim();
        &self.data.as_slice().expect("standard layout")[i * j * m..(i + 1) * j * m]
    }

    /// The observation vector `x_ij`.
    pub fn frame(&self, i: usize, j: usize) -> &[Complex64] {
        let m = self.n_channels();
        &self.bin(i)[j * m..(j + 1) * m]
    }
}
