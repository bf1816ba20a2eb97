use std::f64::consts::PI;

use ndarray::Array3;
use num_complex::Complex64;
use rayon::prelude::*;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use super::{Spectrogram, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hamming,
}

/// Frame layout of the transform. The FFT length always equals the window length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    window_length: usize,
    hop: usize,
    window: WindowKind,
}

impl Default for StftConfig {
    /// 64 ms Hamming window with a 16 ms shift at 16 kHz.
    fn default() -> Self {
        Self { window_length: 1024, hop: 256, window: WindowKind::Hamming }
    }
}

impl StftConfig {
    pub fn new(window_length: usize, hop: usize) -> Result<Self> {
        if window_length == 0 || hop == 0 || hop > window_length {
            return Err(Error::InvalidParameter {
                field: "hop",
                reason: format!("need 0 < hop <= window_length, got hop={hop} window={window_length}"),
            });
        }
        Ok(Self { window_length, hop, window: WindowKind::Hamming })
    }

    /// Window and hop given in milliseconds, rounded to whole samples.
    pub fn from_millis(sample_rate: u32, window_ms: f64, hop_ms: f64) -> Result<Self> {
        let to_samples = |ms: f64| (ms * sample_rate as f64 / 1000.0).round() as usize;
        Self::new(to_samples(window_ms), to_samples(hop_ms))
    }

    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn fft_length(&self) -> usize {
        self.window_length
    }

    pub fn n_freqs(&self) -> usize {
        self.fft_length() / 2 + 1
    }

    /// Leading zero padding, chosen so the first sample sees full overlap.
    fn pad(&self) -> usize {
        self.window_length - self.hop
    }

    /// Number of frames needed to cover `length` samples.
    pub fn n_frames(&self, length: usize) -> usize {
        (length + self.pad()).div_ceil(self.hop)
    }

    pub fn window(&self) -> Vec<f64> {
        match self.window {
            WindowKind::Hamming => hamming(self.window_length),
        }
    }
}

/// Periodic Hamming window.
pub fn hamming(n: usize) -> Vec<f64> {
    (0..n).map(|k| 0.54 - 0.46 * (2.0 * PI * k as f64 / n as f64).cos()).collect()
}

pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    if w.n_channels() == 0 || w.is_empty() {
        return Err(Error::EmptyInput("waveform has no samples".into()));
    }
    if w.len() < cfg.window_length {
        return Err(Error::EmptyInput(format!(
            "{} samples is shorter than one {}-sample window",
            w.len(),
            cfg.window_length
        )));
    }
    let n_freqs = cfg.n_freqs();
    let n_frames = cfg.n_frames(w.len());
    let n_ch = w.n_channels();
    let window = cfg.window();
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(cfg.fft_length());

    let per_channel: Vec<Vec<Complex64>> = w
        .channels()
        .par_iter()
        .map(|x| {
            let mut frame = fft.make_input_vec();
            let mut spec = fft.make_output_vec();
            let mut scratch = fft.make_scratch_vec();
            let mut out = vec![Complex64::new(0.0, 0.0); n_frames * n_freqs];
            for j in 0..n_frames {
                let start = (j * cfg.hop) as isize - cfg.pad() as isize;
                for (k, v) in frame.iter_mut().enumerate() {
                    let t = start + k as isize;
                    *v = if t >= 0 && (t as usize) < x.len() { x[t as usize] * window[k] } else { 0.0 };
                }
                fft.process_with_scratch(&mut frame, &mut spec, &mut scratch)
                    .expect("buffer sizes come from the plan");
                out[j * n_freqs..(j + 1) * n_freqs].copy_from_slice(&spec);
            }
            out
        })
        .collect();

    let data = Array3::from_shape_fn((n_freqs, n_frames, n_ch), |(i, j, m)| per_channel[m][j * n_freqs + i]);
    Ok(Spectrogram::new(data, w.sample_rate()))
}

/// Weighted overlap-add with the canonical dual window, so an unmodified
/// spectrogram reconstructs its input exactly.
pub fn istft(s: &Spectrogram, cfg: &StftConfig, length: usize) -> Result<Waveform> {
    let (n_freqs, n_frames, n_ch) = s.data.dim();
    if n_freqs != cfg.n_freqs() {
        return Err(Error::ShapeMismatch(format!(
            "{n_freqs} frequency bins, configuration expects {}",
            cfg.n_freqs()
        )));
    }
    if n_frames != cfg.n_frames(length) {
        return Err(Error::ShapeMismatch(format!(
            "{n_frames} frames cannot cover {length} samples (expected {})",
            cfg.n_frames(length)
        )));
    }
    let n = cfg.fft_length();
    let window = cfg.window();
    let ifft = RealFftPlanner::<f64>::new().plan_fft_inverse(n);

    let mut norm = vec![0.0; length];
    for j in 0..n_frames {
        let start = (j * cfg.hop) as isize - cfg.pad() as isize;
        for (k, w) in window.iter().enumerate() {
            let t = start + k as isize;
            if t >= 0 && (t as usize) < length {
                norm[t as usize] += w * w;
            }
        }
    }

    let channels: Vec<Vec<f64>> = (0..n_ch)
        .into_par_iter()
        .map(|m| {
            let mut spec = ifft.make_input_vec();
            let mut frame = ifft.make_output_vec();
            let mut scratch = ifft.make_scratch_vec();
            let mut y = vec![0.0; length];
            for j in 0..n_frames {
                for (i, z) in spec.iter_mut().enumerate() {
                    *z = s.data[[i, j, m]];
                }
                // Real signals have real DC and Nyquist coefficients.
                spec[0].im = 0.0;
                spec[n_freqs - 1].im = 0.0;
                ifft.process_with_scratch(&mut spec, &mut frame, &mut scratch)
                    .expect("buffer sizes come from the plan");
                let start = (j * cfg.hop) as isize - cfg.pad() as isize;
                for (k, v) in frame.iter().enumerate() {
                    let t = start + k as isize;
                    if t >= 0 && (t as usize) < length {
                        y[t as usize] += v / n as f64 * window[k];
                    }
                }
            }
            for (v, d) in y.iter_mut().zip(&norm) {
                if *d > 0.0 {
                    *v /= d;
                }
            }
            y
        })
        .collect();
    Waveform::new(s.sample_rate, channels)
}
