//! Multichannel Wiener filtering in the joint-diagonal domain.

use ndarray::{Array4, Axis};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::Result;
use crate::model::{compute_source_psd, gain_from_psd, SeparationState};
use crate::signal::{istft, Spectrogram, StftConfig, Waveform};

/// Source images `s_ijn`, stored `N x I x J x M`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparatedSources {
    pub images: Array4<Complex64>,
    pub sample_rate: u32,
}

impl SeparatedSources {
    pub fn n_sources(&self) -> usize {
        self.images.dim().0
    }

    pub fn source(&self, n: usize) -> Spectrogram {
        Spectrogram::new(self.images.index_axis(Axis(0), n).to_owned(), self.sample_rate)
    }

    /// Inverse STFT of every source image.
    pub fn to_waveforms(&self, cfg: &StftConfig, length: usize) -> Result<Vec<Waveform>> {
        (0..self.n_sources()).map(|n| istft(&self.source(n), cfg, length)).collect()
    }
}

/// `s_ijn = Q_i^-1 D_ijn Q_i x_ij` with
/// `D_ijn = diag_m(sigma_ijn g_inm / sum_n' sigma_ijn' g_in'm)`.
pub fn wiener_separate(state: &SeparationState, x: &Spectrogram) -> Result<SeparatedSources> {
    let d = state.check_against(x.n_freqs(), x.n_frames(), x.n_channels())?;
    let psd = compute_source_psd(&state.source)?;
    let chi = gain_from_psd(&psd, &state.spatial.g);
    let (n_count, m_count) = (d.sources, d.channels);

    let per_bin: Vec<Vec<Complex64>> = (0..d.freqs)
        .into_par_iter()
        .map(|i| {
            let q = &state.spatial.q[i];
            let lu = q.lu()?;
            let mut out = vec![Complex64::new(0.0, 0.0); n_count * d.frames * m_count];
            let mut masked = vec![Complex64::new(0.0, 0.0); m_count];
            for j in 0..d.frames {
                let y = q.mul_vec(x.frame(i, j));
                for n in 0..n_count {
                    for m in 0..m_count {
                        let w = psd[[i, j, n]] * state.spatial.g[[i, n, m]] / chi[[i, j, m]];
                        masked[m] = y[m] * w;
                    }
                    let s = lu.solve(&masked);
                    let base = (n * d.frames + j) * m_count;
                    out[base..base + m_count].copy_from_slice(&s);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let images = Array4::from_shape_fn((n_count, d.freqs, d.frames, m_count), |(n, i, j, m)| {
        per_bin[i][(n * d.frames + j) * m_count + m]
    });
    Ok(SeparatedSources { images, sample_rate: x.sample_rate })
}
