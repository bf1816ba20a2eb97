//! Synthetic scenes: sub-Gaussian dry sources, exponential-decay room
//! filters and convolutive mixing with ground-truth images.

use std::f64::consts::PI;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Waveform;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// i.i.d. uniform samples on [-1, 1].
    UniformIid,
    /// A sinusoid with random phase and a slowly varying envelope.
    AmTone,
}

/// Mono dry source at [`DEFAULT_SAMPLE_RATE`].
pub fn gen_subgaussian_source(length: usize, kind: SourceKind, seed: u64) -> Result<Waveform> {
    if length == 0 {
        return Err(Error::InvalidParameter { field: "length", reason: "must be positive".into() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = match kind {
        SourceKind::UniformIid => (0..length).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        SourceKind::AmTone => {
            let fs = DEFAULT_SAMPLE_RATE as f64;
            let carrier = rng.random_range(200.0..2000.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            let am_rate = rng.random_range(0.5..3.0);
            let am_phase = rng.random_range(0.0..2.0 * PI);
            (0..length)
                .map(|t| {
                    let t = t as f64 / fs;
                    let env = 1.0 + 0.3 * (2.0 * PI * am_rate * t + am_phase).sin();
                    env * (2.0 * PI * carrier * t + phase).sin()
                })
                .collect()
        }
    };
    Waveform::mono(DEFAULT_SAMPLE_RATE, samples)
}

/// Sample excess kurtosis `m4 / m2^2 - 3`.
pub fn excess_kurtosis(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (m2, m4) = x.iter().fold((0.0, 0.0), |(a, b), v| {
        let d = (v - mean) * (v - mean);
        (a + d, b + d * d)
    });
    (m4 / n) / (m2 / n).powi(2) - 3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub n_sources: usize,
    pub n_mics: usize,
    /// Reverberation time in seconds.
    pub rt60: f64,
    /// Direct-path delay in samples, indexed `[source][mic]`.
    pub direct_delay: Vec<Vec<usize>>,
    pub filter_length: usize,
    pub sample_rate: u32,
    /// Standard deviation of the tail noise before the decay envelope.
    pub tail_gain: f64,
    pub seed: u64,
}

impl RoomSpec {
    pub const DEFAULT_TAIL_GAIN: f64 = 0.1;
    pub const MAX_RANDOM_DELAY: usize = 16;

    /// A room with seeded direct delays in `0..=MAX_RANDOM_DELAY` and a filter
    /// long enough to hold the full decay.
    pub fn random(n_sources: usize, n_mics: usize, rt60: f64, sample_rate: u32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let direct_delay = (0..n_sources)
            .map(|_| (0..n_mics).map(|_| rng.random_range(0..=Self::MAX_RANDOM_DELAY)).collect())
            .collect();
        let filter_length = Self::MAX_RANDOM_DELAY + 1 + (rt60 * sample_rate as f64).ceil() as usize;
        RoomSpec {
            n_sources,
            n_mics,
            rt60,
            direct_delay,
            filter_length,
            sample_rate,
            tail_gain: Self::DEFAULT_TAIL_GAIN,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| Err(Error::InvalidParameter { field, reason: reason.into() });
        if self.n_sources == 0 {
            return bad("n_sources", "must be positive");
        }
        if self.n_mics == 0 {
            return bad("n_mics", "must be positive");
        }
        if !(self.rt60 >= 0.0 && self.rt60.is_finite()) {
            return bad("rt60", "must be finite and non-negative");
        }
        if self.filter_length == 0 {
            return bad("filter_length", "must be positive");
        }
        if self.sample_rate == 0 {
            return bad("sample_rate", "must be positive");
        }
        if !(self.tail_gain >= 0.0 && self.tail_gain.is_finite()) {
            return bad("tail_gain", "must be finite and non-negative");
        }
        if self.direct_delay.len() != self.n_sources || self.direct_delay.iter().any(|d| d.len() != self.n_mics) {
            return Err(Error::DimensionMismatch(format!(
                "direct_delay must be {} x {}",
                self.n_sources, self.n_mics
            )));
        }
        if let Some(d) = self.direct_delay.iter().flatten().find(|&&d| d >= self.filter_length) {
            return bad("direct_delay", &format!("delay {d} does not fit in {} taps", self.filter_length));
        }
        Ok(())
    }
}

/// FIR filters indexed `(source, mic, tap)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RirSet {
    pub filters: Array3<f64>,
    pub sample_rate: u32,
}

impl RirSet {
    pub fn n_sources(&self) -> usize {
        self.filters.dim().0
    }

    pub fn n_mics(&self) -> usize {
        self.filters.dim().1
    }

    pub fn filter(&self, n: usize, m: usize) -> Vec<f64> {
        self.filters.slice(ndarray::s![n, m, ..]).to_vec()
    }
}

/// Unit impulse at the direct delay followed by white noise under an
/// `exp(-3 ln10 t / rt60)` amplitude envelope, `t` measured from the direct path.
pub fn synth_rir(spec: &RoomSpec) -> Result<RirSet> {
    spec.validate()?;
    let (n_src, n_mic, len) = (spec.n_sources, spec.n_mics, spec.filter_length);
    let mut filters = Array3::zeros((n_src, n_mic, len));
    let fs = spec.sample_rate as f64;
    for n in 0..n_src {
        for m in 0..n_mic {
            let delay = spec.direct_delay[n][m];
            filters[[n, m, delay]] = 1.0;
            if spec.rt60 == 0.0 || spec.tail_gain == 0.0 {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream((n * n_mic + m) as u64);
            let rate = 3.0 * std::f64::consts::LN_10 / (spec.rt60 * fs);
            for tap in delay + 1..len {
                let w: f64 = rng.sample(StandardNormal);
                filters[[n, m, tap]] = spec.tail_gain * w * (-rate * (tap - delay) as f64).exp();
            }
        }
    }
    Ok(RirSet { filters, sample_rate: spec.sample_rate })
}

/// Linear convolution truncated to `signal.len()` samples.
pub fn convolve(signal: &[f64], filter: &[f64]) -> Vec<f64> {
    let out_len = signal.len();
    if out_len == 0 || filter.is_empty() {
        return vec![0.0; out_len];
    }
    let full = signal.len() + filter.len() - 1;
    let nfft = full.next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);

    let spectrum = |x: &[f64]| {
        let mut buf = fwd.make_input_vec();
        buf[..x.len()].copy_from_slice(x);
        let mut spec = fwd.make_output_vec();
        fwd.process(&mut buf, &mut spec).expect("buffer sizes come from the plan");
        spec
    };
    let a = spectrum(signal);
    let b = spectrum(filter);
    let mut prod: Vec<_> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    // The inverse requires purely real DC and Nyquist bins.
    if let Some(first) = prod.first_mut() {
        first.im = 0.0;
    }
    if let Some(last) = prod.last_mut() {
        last.im = 0.0;
    }
    let mut out = inv.make_output_vec();
    inv.process(&mut prod, &mut out).expect("buffer sizes come from the plan");
    let scale = 1.0 / nfft as f64;
    out.truncate(out_len);
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureBundle {
    /// `M` channels.
    pub mixture: Waveform,
    /// One `M`-channel image per source.
    pub images: Vec<Waveform>,
    /// Dry sources after level scaling.
    pub dries: Vec<Waveform>,
    pub rirs: RirSet,
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Convolves each mono dry source with its filters. Every source is scaled so
/// that its channel-0 image power sits `snr_db` below that of source 0
/// (all equal for `snr_db = 0`).
pub fn mix(dries: &[Waveform], rirs: &RirSet, snr_db: f64) -> Result<MixtureBundle> {
    if dries.len() != rirs.n_sources() {
        return Err(Error::DimensionMismatch(format!(
            "{} dry sources for {} filter sets",
            dries.len(),
            rirs.n_sources()
        )));
    }
    let first = dries.first().ok_or_else(|| Error::EmptyInput("no dry sources".into()))?;
    let (len, rate) = (first.len(), first.sample_rate());
    for d in dries {
        if d.n_channels() != 1 || d.len() != len || d.sample_rate() != rate {
            return Err(Error::DimensionMismatch(format!(
                "dry sources must be mono, {len} samples at {rate} Hz"
            )));
        }
    }
    if rate != rirs.sample_rate {
        return Err(Error::DimensionMismatch(format!(
            "sources at {rate} Hz, filters at {} Hz",
            rirs.sample_rate
        )));
    }

    let raw: Vec<Vec<Vec<f64>>> = dries
        .iter()
        .enumerate()
        .map(|(n, d)| (0..rirs.n_mics()).map(|m| convolve(d.channel(0), &rirs.filter(n, m))).collect())
        .collect();
    let powers: Vec<f64> = raw.iter().map(|img| power(&img[0])).collect();
    if let Some(n) = powers.iter().position(|&p| p == 0.0) {
        return Err(Error::InvalidParameter {
            field: "dries",
            reason: format!("source {n} has a silent channel-0 image"),
        });
    }
    let target_ratio = 10f64.powf(-snr_db / 10.0);
    let gains: Vec<f64> = powers
        .iter()
        .enumerate()
        .map(|(n, p)| if n == 0 { 1.0 } else { (powers[0] * target_ratio / p).sqrt() })
        .collect();

    let mut images = Vec::with_capacity(dries.len());
    let mut scaled_dries = Vec::with_capacity(dries.len());
    for ((img, d), g) in raw.into_iter().zip(dries).zip(&gains) {
        let chans = img.into_iter().map(|c| c.into_iter().map(|v| v * g).collect()).collect();
        images.push(Waveform::new(rate, chans)?);
        scaled_dries.push(Waveform::mono(rate, d.channel(0).iter().map(|v| v * g).collect())?);
    }
    let mut sum = vec![vec![0.0; len]; rirs.n_mics()];
    for img in &images {
        for (acc, ch) in sum.iter_mut().zip(img.channels()) {
            acc.iter_mut().zip(ch).for_each(|(a, v)| *a += v);
        }
    }
    Ok(MixtureBundle { mixture: Waveform::new(rate, sum)?, images, dries: scaled_dries, rirs: rirs.clone() })
}

/// Everything needed to regenerate a scene from a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub n_sources: usize,
    pub n_mics: usize,
    pub length: usize,
    pub rt60: f64,
    pub source_kind: SourceKind,
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            n_sources: 2,
            n_mics: 2,
            length: 5 * DEFAULT_SAMPLE_RATE as usize,
            rt60: 0.3,
            source_kind: SourceKind::UniformIid,
            snr_db: 0.0,
            seed: 0,
        }
    }
}

/// Seed of dry source `n` in the scene seeded by `scene_seed`.
pub fn source_seed(scene_seed: u64, n: usize) -> u64 {
    scene_seed.wrapping_mul(1000).wrapping_add(n as u64)
}

/// Sources use [`source_seed`]; the room uses the scene seed.
pub fn simulate_scene(spec: &SceneSpec) -> Result<MixtureBundle> {
    let dries = (0..spec.n_sources)
        .map(|n| gen_subgaussian_source(spec.length, spec.source_kind, source_seed(spec.seed, n)))
        .collect::<Result<Vec<_>>>()?;
    let room = RoomSpec::random(spec.n_sources, spec.n_mics, spec.rt60, DEFAULT_SAMPLE_RATE, spec.seed);
    mix(&dries, &synth_rir(&room)?, spec.snr_db)
}
