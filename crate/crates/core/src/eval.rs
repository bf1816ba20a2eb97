//! Scale-invariant SDR and permutation-aligned SDR improvement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Waveform;

/// Upper bound reported when the residual vanishes.
pub const SDR_CAP_DB: f64 = 100.0;
pub const MAX_PERMUTATION_SOURCES: usize = 6;

/// SI-SDR in dB: `10 log10(|a s|^2 / |a s - est|^2)` with `a = <est, s> / |s|^2`.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    let ref_energy: f64 = reference.iter().map(|s| s * s).sum();
    if ref_energy == 0.0 {
        return Err(Error::ZeroReference);
    }
    let alpha = est.iter().zip(reference).map(|(e, s)| e * s).sum::<f64>() / ref_energy;
    let target: f64 = alpha * alpha * ref_energy;
    let residual: f64 = est.iter().zip(reference).map(|(e, s)| (alpha * s - e).powi(2)).sum();
    if residual == 0.0 || target / residual > 10f64.powf(SDR_CAP_DB / 10.0) {
        return Ok(SDR_CAP_DB);
    }
    Ok(10.0 * (target / residual).log10())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metric: String,
    /// SI-SDR of the aligned estimate for each reference.
    pub per_source: Vec<f64>,
    /// `per_source` minus the SI-SDR of the unprocessed mixture.
    pub improvement: Vec<f64>,
    /// `permutation[n]` is the (0-based) estimate assigned to reference `n`.
    pub permutation: Vec<usize>,
    pub mean_improvement: f64,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }
}

/// Heap's algorithm, yielding permutations in a fixed order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            let swap_with = if k % 2 == 0 { i } else { 0 };
            if i + 1 < k {
                a.swap(swap_with, k - 1);
            }
        }
    }
    let mut out = Vec::new();
    heap(n, &mut (0..n).collect(), &mut out);
    out
}

/// Scores every estimate/reference pairing on `ref_channel` and keeps the
/// permutation with the best mean SI-SDR.
pub fn sdr_improvement(
    estimates: &[Waveform],
    references: &[Waveform],
    mixture: &Waveform,
    ref_channel: usize,
) -> Result<MetricsReport> {
    let n = references.len();
    if estimates.len() != n {
        return Err(Error::DimensionMismatch(format!("{} estimates for {n} references", estimates.len())));
    }
    if n > MAX_PERMUTATION_SOURCES {
        return Err(Error::TooManySources { got: n, max: MAX_PERMUTATION_SOURCES });
    }
    let len = mixture.len();
    for w in estimates.iter().chain(references).chain(std::iter::once(mixture)) {
        if w.len() != len {
            return Err(Error::DimensionMismatch(format!("signal of {} samples, mixture has {len}", w.len())));
        }
        if ref_channel >= w.n_channels() {
            return Err(Error::DimensionMismatch(format!(
                "reference channel {ref_channel} of a {}-channel signal",
                w.n_channels()
            )));
        }
    }

    // scores[r][e]: estimate e against reference r
    let scores: Vec<Vec<f64>> = references
        .iter()
        .map(|r| estimates.iter().map(|e| si_sdr(e.channel(ref_channel), r.channel(ref_channel))).collect())
        .collect::<Result<_>>()?;
    let baseline: Vec<f64> = references
        .iter()
        .map(|r| si_sdr(mixture.channel(ref_channel), r.channel(ref_channel)))
        .collect::<Result<_>>()?;

    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(n) {
        let total: f64 = perm.iter().enumerate().map(|(r, &e)| scores[r][e]).sum();
        if best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, perm));
        }
    }
    let (_, permutation) = best.unwrap_or((0.0, Vec::new()));
    let per_source: Vec<f64> = permutation.iter().enumerate().map(|(r, &e)| scores[r][e]).collect();
    let improvement: Vec<f64> = per_source.iter().zip(&baseline).map(|(s, b)| s - b).collect();
    let mean_improvement = if n == 0 { 0.0 } else { improvement.iter().sum::<f64>() / n as f64 };
    Ok(MetricsReport { metric: "si_sdr".into(), per_source, improvement, permutation, mean_improvement })
}
