//! Cost functions, the majorizer of the NMF/gain parameters and the cost trace.
//!
//! All costs are negative log-likelihoods up to additive constants that do not
//! depend on any parameter. Bin partial sums are computed independently and
//! then added in bin order, so the result does not depend on the worker count.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array3, Array5, Axis};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{inner, ComplexMatrix};
use crate::model::{compute_source_psd, gain_from_psd, SeparationState};
use crate::signal::Spectrogram;

/// `|q_im^H x_ij|^2` for one bin, frame-major `J * M`.
pub(crate) fn projected_power(q: &ComplexMatrix, x_bin: &[Complex64], m_count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x_bin.len());
    for x in x_bin.chunks_exact(m_count) {
        for m in 0..m_count {
            let p: Complex64 = q.row(m).iter().zip(x).map(|(a, b)| a * b).sum();
            out.push(p.norm_sqr());
        }
    }
    out
}

fn log_abs_det_sum(state: &SeparationState) -> Result<f64> {
    let per_bin: Vec<f64> = state
        .spatial
        .q
        .par_iter()
        .map(|q| q.lu().map(|lu| lu.log_abs_det()))
        .collect::<Result<_>>()?;
    Ok(per_bin.iter().sum())
}

/// Shared body of the two joint-diagonal costs. `exponent` is `beta / 2`;
/// `None` is the Gaussian cost, where the outer power is dropped.
fn jd_cost(x: &Spectrogram, state: &SeparationState, exponent: Option<f64>) -> Result<f64> {
    let d = state.check_against(x.n_freqs(), x.n_frames(), x.n_channels())?;
    let psd = compute_source_psd(&state.source)?;
    let chi = gain_from_psd(&psd, &state.spatial.g);
    let m_count = d.channels;

    let per_bin: Vec<f64> = (0..d.freqs)
        .into_par_iter()
        .map(|i| {
            let power = projected_power(&state.spatial.q[i], x.bin(i), m_count);
            let chi_i = chi.index_axis(Axis(0), i);
            let chi_i = chi_i.as_slice().expect("standard layout");
            let mut total = 0.0;
            for (p, c) in power.chunks_exact(m_count).zip(chi_i.chunks_exact(m_count)) {
                let mut ratio = 0.0;
                let mut logs = 0.0;
                for m in 0..m_count {
                    ratio += p[m] / c[m];
                    logs += c[m].ln();
                }
                total += logs + exponent.map_or(ratio, |e| ratio.powf(e));
            }
            total
        })
        .collect();

    let cost = per_bin.iter().sum::<f64>() - 2.0 * d.frames as f64 * log_abs_det_sum(state)?;
    if !cost.is_finite() {
        return Err(Error::NonFinite(format!("cost evaluated to {cost}")));
    }
    Ok(cost)
}

/// Joint-diagonal generalized Gaussian cost:
/// `-2J sum_i log|det Q_i| + sum log chi + sum_ij (sum_m |q^H x|^2 / chi)^(beta/2)`.
pub fn cost_ggd_jd(x: &Spectrogram, state: &SeparationState) -> Result<f64> {
    let beta = state.hyper.beta;
    jd_cost(x, state, if beta == 2.0 { None } else { Some(beta / 2.0) })
}

/// Joint-diagonal Gaussian cost (FastMNMF).
pub fn cost_gaussian_jd(x: &Spectrogram, state: &SeparationState) -> Result<f64> {
    jd_cost(x, state, None)
}

/// Cost matching the state's algorithm.
pub fn cost(x: &Spectrogram, state: &SeparationState) -> Result<f64> {
    match state.hyper.algorithm {
        crate::model::Algorithm::Gaussian => cost_gaussian_jd(x, state),
        crate::model::Algorithm::Subgaussian => cost_ggd_jd(x, state),
    }
}

/// Unconstrained full-rank cost `sum_ij (x^H Xhat^-1 x)^(beta/2) + log det Xhat`
/// with `Xhat_ij = sum_n sigma_ijn G_in`. Used as an independent oracle.
pub fn cost_ggd_fullrank(x: &Spectrogram, scm: &[Vec<ComplexMatrix>], psd: &Array3<f64>, beta: f64) -> Result<f64> {
    let (i_count, j_count, n_count) = psd.dim();
    if scm.len() != i_count || x.n_freqs() != i_count || x.n_frames() != j_count {
        return Err(Error::DimensionMismatch("full-rank cost inputs disagree on I or J".into()));
    }
    let m_count = x.n_channels();
    let mut total = 0.0;
    for i in 0..i_count {
        for j in 0..j_count {
            let mut cov = ComplexMatrix::zeros(m_count, m_count);
            for n in 0..n_count {
                cov = cov.add(&scm[i][n].scale(psd[[i, j, n]]));
            }
            let lu = cov.lu()?;
            let xij = x.frame(i, j);
            let quad = inner(xij, &lu.solve(xij)).re;
            total += quad.powf(beta / 2.0) + lu.log_abs_det();
        }
    }
    Ok(total)
}

/// Auxiliary variables of the NMF/gain majorizer.
#[derive(Debug, Clone)]
pub struct Auxiliary {
    /// Simplex weights over channels, `I x J x M`.
    pub xi: Array3<f64>,
    /// Simplex weights over (basis, source) pairs, `I x J x K x M x N`.
    pub eta: Array5<f64>,
    /// Tangent points of the log term, `I x J x M`.
    pub zeta: Array3<f64>,
}

const SIMPLEX_TOL: f64 = 1e-9;

impl Auxiliary {
    fn validate(&self, x: &Spectrogram, state: &SeparationState) -> Result<()> {
        let d = state.check_against(x.n_freqs(), x.n_frames(), x.n_channels())?;
        let (i, j, m, n, k) = (d.freqs, d.frames, d.channels, d.sources, d.bases);
        if self.xi.dim() != (i, j, m) || self.zeta.dim() != (i, j, m) || self.eta.dim() != (i, j, k, m, n) {
            return Err(Error::InvalidAuxiliary("shapes do not match the state".into()));
        }
        if self.zeta.iter().any(|&z| !(z > 0.0 && z.is_finite())) {
            return Err(Error::InvalidAuxiliary("zeta must be positive".into()));
        }
        if self.xi.iter().chain(self.eta.iter()).any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidAuxiliary("xi and eta must be nonnegative".into()));
        }
        for row in self.xi.lanes(Axis(2)) {
            if (row.sum() - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidAuxiliary(format!("xi sums to {} over channels", row.sum())));
            }
        }
        for ii in 0..i {
            for jj in 0..j {
                for mm in 0..m {
                    let s: f64 = self.eta.slice(ndarray::s![ii, jj, .., mm, ..]).sum();
                    if (s - 1.0).abs() > SIMPLEX_TOL {
                        return Err(Error::InvalidAuxiliary(format!("eta sums to {s} over (k, n)")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Majorizer of the generalized Gaussian cost in `t, v, z, g`, including the
/// tangent-line constants of the log term so that it bounds the cost itself.
pub fn surrogate_tvzg(x: &Spectrogram, state: &SeparationState, aux: &Auxiliary) -> Result<f64> {
    aux.validate(x, state)?;
    let d = state.dims();
    let beta = state.hyper.beta;
    let half = beta / 2.0;
    let (t, v, z, g) = (&state.source.t, &state.source.v, &state.source.z, &state.spatial.g);
    let psd = compute_source_psd(&state.source)?;
    let chi = gain_from_psd(&psd, g);

    let mut total = 0.0;
    for i in 0..d.freqs {
        let power = projected_power(&state.spatial.q[i], x.bin(i), d.channels);
        for j in 0..d.frames {
            for m in 0..d.channels {
                let zeta = aux.zeta[[i, j, m]];
                total += zeta.ln() + (chi[[i, j, m]] - zeta) / zeta;

                let p = power[j * d.channels + m];
                if p == 0.0 {
                    continue;
                }
                let xi = aux.xi[[i, j, m]];
                if xi == 0.0 {
                    return Ok(f64::INFINITY);
                }
                let mut inner_sum = 0.0;
                for k in 0..d.bases {
                    for n in 0..d.sources {
                        let eta = aux.eta[[i, j, k, m, n]];
                        if eta == 0.0 {
                            continue;
                        }
                        let c = t[[i, k]] * v[[k, j]] * z[[k, n]] * g[[i, n, m]];
                        inner_sum += eta * (eta * p / c).powf(half);
                    }
                }
                total += xi.powf(1.0 - half) * inner_sum;
            }
        }
    }
    Ok(total - 2.0 * d.frames as f64 * log_abs_det_sum(state)?)
}

/// Auxiliary values at which the majorizer touches the cost.
pub fn equality_aux(x: &Spectrogram, state: &SeparationState) -> Result<Auxiliary> {
    let d = state.check_against(x.n_freqs(), x.n_frames(), x.n_channels())?;
    let (t, v, z, g) = (&state.source.t, &state.source.v, &state.source.z, &state.spatial.g);
    let psd = compute_source_psd(&state.source)?;
    let chi = gain_from_psd(&psd, g);
    if chi.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
        return Err(Error::NonFinite("mixture gain underflowed to zero".into()));
    }

    let mut xi = Array3::zeros((d.freqs, d.frames, d.channels));
    let mut eta = Array5::zeros((d.freqs, d.frames, d.bases, d.channels, d.sources));
    for i in 0..d.freqs {
        let power = projected_power(&state.spatial.q[i], x.bin(i), d.channels);
        for j in 0..d.frames {
            let ratios: Vec<f64> = (0..d.channels).map(|m| power[j * d.channels + m] / chi[[i, j, m]]).collect();
            let s: f64 = ratios.iter().sum();
            for m in 0..d.channels {
                // Silent frames: any simplex point is tight, take the uniform one.
                xi[[i, j, m]] = if s > 0.0 { ratios[m] / s } else { 1.0 / d.channels as f64 };
                for k in 0..d.bases {
                    for n in 0..d.sources {
                        eta[[i, j, k, m, n]] = t[[i, k]] * v[[k, j]] * z[[k, n]] * g[[i, n, m]] / chi[[i, j, m]];
                    }
                }
            }
        }
    }
    Ok(Auxiliary { xi, eta, zeta: chi })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub cost: f64,
    pub ms: f64,
}

/// Per-iteration cost history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostTrace {
    records: Vec<TraceRecord>,
}

impl CostTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TraceRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.iteration <= last.iteration {
                return Err(Error::InvalidParameter {
                    field: "iteration",
                    reason: format!("trace index {} does not follow {}", record.iteration, last.iteration),
                });
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cost).collect()
    }

    /// Largest relative increase between consecutive entries (negative when strictly decreasing).
    pub fn worst_relative_increase(&self) -> f64 {
        self.records
            .windows(2)
            .map(|w| (w[1].cost - w[0].cost) / w[0].cost.abs().max(f64::MIN_POSITIVE))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV with header `iteration,cost,ms`. Costs use the shortest round-trip representation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,cost,ms\n");
        for r in &self.records {
            writeln!(out, "{},{:?},{:.3}", r.iteration, r.cost, r.ms).expect("writing to a String");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|source| Error::Io { path: path.into(), source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ComplexMatrix;
    use crate::model::{full_rank_scm, Hyperparams, SourceModel, SpatialModel};
    use crate::testutil::{random_spectrogram, random_state};
    use ndarray::{Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_problem(beta: f64) -> (Spectrogram, SeparationState) {
        let hyper = Hyperparams { beta, n_sources: 1, n_bases: 1, ..Hyperparams::default() };
        let state = SeparationState {
            source: SourceModel { t: Array2::ones((1, 1)), v: Array2::ones((1, 1)), z: Array2::ones((1, 1)) },
            spatial: SpatialModel { q: vec![ComplexMatrix::identity(1)], g: Array3::ones((1, 1, 1)) },
            hyper,
        };
        let x = Spectrogram::new(Array3::from_elem((1, 1, 1), Complex64::new(1.0, 0.0)), 16_000);
        (x, state)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn unit_instance_costs_one() {
        for beta in [2.5, 3.0, 4.0] {
            let (x, s) = unit_problem(beta);
            assert_eq!(cost_ggd_jd(&x, &s).unwrap(), 1.0);
        }
        let (x, s) = unit_problem(2.0);
        assert_eq!(cost_gaussian_jd(&x, &s).unwrap(), 1.0);
    }

    #[test]
    fn beta_two_matches_gaussian_exactly() {
        let x = random_spectrogram(1, 5, 7, 2);
        let s = random_state(2, 5, 7, 2, 2, 3, 2.0);
        assert_eq!(cost_ggd_jd(&x, &s).unwrap(), cost_gaussian_jd(&x, &s).unwrap());
    }

    #[test]
    fn doubling_t_shifts_gaussian_cost() {
        let x = random_spectrogram(3, 4, 5, 2);
        let s = random_state(4, 4, 5, 2, 2, 3, 2.0);
        let mut doubled = s.clone();
        doubled.source.t *= 2.0;

        // Direct re-evaluation: every chi doubles.
        let psd = compute_source_psd(&s.source).unwrap();
        let chi = gain_from_psd(&psd, &s.spatial.g);
        let mut quad = 0.0;
        for i in 0..4 {
            let p = projected_power(&s.spatial.q[i], x.bin(i), 2);
            for j in 0..5 {
                for m in 0..2 {
                    quad += p[j * 2 + m] / chi[[i, j, m]];
                }
            }
        }
        let before = cost_gaussian_jd(&x, &s).unwrap();
        let after = cost_gaussian_jd(&x, &doubled).unwrap();
        let expected = before + (4 * 5 * 2) as f64 * 2f64.ln() - quad / 2.0;
        assert!(rel(after, expected) < 1e-12);
    }

    #[test]
    fn gaussian_cost_matches_full_rank_form() {
        let x = random_spectrogram(5, 3, 4, 2);
        let s = random_state(6, 3, 4, 2, 2, 2, 2.0);
        let scm = full_rank_scm(&s).unwrap();
        let psd = compute_source_psd(&s.source).unwrap();
        let oracle = cost_ggd_fullrank(&x, &scm, &psd, 2.0).unwrap();
        assert!(rel(cost_gaussian_jd(&x, &s).unwrap(), oracle) < 1e-9);
    }

    #[test]
    fn ggd_cost_matches_full_rank_form() {
        for seed in 0..5 {
            let x = random_spectrogram(10 + seed, 3, 4, 2);
            let s = random_state(20 + seed, 3, 4, 2, 2, 2, 3.3);
            let scm = full_rank_scm(&s).unwrap();
            let psd = compute_source_psd(&s.source).unwrap();
            let oracle = cost_ggd_fullrank(&x, &scm, &psd, 3.3).unwrap();
            assert!(rel(cost_ggd_jd(&x, &s).unwrap(), oracle) < 1e-9);
        }
    }

    #[test]
    fn full_rank_unit_case() {
        let (x, s) = unit_problem(4.0);
        let scm = full_rank_scm(&s).unwrap();
        let psd = compute_source_psd(&s.source).unwrap();
        assert_eq!(cost_ggd_fullrank(&x, &scm, &psd, 4.0).unwrap(), 1.0);
    }

    #[test]
    fn gain_and_bases_trade_scale() {
        let x = random_spectrogram(7, 4, 5, 2);
        let s = random_state(8, 4, 5, 2, 2, 3, 4.0);
        let mut traded = s.clone();
        traded.spatial.g *= 3.0;
        traded.source.t /= 3.0;
        for f in [cost_ggd_jd, cost_gaussian_jd] {
            assert!(rel(f(&x, &traded).unwrap(), f(&x, &s).unwrap()) < 1e-10);
        }
    }

    #[test]
    fn surrogate_touches_at_equality() {
        for seed in 0..5 {
            let x = random_spectrogram(30 + seed, 3, 4, 2);
            let s = random_state(40 + seed, 3, 4, 2, 2, 3, 3.7);
            let aux = equality_aux(&x, &s).unwrap();
            let c = cost_ggd_jd(&x, &s).unwrap();
            assert!(rel(surrogate_tvzg(&x, &s, &aux).unwrap(), c) < 1e-10);
        }
    }

    #[test]
    fn equality_aux_unit_and_simplex() {
        let (x, s) = unit_problem(4.0);
        let aux = equality_aux(&x, &s).unwrap();
        assert_eq!(aux.xi[[0, 0, 0]], 1.0);
        assert_eq!(aux.eta[[0, 0, 0, 0, 0]], 1.0);

        let x = random_spectrogram(50, 3, 4, 3);
        let s = random_state(51, 3, 4, 3, 2, 3, 4.0);
        let aux = equality_aux(&x, &s).unwrap();
        for row in aux.xi.lanes(Axis(2)) {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        for i in 0..3 {
            for j in 0..4 {
                for m in 0..3 {
                    let total: f64 = aux.eta.slice(ndarray::s![i, j, .., m, ..]).sum();
                    assert!((total - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn moving_xi_off_equality_raises_surrogate() {
        let x = random_spectrogram(60, 2, 3, 2);
        let s = random_state(61, 2, 3, 2, 2, 2, 4.0);
        let aux = equality_aux(&x, &s).unwrap();
        let at_eq = surrogate_tvzg(&x, &s, &aux).unwrap();
        let mut moved = aux.clone();
        let shift = 0.05 * moved.xi[[0, 0, 0]].min(moved.xi[[0, 0, 1]]);
        moved.xi[[0, 0, 0]] += shift;
        moved.xi[[0, 0, 1]] -= shift;
        assert!(surrogate_tvzg(&x, &s, &moved).unwrap() > at_eq);
    }

    #[test]
    fn invalid_auxiliary_rejected() {
        let x = random_spectrogram(70, 2, 3, 2);
        let s = random_state(71, 2, 3, 2, 2, 2, 4.0);
        let aux = equality_aux(&x, &s).unwrap();

        let mut bad = aux.clone();
        bad.xi[[0, 0, 0]] += 0.1;
        assert!(matches!(surrogate_tvzg(&x, &s, &bad), Err(Error::InvalidAuxiliary(_))));
        let mut bad = aux.clone();
        bad.zeta[[1, 2, 1]] = 0.0;
        assert!(matches!(surrogate_tvzg(&x, &s, &bad), Err(Error::InvalidAuxiliary(_))));
        let mut bad = aux;
        bad.eta[[0, 1, 0, 0, 0]] = -0.5;
        assert!(matches!(surrogate_tvzg(&x, &s, &bad), Err(Error::InvalidAuxiliary(_))));
    }

    #[test]
    fn random_aux_majorizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        for seed in 0..50 {
            let x = random_spectrogram(100 + seed, 2, 3, 2);
            let s = random_state(200 + seed, 2, 3, 2, 2, 2, rng.random_range(2.05..=4.0));
            let aux = crate::testutil::random_auxiliary(&mut rng, &s);
            let c = cost_ggd_jd(&x, &s).unwrap();
            let bound = surrogate_tvzg(&x, &s, &aux).unwrap();
            assert!((bound - c) / c.abs() >= -1e-10, "seed {seed}: {bound} < {c}");
        }
    }

    #[test]
    fn trace_csv_and_ordering() {
        let mut tr = CostTrace::new();
        tr.push(TraceRecord { iteration: 1, cost: 10.5, ms: 1.0 }).unwrap();
        tr.push(TraceRecord { iteration: 2, cost: 0.1 + 0.2, ms: 2.25 }).unwrap();
        assert!(tr.push(TraceRecord { iteration: 2, cost: 0.0, ms: 0.0 }).is_err());
        assert_eq!(tr.to_csv(), "iteration,cost,ms\n1,10.5,1.000\n2,0.30000000000000004,2.250\n");
        assert!(tr.worst_relative_increase() < 0.0);
    }
}
