//! Majorization-minimization updates.
//!
//! One iteration updates `t`, `v`, `z`, `g` with multiplicative rules, then
//! each row of every diagonalizer `Q_i`, then renormalizes the gain/basis
//! scale. Every parameter step minimizes a majorizer built at the current
//! point, so the cost never increases.
//!
//! Bins are processed in parallel wherever they are independent. Reductions
//! across bins always run in bin order, so results are bit-identical for any
//! worker count.

use std::time::Instant;

use ndarray::{Array2, Array3, ArrayViewMut2, Axis, Zip};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{inner, ComplexMatrix};
use crate::model::{compute_source_psd, gain_from_psd, Algorithm, Hyperparams, SeparationState};
use crate::objective::{cost, projected_power, CostTrace, TraceRecord};
use crate::signal::Spectrogram;

/// A parameter family of the NMF/gain model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    T,
    V,
    Z,
    G,
}

/// Sub-steps of one iteration, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Update(Family),
    QRow(usize),
    Normalize,
}

/// Multiplicative rule for the NMF/gain parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Rule {
    /// `theta <- theta * sqrt(num / den)` with `phi = |q^H x|^2`.
    Gaussian,
    /// `theta <- theta * (beta num / (2 den))^(2 / (beta + 2))`.
    SubGaussian { beta: f64 },
}

impl Rule {
    fn for_hyper(hyper: &Hyperparams) -> Result<Self> {
        match hyper.algorithm {
            Algorithm::Gaussian => Ok(Rule::Gaussian),
            Algorithm::Subgaussian if hyper.beta > 2.0 && hyper.beta <= 4.0 => Ok(Rule::SubGaussian { beta: hyper.beta }),
            Algorithm::Subgaussian => Err(Error::InvalidParameter {
                field: "beta",
                reason: format!("{} is outside (2, 4]", hyper.beta),
            }),
        }
    }

    #[inline]
    fn factor(self, num: f64, den: f64) -> f64 {
        match self {
            Rule::Gaussian => (num / den).sqrt(),
            Rule::SubGaussian { beta } => (beta * num / (2.0 * den)).powf(2.0 / (beta + 2.0)),
        }
    }
}

/// Per-point quantities the multiplicative rules are built from, all `I x J x ...`.
#[derive(Debug, Clone)]
pub struct UpdateWorkspace {
    /// `|q_im^H x_ij|^2`, `I x J x M`.
    pub power: Array3<f64>,
    /// Source PSDs, `I x J x N`.
    pub psd: Array3<f64>,
    /// Mixture gains, `I x J x M`.
    pub chi: Array3<f64>,
    /// `|q^H x|^2 (sum_m' |q^H x|^2 / chi)^((beta-2)/2)`, `I x J x M`.
    pub phi: Array3<f64>,
}

impl UpdateWorkspace {
    fn projections(x: &Spectrogram, state: &SeparationState) -> Array3<f64> {
        let (i_count, j_count, m_count) = x.data.dim();
        let mut power = Array3::zeros((i_count, j_count, m_count));
        power.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(|(i, mut out)| {
            let p = projected_power(&state.spatial.q[i], x.bin(i), m_count);
            out.as_slice_mut().expect("standard layout").copy_from_slice(&p);
        });
        power
    }

    pub fn new(x: &Spectrogram, state: &SeparationState) -> Result<Self> {
        state.check_against(x.n_freqs(), x.n_frames(), x.n_channels())?;
        let rule = Rule::for_hyper(&state.hyper)?;
        let mut ws = Self {
            power: Self::projections(x, state),
            psd: Array3::zeros((0, 0, 0)),
            chi: Array3::zeros((0, 0, 0)),
            phi: Array3::zeros((0, 0, 0)),
        };
        ws.refresh(state, rule)?;
        Ok(ws)
    }

    /// Recomputes psd, chi and phi at the current parameters. Projections are
    /// kept, since they only depend on `Q`.
    fn refresh(&mut self, state: &SeparationState, rule: Rule) -> Result<()> {
        self.psd = compute_source_psd(&state.source)?;
        self.chi = gain_from_psd(&self.psd, &state.spatial.g);
        if self.chi.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::NonFinite("mixture gain is not strictly positive".into()));
        }
        let m_count = self.chi.dim().2;
        let mut phi = self.power.clone();
        if let Rule::SubGaussian { beta } = rule {
            let e = (beta - 2.0) / 2.0;
            Zip::from(phi.lanes_mut(Axis(2)))
                .and(self.chi.lanes(Axis(2)))
                .par_for_each(|mut ph, chi| {
                    let s: f64 = (0..m_count).map(|m| ph[m] / chi[m]).sum();
                    let w = s.powf(e);
                    ph.mapv_inplace(|p| p * w);
                });
        }
        self.phi = phi;
        Ok(())
    }

    /// `sum_m g_inm phi_ijm / chi_ijm^2` and `sum_m g_inm / chi_ijm`, both `I x J x N`.
    fn source_weights(&self, g: &Array3<f64>) -> (Array3<f64>, Array3<f64>) {
        let (i_count, j_count, m_count) = self.chi.dim();
        let n_count = g.dim().1;
        let mut num = Array3::zeros((i_count, j_count, n_count));
        let mut den = Array3::zeros((i_count, j_count, n_count));
        Zip::from(num.axis_iter_mut(Axis(0)))
            .and(den.axis_iter_mut(Axis(0)))
            .and(self.chi.axis_iter(Axis(0)))
            .and(self.phi.axis_iter(Axis(0)))
            .and(g.axis_iter(Axis(0)))
            .par_for_each(|mut num, mut den, chi, phi, gi| {
                for j in 0..j_count {
                    for n in 0..n_count {
                        let (mut a, mut b) = (0.0, 0.0);
                        for m in 0..m_count {
                            let c = chi[[j, m]];
                            a += gi[[n, m]] * phi[[j, m]] / (c * c);
                            b += gi[[n, m]] / c;
                        }
                        num[[j, n]] = a;
                        den[[j, n]] = b;
                    }
                }
            });
        (num, den)
    }
}

fn apply_factor(value: &mut f64, factor: f64, floor: f64) -> Result<()> {
    if factor.is_nan() {
        return Err(Error::NonFinite("multiplicative update factor is NaN".into()));
    }
    *value = (*value * factor).max(floor);
    Ok(())
}

/// `sum_{j,n} w_ijn v_kj z_kn` for every `(i, k)`.
fn contract_t(w: &Array3<f64>, v: &Array2<f64>, z: &Array2<f64>) -> Array2<f64> {
    let (i_count, j_count, n_count) = w.dim();
    let k_count = v.nrows();
    let b = Array2::from_shape_fn((j_count * n_count, k_count), |(jn, k)| v[[k, jn / n_count]] * z[[k, jn % n_count]]);
    let w = w.view().into_shape_with_order((i_count, j_count * n_count)).expect("standard layout");
    w.dot(&b)
}

/// `t^T w_n` for each source `n`, each `K x J`.
fn contract_per_source(w: &Array3<f64>, t: &Array2<f64>) -> Vec<Array2<f64>> {
    (0..w.dim().2).map(|n| t.t().dot(&w.index_axis(Axis(2), n))).collect()
}

fn apply_factors(values: &mut Array2<f64>, num: &Array2<f64>, den: &Array2<f64>, rule: Rule, eps: f64) -> Result<()> {
    Zip::from(values).and(num).and(den).fold(Ok(()), |acc: Result<()>, v, &a, &b| {
        acc.and_then(|_| apply_factor(v, rule.factor(a, b), eps))
    })
}

fn update_t(state: &mut SeparationState, ws: &UpdateWorkspace, rule: Rule) -> Result<()> {
    let (wnum, wden) = ws.source_weights(&state.spatial.g);
    let (v, z) = (&state.source.v, &state.source.z);
    let num = contract_t(&wnum, v, z);
    let den = contract_t(&wden, v, z);
    apply_factors(&mut state.source.t, &num, &den, rule, state.hyper.floor_eps)
}

fn update_v(state: &mut SeparationState, ws: &UpdateWorkspace, rule: Rule) -> Result<()> {
    let (wnum, wden) = ws.source_weights(&state.spatial.g);
    let (t, z) = (&state.source.t, &state.source.z);
    let mix = |parts: Vec<Array2<f64>>| {
        let mut out = Array2::zeros(parts[0].dim());
        for (n, p) in parts.iter().enumerate() {
            Zip::from(out.rows_mut()).and(p.rows()).and(z.column(n)).for_each(|mut o, p, &zk| o.scaled_add(zk, &p));
        }
        out
    };
    let num = mix(contract_per_source(&wnum, t));
    let den = mix(contract_per_source(&wden, t));
    apply_factors(&mut state.source.v, &num, &den, rule, state.hyper.floor_eps)
}

fn update_z(state: &mut SeparationState, ws: &UpdateWorkspace, rule: Rule) -> Result<()> {
    let (wnum, wden) = ws.source_weights(&state.spatial.g);
    let (t, v) = (&state.source.t, &state.source.v);
    let collapse = |parts: Vec<Array2<f64>>| {
        let mut out = Array2::zeros((v.nrows(), parts.len()));
        for (n, p) in parts.iter().enumerate() {
            Zip::from(out.column_mut(n)).and(p.rows()).and(v.rows()).for_each(|o, p, vk| *o = p.dot(&vk));
        }
        out
    };
    let num = collapse(contract_per_source(&wnum, t));
    let den = collapse(contract_per_source(&wden, t));
    apply_factors(&mut state.source.z, &num, &den, rule, state.hyper.floor_eps)
}

fn update_g(state: &mut SeparationState, ws: &UpdateWorkspace, rule: Rule) -> Result<()> {
    let eps = state.hyper.floor_eps;
    let (_, j_count, m_count) = ws.chi.dim();
    let n_count = ws.psd.dim().2;
    state
        .spatial
        .g
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .try_for_each(|(i, mut g_i): (usize, ArrayViewMut2<f64>)| {
            for n in 0..n_count {
                for m in 0..m_count {
                    let (mut num, mut den) = (0.0, 0.0);
                    for j in 0..j_count {
                        let c = ws.chi[[i, j, m]];
                        let s = ws.psd[[i, j, n]];
                        num += s * ws.phi[[i, j, m]] / (c * c);
                        den += s / c;
                    }
                    apply_factor(&mut g_i[[n, m]], rule.factor(num, den), eps)?;
                }
            }
            Ok(())
        })
}

/// Applies one multiplicative update to a single parameter family, using the
/// rule selected by the state's algorithm.
pub fn update_family(state: &mut SeparationState, x: &Spectrogram, family: Family) -> Result<()> {
    let ws = UpdateWorkspace::new(x, state)?;
    let rule = Rule::for_hyper(&state.hyper)?;
    match family {
        Family::T => update_t(state, &ws, rule),
        Family::V => update_v(state, &ws, rule),
        Family::Z => update_z(state, &ws, rule),
        Family::G => update_g(state, &ws, rule),
    }
}

/// Updates `t`, `v`, `z`, `g` in that order, rebuilding `chi` and `phi`
/// before each family.
pub fn update_tvzg(state: &mut SeparationState, x: &Spectrogram) -> Result<()> {
    update_tvzg_with(state, x, &mut |_, _| Ok(()))
}

fn update_tvzg_with(
    state: &mut SeparationState,
    x: &Spectrogram,
    hook: &mut dyn FnMut(Phase, &SeparationState) -> Result<()>,
) -> Result<()> {
    let rule = Rule::for_hyper(&state.hyper)?;
    let mut ws = UpdateWorkspace::new(x, state)?;
    for (idx, family) in [Family::T, Family::V, Family::Z, Family::G].into_iter().enumerate() {
        if idx > 0 {
            ws.refresh(state, rule)?;
        }
        match family {
            Family::T => update_t(state, &ws, rule)?,
            Family::V => update_v(state, &ws, rule)?,
            Family::Z => update_z(state, &ws, rule)?,
            Family::G => update_g(state, &ws, rule)?,
        }
        hook(Phase::Update(family), state)?;
    }
    Ok(())
}

/// Weighted AM-GM majorizer of `y^beta` touching at `alpha == y`, valid for `2 < beta <= 4`.
pub fn am_gm_majorizer(y: f64, alpha: f64, beta: f64) -> f64 {
    beta / 4.0 * y.powi(4) / alpha.powf(4.0 - beta) + (1.0 - beta / 4.0) * alpha.powf(beta)
}

/// Matrices of one generalized iterative-projection row update.
#[derive(Debug, Clone)]
pub struct IpMatrices {
    /// `sum_j x x^H / sqrt(|q^H x|^(4-beta) r^beta)`.
    pub u: ComplexMatrix,
    /// Quadratic form whose generalized eigen-direction gives the new row.
    pub b_prime: ComplexMatrix,
    /// Per-frame scale `r_ijm`.
    pub r: Vec<f64>,
}

/// Builds `U_im`, `B'_im` and `r_ijm` for row `m` of `q` at one bin.
///
/// `x_bin` holds the bin's frames (`J * M`, frame-major) and `chi_bin` the
/// matching mixture gains.
pub fn generalized_ip_matrices(
    q: &ComplexMatrix,
    x_bin: &[Complex64],
    chi_bin: &[f64],
    m: usize,
    beta: f64,
    floor: f64,
) -> IpMatrices {
    let m_count = q.rows();
    let mut u = ComplexMatrix::zeros(m_count, m_count);
    let mut d = ComplexMatrix::zeros(m_count, m_count);
    let mut r = Vec::with_capacity(x_bin.len() / m_count);

    for (x, chi) in x_bin.chunks_exact(m_count).zip(chi_bin.chunks_exact(m_count)) {
        let mut s = 0.0;
        let mut own = 0.0;
        for mm in 0..m_count {
            let p: Complex64 = q.row(mm).iter().zip(x).map(|(a, b)| a * b).sum();
            let p2 = p.norm_sqr();
            s += p2 / chi[mm];
            if mm == m {
                own = p2.sqrt();
            }
        }
        if s == 0.0 {
            // Silent frame: no contribution to U or D.
            r.push(floor);
            continue;
        }
        let r_j = (own.powf(1.0 - 2.0 / beta) * chi[m].powf(1.0 / beta) * s.powf(1.0 / beta - 0.5)).max(floor);
        r.push(r_j);
        let denom = (own.powf(4.0 - beta) * r_j.powf(beta)).sqrt().max(floor);
        u.add_weighted_outer(1.0 / denom, x);
        d.add_weighted_outer(own.powf(beta - 2.0) / r_j.powf(beta), x);
    }

    let qv: Vec<Complex64> = q.row(m).iter().map(|z| z.conj()).collect();
    let uq = u.mul_vec(&qv);
    let quq = inner(&qv, &uq).re;
    let b_prime = u.scale(quq).add(&d).sub(&ComplexMatrix::outer(&uq, &uq));
    IpMatrices { u, b_prime, r }
}

fn unit_vector(len: usize, m: usize) -> Vec<Complex64> {
    let mut e = vec![Complex64::new(0.0, 0.0); len];
    e[m] = Complex64::new(1.0, 0.0);
    e
}

fn set_row_from_column(q: &mut ComplexMatrix, m: usize, column: &[Complex64]) {
    for (dst, src) in q.row_mut(m).iter_mut().zip(column) {
        *dst = src.conj();
    }
}

/// Solves `b q = w` for Hermitian positive semidefinite `b`.
///
/// When one frame is nearly annihilated by the current row its weight
/// dominates and `b` becomes numerically rank one. The minimizing direction is
/// then `b`'s null space, which a diagonal shift tiny relative to the trace
/// recovers; the caller's scale step fixes the length.
fn solve_psd(b: &ComplexMatrix, w: &[Complex64]) -> Result<Vec<Complex64>> {
    match b.solve(w) {
        Err(Error::SingularMatrix) => {
            let n = b.rows();
            let trace: f64 = (0..n).map(|k| b[(k, k)].re).sum();
            let shift = PSD_SHIFT * trace / n as f64;
            if !(shift > 0.0 && shift.is_finite()) {
                return Err(Error::SingularMatrix);
            }
            b.add(&ComplexMatrix::identity(n).scale(shift)).solve(w)
        }
        other => other,
    }
}

const PSD_SHIFT: f64 = 1e-12;

/// New row `m` of `q` for one bin under the sub-Gaussian model.
fn subgaussian_row(
    q: &ComplexMatrix,
    x_bin: &[Complex64],
    chi_bin: &[f64],
    m: usize,
    beta: f64,
    floor: f64,
) -> Result<Vec<Complex64>> {
    let m_count = q.rows();
    let frames = x_bin.len() / m_count;
    let ip = generalized_ip_matrices(q, x_bin, chi_bin, m, beta, floor);
    let w = q.solve(&unit_vector(m_count, m))?;
    let mut col = solve_psd(&ip.b_prime, &w)?;
    let sum: f64 = x_bin
        .chunks_exact(m_count)
        .zip(&ip.r)
        .map(|(x, r)| inner(&col, x).norm().powf(beta) / r.powf(beta))
        .sum();
    let scale = (2.0 * frames as f64 / (beta * sum)).powf(1.0 / beta);
    if !scale.is_finite() {
        return Err(Error::NonFinite(format!("diagonalizer scale step produced {scale}")));
    }
    col.iter_mut().for_each(|c| *c *= scale);
    Ok(col)
}

/// New row `m` of `q` for one bin under the Gaussian model (standard IP).
fn gaussian_row(q: &ComplexMatrix, x_bin: &[Complex64], chi_bin: &[f64], m: usize) -> Result<Vec<Complex64>> {
    let m_count = q.rows();
    let frames = x_bin.len() / m_count;
    let mut u = ComplexMatrix::zeros(m_count, m_count);
    for (x, chi) in x_bin.chunks_exact(m_count).zip(chi_bin.chunks_exact(m_count)) {
        u.add_weighted_outer(1.0 / (frames as f64 * chi[m]), x);
    }
    let mut col = (q * &u).solve(&unit_vector(m_count, m))?;
    let norm = inner(&col, &u.mul_vec(&col)).re.sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::NonFinite(format!("IP normalization {norm}")));
    }
    col.iter_mut().for_each(|c| *c /= norm);
    Ok(col)
}

fn update_q_row_with_gain(state: &mut SeparationState, x: &Spectrogram, chi: &Array3<f64>, m: usize) -> Result<()> {
    let rule = Rule::for_hyper(&state.hyper)?;
    let floor = state.hyper.floor_eps;
    state.spatial.q.par_iter_mut().enumerate().try_for_each(|(i, q)| {
        let chi_i = chi.index_axis(Axis(0), i);
        let chi_i = chi_i.as_slice().expect("standard layout");
        let col = match rule {
            Rule::SubGaussian { beta } => subgaussian_row(q, x.bin(i), chi_i, m, beta, floor)?,
            Rule::Gaussian => gaussian_row(q, x.bin(i), chi_i, m)?,
        };
        set_row_from_column(q, m, &col);
        Ok(())
    })
}

/// Updates row `m` of every bin's diagonalizer (one row sweep), using the
/// model selected by the state's algorithm.
pub fn update_q_row(state: &mut SeparationState, x: &Spectrogram, m: usize) -> Result<()> {
    let d = state.check_against(x.n_freqs(), x.n_frames(), x.n_channels())?;
    if m >= d.channels {
        return Err(Error::DimensionMismatch(format!("row {m} of a {}-channel diagonalizer", d.channels)));
    }
    let chi = gain_from_psd(&compute_source_psd(&state.source)?, &state.spatial.g);
    update_q_row_with_gain(state, x, &chi, m)
}

fn update_q_with(
    state: &mut SeparationState,
    x: &Spectrogram,
    hook: &mut dyn FnMut(Phase, &SeparationState) -> Result<()>,
) -> Result<()> {
    let d = state.check_against(x.n_freqs(), x.n_frames(), x.n_channels())?;
    // chi does not depend on Q, so one evaluation serves every row.
    let chi = gain_from_psd(&compute_source_psd(&state.source)?, &state.spatial.g);
    for m in 0..d.channels {
        update_q_row_with_gain(state, x, &chi, m)?;
        hook(Phase::QRow(m), state)?;
    }
    Ok(())
}

/// Generalized IP sweep over all rows of every `Q_i` (sub-Gaussian model).
pub fn update_q_subgaussian(state: &mut SeparationState, x: &Spectrogram) -> Result<()> {
    if !matches!(Rule::for_hyper(&state.hyper)?, Rule::SubGaussian { .. }) {
        return Err(Error::InvalidParameter { field: "algorithm", reason: "expected the subgaussian model".into() });
    }
    update_q_with(state, x, &mut |_, _| Ok(()))
}

/// Standard IP sweep over all rows of every `Q_i` (Gaussian model).
pub fn update_q_gaussian(state: &mut SeparationState, x: &Spectrogram) -> Result<()> {
    if Rule::for_hyper(&state.hyper)? != Rule::Gaussian {
        return Err(Error::InvalidParameter { field: "algorithm", reason: "expected the gaussian model".into() });
    }
    update_q_with(state, x, &mut |_, _| Ok(()))
}

/// Rescales each bin so that `sum_{n,m} g_inm = N * M`, moving the inverse
/// factor into `t_i.`. The mixture gains, and therefore the cost, are unchanged.
pub fn normalize_and_rescale(state: &mut SeparationState) -> Result<()> {
    let d = state.check()?;
    let target = (d.sources * d.channels) as f64;
    let eps = state.hyper.floor_eps;
    let degenerate = target * eps * (1.0 + 1e-9);
    Zip::from(state.spatial.g.axis_iter_mut(Axis(0)))
        .and(state.source.t.axis_iter_mut(Axis(0)))
        .par_for_each(|mut g_i, mut t_i| {
            let sum = g_i.sum();
            if !(sum > degenerate && sum.is_finite()) {
                return;
            }
            let c = target / sum;
            if c != 1.0 {
                g_i.mapv_inplace(|g| g * c);
                t_i.mapv_inplace(|t| (t / c).max(eps));
            }
        });
    if let Some(i) = state
        .spatial
        .g
        .axis_iter(Axis(0))
        .position(|g_i| !(g_i.sum() > degenerate && g_i.sum().is_finite()))
    {
        return Err(Error::NonFinite(format!("spatial gains of bin {i} are all at the floor")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub tvzg_ms: f64,
    pub q_ms: f64,
    pub normalize_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationReport {
    pub iteration: usize,
    pub cost_before: f64,
    pub cost_after: f64,
    pub timings: PhaseTimings,
}

impl IterationReport {
    pub fn is_descent(&self, slack: f64) -> bool {
        self.cost_after <= self.cost_before + slack * self.cost_before.abs()
    }
}

fn millis(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// One full iteration, calling `hook` after every sub-step with the updated state.
pub fn iterate_with(
    state: &mut SeparationState,
    x: &Spectrogram,
    hook: &mut dyn FnMut(Phase, &SeparationState) -> Result<()>,
) -> Result<PhaseTimings> {
    let start = Instant::now();
    update_tvzg_with(state, x, hook)?;
    let tvzg_ms = millis(start);

    let start = Instant::now();
    update_q_with(state, x, hook)?;
    let q_ms = millis(start);

    let start = Instant::now();
    normalize_and_rescale(state)?;
    hook(Phase::Normalize, state)?;
    Ok(PhaseTimings { tvzg_ms, q_ms, normalize_ms: millis(start) })
}

/// One full iteration with cost bookkeeping. `cost_before` is evaluated when not supplied.
pub fn step(
    state: &mut SeparationState,
    x: &Spectrogram,
    iteration: usize,
    cost_before: Option<f64>,
) -> Result<IterationReport> {
    let cost_before = match cost_before {
        Some(c) => c,
        None => cost(x, state)?,
    };
    let timings = iterate_with(state, x, &mut |_, _| Ok(()))?;
    Ok(IterationReport { iteration, cost_before, cost_after: cost(x, state)?, timings })
}

/// Runs `state.hyper.iterations` full iterations, recording the cost after each.
pub fn run(mut state: SeparationState, x: &Spectrogram) -> Result<(SeparationState, CostTrace)> {
    state.check_against(x.n_freqs(), x.n_frames(), x.n_channels())?;
    state.hyper = state.hyper.clone().validated()?;
    let mut trace = CostTrace::new();
    if state.hyper.iterations == 0 {
        return Ok((state, trace));
    }
    let mut current = cost(x, &state)?;
    for it in 1..=state.hyper.iterations {
        let start = Instant::now();
        let report = step(&mut state, x, it, Some(current)).map_err(|e| e.at_iteration(it))?;
        current = report.cost_after;
        trace.push(TraceRecord { iteration: it, cost: current, ms: millis(start) })?;
    }
    Ok((state, trace))
}

/// Same as [`run`] but with explicit hyperparameters, which replace the state's own.
pub fn run_with(mut state: SeparationState, x: &Spectrogram, hyper: &Hyperparams) -> Result<(SeparationState, CostTrace)> {
    state.hyper = hyper.clone();
    run(state, x)
}

/// Multiplicative factor each family would receive at the current point, in
/// the shapes of `t`, `v`, `z`, `g`. Used to locate and verify fixed points.
pub fn update_factors(state: &SeparationState, x: &Spectrogram) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>, Array3<f64>)> {
    let mut probe = state.clone();
    // A floor of zero keeps the returned ratios exact.
    probe.hyper.floor_eps = 0.0;
    let ratio2 = |a: &Array2<f64>, b: &Array2<f64>| b / a;
    let ratio3 = |a: &Array3<f64>, b: &Array3<f64>| b / a;

    let mut out = Vec::new();
    for family in [Family::T, Family::V, Family::Z, Family::G] {
        let mut s = probe.clone();
        update_family(&mut s, x, family)?;
        out.push(s);
    }
    Ok((
        ratio2(&state.source.t, &out[0].source.t),
        ratio2(&state.source.v, &out[1].source.v),
        ratio2(&state.source.z, &out[2].source.z),
        ratio3(&state.spatial.g, &out[3].spatial.g),
    ))
}
