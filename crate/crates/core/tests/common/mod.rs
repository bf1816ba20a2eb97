#![allow(dead_code)]

use ndarray::Array3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgmnmf::harness::{simulate_scene, MixtureBundle, SceneSpec, SourceKind};
use sgmnmf::model::{compute_source_psd, gain_from_psd};
use sgmnmf::objective::cost_ggd_jd;
use sgmnmf::testutil::{complex_normal, random_state};
use sgmnmf::{ComplexMatrix, SeparationState, Spectrogram};

/// Samples per acceptance scene; gives J = 121 frames with 1024/256 framing.
pub const SCENE_LENGTH: usize = 30_000;

pub fn scene(seed: u64, kind: SourceKind) -> MixtureBundle {
    simulate_scene(&SceneSpec { length: SCENE_LENGTH, source_kind: kind, seed, rt60: 0.3, ..SceneSpec::default() })
        .expect("scene")
}

/// A state together with an observation at which every multiplicative factor is 1.
///
/// With `|q_m^H x|^2 = lambda chi_m` the update weight `phi` equals `(2/beta) chi`
/// exactly when `lambda^(beta/2) M^((beta-2)/2) = 2/beta`.
pub fn fixed_point_instance(seed: u64, dims: (usize, usize, usize, usize, usize), beta: f64) -> (SeparationState, Spectrogram) {
    let (i, j, m, n, k) = dims;
    let state = random_state(seed, i, j, m, n, k, beta);
    let chi = gain_from_psd(&compute_source_psd(&state.source).unwrap(), &state.spatial.g);
    let lambda = ((2.0 / beta) * (m as f64).powf((2.0 - beta) / 2.0)).powf(2.0 / beta);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut x = Array3::zeros((i, j, m));
    for ii in 0..i {
        let lu = state.spatial.q[ii].lu().unwrap();
        for jj in 0..j {
            let y: Vec<Complex64> = (0..m)
                .map(|mm| Complex64::from_polar((lambda * chi[[ii, jj, mm]]).sqrt(), rng.random_range(0.0..std::f64::consts::TAU)))
                .collect();
            for (mm, v) in lu.solve(&y).into_iter().enumerate() {
                x[[ii, jj, mm]] = v;
            }
        }
    }
    (state, Spectrogram::new(x, 16_000))
}

/// Largest central difference of the cost over every entry of t, v, z and g,
/// each with step `rel` times the entry.
pub fn max_central_difference(state: &SeparationState, x: &Spectrogram, rel: f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = |get: &dyn Fn(&mut SeparationState) -> &mut f64| {
        let mut s = state.clone();
        let base = *get(&mut s);
        let h = rel * base;
        *get(&mut s) = base + h;
        let up = cost_ggd_jd(x, &s).unwrap();
        *get(&mut s) = base - h;
        let down = cost_ggd_jd(x, &s).unwrap();
        worst = worst.max(((up - down) / (2.0 * h)).abs());
    };
    let d = state.dims();
    for a in 0..d.freqs {
        for k in 0..d.bases {
            probe(&|s| &mut s.source.t[[a, k]]);
        }
    }
    for k in 0..d.bases {
        for b in 0..d.frames {
            probe(&|s| &mut s.source.v[[k, b]]);
        }
        for n in 0..d.sources {
            probe(&|s| &mut s.source.z[[k, n]]);
        }
    }
    for a in 0..d.freqs {
        for n in 0..d.sources {
            for m in 0..d.channels {
                probe(&|s| &mut s.spatial.g[[a, n, m]]);
            }
        }
    }
    worst
}

/// `r_jm` evaluated directly from its definition, frame by frame.
pub fn oracle_r(q: &ComplexMatrix, x_bin: &[Complex64], chi_bin: &[f64], m: usize, beta: f64) -> Vec<f64> {
    let mc = q.rows();
    x_bin
        .chunks(mc)
        .zip(chi_bin.chunks(mc))
        .map(|(x, chi)| {
            let p: Vec<f64> = (0..mc).map(|r| sgmnmf::linalg::hermitian_form(&row_as_column(q, r), x).unwrap()).collect();
            let s: f64 = p.iter().zip(chi).map(|(a, c)| a / c).sum();
            p[m].sqrt().powf(1.0 - 2.0 / beta) * chi[m].powf(1.0 / beta) * s.powf(1.0 / beta - 0.5)
        })
        .collect()
}

/// The vector `q_m` whose conjugate transpose is row `m` of `Q`.
pub fn row_as_column(q: &ComplexMatrix, m: usize) -> Vec<Complex64> {
    q.row(m).iter().map(|c| c.conj()).collect()
}

/// `sqrt(beta) / (2 sqrt(J sum|a|^4)) H A H^H` built from explicit `H` and `A`.
pub fn oracle_b(q: &ComplexMatrix, x_bin: &[Complex64], r: &[f64], m: usize, beta: f64) -> ComplexMatrix {
    let mc = q.rows();
    let j = r.len();
    let qm = row_as_column(q, m);
    // Columns x_j / l_j of H.
    let h: Vec<Vec<Complex64>> = x_bin
        .chunks(mc)
        .zip(r)
        .map(|(x, &rj)| {
            let proj = sgmnmf::linalg::inner(&qm, x).norm();
            let l = (proj.powf(4.0 - beta) * rj.powf(beta)).powf(0.25);
            x.iter().map(|v| v / l).collect()
        })
        .collect();
    let a: Vec<Complex64> = h.iter().map(|col| sgmnmf::linalg::inner(col, &qm)).collect();
    let norm2: f64 = a.iter().map(|v| v.norm_sqr()).sum();
    let mut amat = vec![vec![Complex64::new(0.0, 0.0); j]; j];
    for (r1, row) in amat.iter_mut().enumerate() {
        for (c, entry) in row.iter_mut().enumerate() {
            *entry = if r1 == c { Complex64::new(norm2, 0.0) } else { -a[r1] * a[c].conj() };
        }
    }
    let mut b = ComplexMatrix::zeros(mc, mc);
    for (r1, row) in amat.iter().enumerate() {
        for (c, &w) in row.iter().enumerate() {
            // H A H^H = sum_{r,c} A_rc h_r h_c^H
            let hw: Vec<Complex64> = h[r1].iter().map(|v| v * w).collect();
            b = b.add(&ComplexMatrix::outer(&hw, &h[c]));
        }
    }
    let quartic: f64 = a.iter().map(|v| v.norm_sqr().powi(2)).sum();
    b.scale(beta.sqrt() / (2.0 * (j as f64 * quartic).sqrt()))
}

pub fn random_complex_vec(rng: &mut impl Rng, len: usize) -> Vec<Complex64> {
    (0..len).map(|_| complex_normal(rng)).collect()
}

/// `|| a/||a|| - b/||b|| ||_F`.
pub fn collinearity_gap(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    a.scale(1.0 / a.frobenius_norm()).sub(&b.scale(1.0 / b.frobenius_norm())).frobenius_norm()
}
