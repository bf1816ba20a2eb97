//! Seeded random problem instances shared by unit, integration and acceptance tests.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::ComplexMatrix;
use crate::model::{Algorithm, Hyperparams, SeparationState, SourceModel, SpatialModel};
use crate::signal::Spectrogram;

pub fn complex_normal(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Identity plus a complex Gaussian perturbation of spread `spread`.
pub fn random_diagonalizer(rng: &mut impl Rng, m: usize, spread: f64) -> ComplexMatrix {
    let mut q = ComplexMatrix::identity(m);
    for r in 0..m {
        for c in 0..m {
            q[(r, c)] += complex_normal(rng) * spread;
        }
    }
    q
}

/// Random state with NMF factors and gains on (0.1, 1) and perturbed-identity diagonalizers.
pub fn random_state(seed: u64, i: usize, j: usize, m: usize, n: usize, k: usize, beta: f64) -> SeparationState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw2 = |rows, cols| Array2::from_shape_simple_fn((rows, cols), || rng.random_range(0.1..1.0));
    let t = draw2(i, k);
    let v = draw2(k, j);
    let z = draw2(k, n);
    let g = Array3::from_shape_simple_fn((i, n, m), || rng.random_range(0.1..1.0));
    let q = (0..i).map(|_| random_diagonalizer(&mut rng, m, 0.5)).collect();
    let algorithm = if beta == 2.0 { Algorithm::Gaussian } else { Algorithm::Subgaussian };
    let hyper = Hyperparams { beta, n_sources: n, n_bases: k, algorithm, ..Hyperparams::default() };
    SeparationState { source: SourceModel { t, v, z }, spatial: SpatialModel { q, g }, hyper }
}

/// Circular complex Gaussian observation.
pub fn random_spectrogram(seed: u64, i: usize, j: usize, m: usize) -> Spectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Spectrogram::new(Array3::from_shape_simple_fn((i, j, m), || complex_normal(&mut rng)), 16_000)
}

/// Feasible but arbitrary majorizer auxiliaries for `state`.
pub fn random_auxiliary(rng: &mut impl Rng, state: &SeparationState) -> crate::objective::Auxiliary {
    let d = state.dims();
    let (i, j, m, n, k) = (d.freqs, d.frames, d.channels, d.sources, d.bases);
    let mut xi = Array3::from_shape_simple_fn((i, j, m), || rng.random_range(0.01..1.0));
    for mut lane in xi.lanes_mut(ndarray::Axis(2)) {
        let s = lane.sum();
        lane /= s;
    }
    let mut eta = ndarray::Array5::from_shape_simple_fn((i, j, k, m, n), || rng.random_range(0.01..1.0));
    for ii in 0..i {
        for jj in 0..j {
            for mm in 0..m {
                let mut block = eta.slice_mut(ndarray::s![ii, jj, .., mm, ..]);
                let s = block.sum();
                block /= s;
            }
        }
    }
    let zeta = Array3::from_shape_simple_fn((i, j, m), || rng.random_range(0.05..5.0));
    crate::objective::Auxiliary { xi, eta, zeta }
}
