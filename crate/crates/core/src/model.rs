//! Factorization state and the quantities derived from it.
//!
//! Shapes used throughout the crate (I bins, J frames, M channels, N sources, K bases):
//!
//! | quantity | shape       |
//! |----------|-------------|
//! | `t`      | I x K       |
//! | `v`      | K x J       |
//! | `z`      | K x N       |
//! | `g`      | I x N x M   |
//! | `q`      | I of M x M  |
//! | psd      | I x J x N   |
//! | gain     | I x J x M   |

use std::path::Path;

use ndarray::{Array2, Array3, Axis, Zip};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{invert, ComplexMatrix};

pub const DEFAULT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Subgaussian,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub beta: f64,
    pub n_sources: usize,
    pub n_bases: usize,
    pub iterations: usize,
    pub floor_eps: f64,
    pub seed: u64,
    pub algorithm: Algorithm,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            beta: 4.0,
            n_sources: 2,
            n_bases: 20,
            iterations: 200,
            floor_eps: DEFAULT_FLOOR,
            seed: 0,
            algorithm: Algorithm::Subgaussian,
        }
    }
}

impl Hyperparams {
    pub fn gaussian() -> Self {
        Self { beta: 2.0, algorithm: Algorithm::Gaussian, ..Self::default() }
    }

    /// Checks the shape parameter against the algorithm. A sub-Gaussian request
    /// with `beta == 2` is routed to the Gaussian path.
    pub fn validated(mut self) -> Result<Self> {
        match self.algorithm {
            Algorithm::Subgaussian if self.beta == 2.0 => self.algorithm = Algorithm::Gaussian,
            Algorithm::Subgaussian if !(self.beta > 2.0 && self.beta <= 4.0) => {
                return Err(Error::InvalidParameter {
                    field: "beta",
                    reason: format!("{} is outside (2, 4] required by the subgaussian algorithm", self.beta),
                });
            }
            Algorithm::Gaussian if self.beta != 2.0 => {
                return Err(Error::InvalidParameter {
                    field: "beta",
                    reason: format!("the gaussian algorithm fixes beta = 2, got {}", self.beta),
                });
            }
            _ => {}
        }
        if self.n_sources == 0 {
            return Err(Error::InvalidParameter { field: "n_sources", reason: "must be at least 1".into() });
        }
        if self.n_bases == 0 {
            return Err(Error::InvalidParameter { field: "n_bases", reason: "must be at least 1".into() });
        }
        if !(self.floor_eps > 0.0 && self.floor_eps < 1e-3) {
            return Err(Error::InvalidParameter {
                field: "floor_eps",
                reason: format!("{} is not a small positive number", self.floor_eps),
            });
        }
        Ok(self)
    }
}

/// Nonnegative NMF factors composing every source's power spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    pub t: Array2<f64>,
    pub v: Array2<f64>,
    pub z: Array2<f64>,
}

impl SourceModel {
    pub fn n_freqs(&self) -> usize {
        self.t.nrows()
    }

    pub fn n_bases(&self) -> usize {
        self.t.ncols()
    }

    pub fn n_frames(&self) -> usize {
        self.v.ncols()
    }

    pub fn n_sources(&self) -> usize {
        self.z.ncols()
    }

    fn check(&self) -> Result<()> {
        let k = self.n_bases();
        if self.v.nrows() != k || self.z.nrows() != k {
            return Err(Error::DimensionMismatch(format!(
                "t has {k} bases but v has {} and z has {}",
                self.v.nrows(),
                self.z.nrows()
            )));
        }
        Ok(())
    }
}

/// Per-bin joint diagonalizers and the diagonal spatial gains they expose.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialModel {
    /// `q[i]` has rows `q_im^H`.
    pub q: Vec<ComplexMatrix>,
    pub g: Array3<f64>,
}

impl SpatialModel {
    pub fn n_channels(&self) -> usize {
        self.g.dim().2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationState {
    pub source: SourceModel,
    pub spatial: SpatialModel,
    pub hyper: Hyperparams,
}

/// Problem dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub freqs: usize,
    pub frames: usize,
    pub channels: usize,
    pub sources: usize,
    pub bases: usize,
}

impl SeparationState {
    /// Random NMF factors on (0.1, 1.0), unit spatial gains and identity diagonalizers.
    pub fn init(n_freqs: usize, n_frames: usize, n_channels: usize, hyper: Hyperparams) -> Result<Self> {
        let hyper = hyper.validated()?;
        let (k, n) = (hyper.n_bases, hyper.n_sources);
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let mut draw = |rows, cols| Array2::from_shape_simple_fn((rows, cols), || rng.random_range(0.1..1.0));
        let t = draw(n_freqs, k);
        let v = draw(k, n_frames);
        let z = draw(k, n);
        let spatial = SpatialModel {
            q: vec![ComplexMatrix::identity(n_channels); n_freqs],
            g: Array3::ones((n_freqs, n, n_channels)),
        };
        Ok(Self { source: SourceModel { t, v, z }, spatial, hyper })
    }

    pub fn dims(&self) -> Dims {
        Dims {
            freqs: self.source.n_freqs(),
            frames: self.source.n_frames(),
            channels: self.spatial.n_channels(),
            sources: self.source.n_sources(),
            bases: self.source.n_bases(),
        }
    }

    /// Verifies that every factor agrees on I, J, M, N and K.
    pub fn check(&self) -> Result<Dims> {
        self.source.check()?;
        let d = self.dims();
        let (gi, gn, gm) = self.spatial.g.dim();
        if gi != d.freqs || gn != d.sources {
            return Err(Error::DimensionMismatch(format!(
                "g is {gi}x{gn}x{gm}, expected {}x{}x{gm}",
                d.freqs, d.sources
            )));
        }
        if self.spatial.q.len() != d.freqs {
            return Err(Error::DimensionMismatch(format!(
                "{} diagonalizers for {} bins",
                self.spatial.q.len(),
                d.freqs
            )));
        }
        if let Some(bad) = self.spatial.q.iter().find(|q| q.rows() != gm || q.cols() != gm) {
            return Err(Error::DimensionMismatch(format!(
                "diagonalizer is {}x{}, expected {gm}x{gm}",
                bad.rows(),
                bad.cols()
            )));
        }
        Ok(d)
    }

    pub fn check_against(&self, n_freqs: usize, n_frames: usize, n_channels: usize) -> Result<Dims> {
        let d = self.check()?;
        if (d.freqs, d.frames, d.channels) != (n_freqs, n_frames, n_channels) {
            return Err(Error::DimensionMismatch(format!(
                "state is {}x{}x{} (bins x frames x channels), observation is {n_freqs}x{n_frames}x{n_channels}",
                d.freqs, d.frames, d.channels
            )));
        }
        Ok(d)
    }

    /// Clamps every nonnegative parameter to the configured floor.
    pub fn apply_floor(&mut self) {
        let eps = self.hyper.floor_eps;
        for a in [&mut self.source.t, &mut self.source.v, &mut self.source.z] {
            a.mapv_inplace(|x| x.max(eps));
        }
        self.spatial.g.mapv_inplace(|x| x.max(eps));
    }
}

/// `sigma_ijn = sum_k t_ik v_kj z_kn`.
pub fn compute_source_psd(s: &SourceModel) -> Result<Array3<f64>> {
    s.check()?;
    let (k_count, j_count, n_count) = (s.n_bases(), s.n_frames(), s.n_sources());
    let mut psd = Array3::zeros((s.n_freqs(), j_count, n_count));
    psd.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(s.t.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut out, t_row)| {
            let out = out.as_slice_mut().expect("standard layout");
            for k in 0..k_count {
                let tk = t_row[k];
                let zk = s.z.row(k);
                for j in 0..j_count {
                    let tv = tk * s.v[[k, j]];
                    let dst = &mut out[j * n_count..(j + 1) * n_count];
                    for (d, &z) in dst.iter_mut().zip(zk.iter()) {
                        *d += tv * z;
                    }
                }
            }
        });
    Ok(psd)
}

/// `chi_ijm = sum_n sigma_ijn g_inm`, given the source PSDs.
pub fn gain_from_psd(psd: &Array3<f64>, g: &Array3<f64>) -> Array3<f64> {
    let (i_count, j_count, n_count) = psd.dim();
    let m_count = g.dim().2;
    let mut chi = Array3::zeros((i_count, j_count, m_count));
    Zip::from(chi.axis_iter_mut(Axis(0)))
        .and(psd.axis_iter(Axis(0)))
        .and(g.axis_iter(Axis(0)))
        .par_for_each(|mut out, sig, gi| {
            for j in 0..j_count {
                for m in 0..m_count {
                    let mut acc = 0.0;
                    for n in 0..n_count {
                        acc += sig[[j, n]] * gi[[n, m]];
                    }
                    out[[j, m]] = acc;
                }
            }
        });
    chi
}

/// `chi_ijm = sum_{k,n} t_ik v_kj z_kn g_inm`.
pub fn mixture_gain(state: &SeparationState) -> Result<Array3<f64>> {
    state.check()?;
    let psd = compute_source_psd(&state.source)?;
    Ok(gain_from_psd(&psd, &state.spatial.g))
}

/// Full-rank spatial covariances `G_in = Q_i^-1 diag(g_in) Q_i^-H`, indexed `[i][n]`.
pub fn full_rank_scm(state: &SeparationState) -> Result<Vec<Vec<ComplexMatrix>>> {
    let d = state.check()?;
    (0..d.freqs)
        .map(|i| {
            let q_inv = invert(&state.spatial.q[i])?;
            let q_inv_h = q_inv.adjoint();
            Ok((0..d.sources)
                .map(|n| {
                    let gains: Vec<f64> = state.spatial.g.slice(ndarray::s![i, n, ..]).to_vec();
                    let scaled = scale_columns(&q_inv, &gains);
                    &scaled * &q_inv_h
                })
                .collect())
        })
        .collect()
}

fn scale_columns(a: &ComplexMatrix, s: &[f64]) -> ComplexMatrix {
    let mut out = a.clone();
    for r in 0..a.rows() {
        for (c, &sc) in s.iter().enumerate() {
            out[(r, c)] = a[(r, c)] * sc;
        }
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct RealArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ComplexArray {
    shape: Vec<usize>,
    re: Vec<f64>,
    im: Vec<f64>,
}

/// JSON checkpoint document: every array carries its shape explicitly.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    hyper: Hyperparams,
    t: RealArray,
    v: RealArray,
    z: RealArray,
    g: RealArray,
    q: ComplexArray,
}

fn real2(a: &Array2<f64>) -> RealArray {
    RealArray { shape: a.shape().to_vec(), data: a.iter().copied().collect() }
}

fn from_real2(a: RealArray, name: &str) -> Result<Array2<f64>> {
    match a.shape.as_slice() {
        &[r, c] => Array2::from_shape_vec((r, c), a.data)
            .map_err(|e| Error::DimensionMismatch(format!("checkpoint `{name}`: {e}"))),
        other => Err(Error::DimensionMismatch(format!("checkpoint `{name}` has shape {other:?}"))),
    }
}

impl SeparationState {
    pub fn to_json(&self) -> Result<String> {
        let d = self.check()?;
        let m = d.channels;
        let mut re = Vec::with_capacity(d.freqs * m * m);
        let mut im = Vec::with_capacity(d.freqs * m * m);
        for q in &self.spatial.q {
            for z in q.as_slice() {
                re.push(z.re);
                im.push(z.im);
            }
        }
        let doc = Checkpoint {
            hyper: self.hyper.clone(),
            t: real2(&self.source.t),
            v: real2(&self.source.v),
            z: real2(&self.source.z),
            g: RealArray { shape: self.spatial.g.shape().to_vec(), data: self.spatial.g.iter().copied().collect() },
            q: ComplexArray { shape: vec![d.freqs, m, m], re, im },
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: Checkpoint = serde_json::from_str(s)?;
        let g = match doc.g.shape.as_slice() {
            &[a, b, c] => Array3::from_shape_vec((a, b, c), doc.g.data)
                .map_err(|e| Error::DimensionMismatch(format!("checkpoint `g`: {e}")))?,
            other => return Err(Error::DimensionMismatch(format!("checkpoint `g` has shape {other:?}"))),
        };
        let (bins, m) = match doc.q.shape.as_slice() {
            &[bins, r, c] if r == c && doc.q.re.len() == bins * r * c && doc.q.im.len() == bins * r * c => (bins, r),
            other => return Err(Error::DimensionMismatch(format!("checkpoint `q` has shape {other:?}"))),
        };
        let q = (0..bins)
            .map(|i| {
                let range = i * m * m..(i + 1) * m * m;
                let data = doc.q.re[range.clone()]
                    .iter()
                    .zip(&doc.q.im[range])
                    .map(|(&a, &b)| Complex64::new(a, b))
                    .collect();
                ComplexMatrix::new(m, m, data)
            })
            .collect::<Result<_>>()?;
        let state = Self {
            source: SourceModel {
                t: from_real2(doc.t, "t")?,
                v: from_real2(doc.v, "v")?,
                z: from_real2(doc.z, "z")?,
            },
            spatial: SpatialModel { q, g },
            hyper: doc.hyper.validated()?,
        };
        state.check()?;
        Ok(state)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|source| Error::Io { path: path.into(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })?;
        Self::from_json(&s)
    }
}
