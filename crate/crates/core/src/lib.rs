//! Blind source separation with joint-diagonalized multichannel NMF.
//!
//! Sources follow a complex generalized Gaussian model with shape
//! `beta` in `(2, 4]` (sub-Gaussian); `beta = 2` selects the Gaussian path.
//! Spatial covariances are restricted to `Q_i^-1 diag(g) Q_i^-H`, and all
//! parameters are fitted by majorization-minimization.
//!
//! ```no_run
//! use sgmnmf::{optimizer, separate, signal, Hyperparams, SeparationState};
//!
//! let mix = signal::read_wav("mix.wav")?;
//! let cfg = signal::StftConfig::default();
//! let x = signal::stft(&mix, &cfg)?;
//! let hyper = Hyperparams::default();
//! let init = SeparationState::init(x.n_freqs(), x.n_frames(), x.n_channels(), hyper)?;
//! let (state, _trace) = optimizer::run(init, &x)?;
//! let sources = separate::wiener_separate(&state, &x)?.to_waveforms(&cfg, mix.len())?;
//! # let _ = sources;
//! # Ok::<(), sgmnmf::Error>(())
//! ```

pub mod error;
pub mod eval;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod separate;
pub mod signal;
#[doc(hidden)]
pub mod testutil;

pub use error::{Error, Result};
pub use linalg::ComplexMatrix;
pub use model::{Algorithm, Hyperparams, SeparationState};
pub use signal::{Spectrogram, StftConfig, Waveform};
