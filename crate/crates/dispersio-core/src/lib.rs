//! Linear evolution with memory friction, and finite spectral models for it.
//!
//! The crate works with equations of the form
//!
//! ```text
//!     m dv/dt = -i A v - (a * v)(t) + f(t),      (a * v)(t) = int_0^inf a(tau) v(t - tau) dtau
//! ```
//!
//! where `m` is a Hermitian positive mass, `A` a Hermitian generator, and the
//! convolution kernel `a(t) = alpha_inf delta(t) + alpha(t)` models delayed
//! friction. Everything here revolves around three views of the same object:
//!
//! * time domain: the kernel `a(t)` and its two-sided Hermitian extension,
//! * frequency domain: the half-plane transform `ahat(zeta)` and the system
//!   admittance, both with positive semidefinite Hermitian part when the
//!   kernel dissipates,
//! * spectral domain: a positive matrix density `N(sigma)` on the real line
//!   whose Cauchy transform reproduces `ahat`.
//!
//! The [`spectra`] module holds the kernel and transform types, [`pdc`] the
//! positive-dissipation checks, [`extension`] the finite mode systems that
//! realize a density exactly, [`dynamics`] the two independent simulators
//! (direct convolution stepping and eigenbasis propagation of the extended
//! block system), and [`models`] closed-form families used as ground truth:
//! the damped oscillator and the Lorentz-type polarization medium.
//!
//! Conventions used throughout:
//!
//! * complex scalars are `num_complex::Complex64`, matrices are
//!   `ndarray::Array2` in row-major order;
//! * transforms use the upper half plane, `ahat(zeta) = alpha_inf +
//!   int_0^inf e^{i zeta t} alpha(t) dt` for `Im zeta > 0`;
//! * Hermitian and skew parts are `(X + X*)/2` and `(X - X*)/(2i)`;
//! * densities are midpoint quadratures: nodes `sigma_k`, weights
//!   `dsigma_k`, matrices `N_k >= 0`.

pub mod dynamics;
pub mod extension;
pub mod linalg;
pub mod models;
pub mod pdc;
pub mod spectra;
pub mod tol;

use ndarray::{Array1, Array2};
use num_complex::Complex64;

/// Complex scalar used everywhere in this crate.
pub type C64 = Complex64;
/// Dense complex matrix.
pub type CMat = Array2<C64>;
/// Dense complex vector.
pub type CVec = Array1<C64>;

/// Errors shared by all modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not Hermitian: asymmetry {found:.3e} exceeds {limit:.3e} (relative)")]
    NotHermitian { found: f64, limit: f64 },

    #[error("matrix is not positive: eigenvalue {found:.3e} is below the repair threshold {threshold:.3e}")]
    NotPositive { found: f64, threshold: f64 },

    #[error("evaluation point {0} is not in the open upper half plane")]
    PointNotInUpperHalfPlane(C64),

    #[error(
        "boundary extrapolation residual {residual:.3e} exceeds cap {cap:.3e} at {count} of {total} \
         nodes (first at sigma = {location:.6}); the measure appears to carry a singular component \
         that a node density cannot represent"
    )]
    SingularComponent {
        residual: f64,
        cap: f64,
        count: usize,
        total: usize,
        location: f64,
    },

    #[error("coupling rows are degenerate: smallest Gram eigenvalue {found:.3e} < {min:.3e}")]
    DegenerateCoupling { found: f64, min: f64 },

    #[error(
        "passivity violated: boundary part has normalized eigenvalue {worst:.3e} at zeta = {location}"
    )]
    PassivityViolated { worst: f64, location: C64 },

    #[error("high-frequency limit did not settle: {0}")]
    NonConvergentLimit(String),

    #[error("time step {dt:.3e} is too coarse for content at frequency scale {maxfreq:.3e} (need dt*maxfreq <= {limit})")]
    TimeStepTooCoarse { dt: f64, maxfreq: f64, limit: f64 },

    #[error("simulation diverged: {0}")]
    Unstable(String),

    #[error("hidden state storage would need {need} values, above the cap {cap}; raise the cap or drop hidden storage")]
    HiddenStorageCap { need: usize, cap: usize },

    #[error("trajectory does not carry the data required: {0}")]
    MissingTrajectoryData(String),

    #[error("linear algebra backend failed: {0}")]
    Backend(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Backend(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
