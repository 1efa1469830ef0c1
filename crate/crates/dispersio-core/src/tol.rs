//! Numerical thresholds shared across the crate.
//!
//! All thresholds are relative to a problem scale (a norm of the matrix or
//! family being tested) unless the name says otherwise.

/// Asymmetry above which a matrix stops counting as Hermitian.
pub const HERMITIAN_REL: f64 = 1e-12;

/// Negative eigenvalues above `-PSD_CLIP_REL * scale` are clipped to zero
/// when projecting onto the positive cone.
pub const PSD_CLIP_REL: f64 = 1e-12;

/// Negative eigenvalues below `-PSD_HARD_REL * scale` are a hard error:
/// the input is genuinely indefinite, not just noisy.
pub const PSD_HARD_REL: f64 = 1e-6;

/// Relative singular value cutoff for numerical rank decisions.
pub const RANK_REL: f64 = 1e-10;

/// Dissipation checks pass when the normalized worst eigenvalue stays
/// above `-PDC_TOL`.
pub const PDC_TOL: f64 = 1e-8;

/// Norm growth factor that counts as divergence in an unforced stretch
/// of a simulation.
pub const UNSTABLE_GROWTH: f64 = 1e6;

/// Default per-node cap on the Richardson extrapolation residual in
/// boundary-density recovery, relative to the largest recovered value.
/// With the standard halved-offset pair, an atom drives the worst residual
/// to about 0.31 of the recovered scale while a mere jump discontinuity
/// tops out near 0.11, so 0.15 separates the two.
pub const STIELTJES_RESIDUAL_REL: f64 = 0.15;

/// Default fraction of nodes allowed to exceed the extrapolation residual
/// cap before inversion fails. Zero: any offending node is fatal.
pub const STIELTJES_BAD_FRACTION: f64 = 0.0;

/// Time step safety factor: `dt * maxfreq` must stay at or below this.
pub const DT_MAXFREQ: f64 = 0.1;
