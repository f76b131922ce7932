//! Numerical policy constants. Every tolerance used by the library lives here.

/// Maximum asymmetry accepted when building a [`super::SymmetricMatrix`].
pub const SYMMETRY: f64 = 1e-12;

/// First diagonal jitter tried when a Cholesky factorization fails.
pub const JITTER_START: f64 = 1e-10;

/// Largest diagonal jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-6;

/// Posterior variances below this are clamped to zero.
pub const VARIANCE_FLOOR: f64 = -1e-10;

/// Kernel width bounds.
pub const THETA_MIN: f64 = 1e-6;
pub const THETA_MAX: f64 = 1e6;

/// Nugget bounds.
pub const NUGGET_MIN: f64 = 1e-10;
pub const NUGGET_MAX: f64 = 1e2;

/// Relative pivot threshold below which a QR column counts as dependent.
pub const RANK: f64 = 1e-10;

/// Minimum pairwise distance between points in a proposal batch.
pub const DEDUP_DISTANCE: f64 = 1e-9;

/// Relative convergence tolerance of the continued fraction in the incomplete beta.
pub const BETA_CF_EPS: f64 = 1e-15;
