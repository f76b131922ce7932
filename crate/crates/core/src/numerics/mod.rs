//! Dense linear algebra and special functions shared by the surrogate,
//! acquisition and sensitivity modules.

mod linalg;
mod special;
pub mod tol;

pub use linalg::{cholesky, cholesky_jittered, dot, CholeskyFactor, Matrix, SymmetricMatrix};
pub use special::{erf, erfc, f_sf, ln_gamma, norm_cdf, norm_pdf, reg_inc_beta};
