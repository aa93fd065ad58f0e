//! Shared numerical kernels.
//!
//! Everything the solvers need from linear algebra goes through here: the
//! sparse LDLᵀ factorization (generic over real and complex scalars so that
//! the complex-step derivative can reuse the exact same solve), thin SVDs,
//! complex-step differentiation and the seeded random stream.

mod complex_step;
mod rng;
mod scalar;
mod sparse;
mod svd;

pub use complex_step::{complex_step, COMPLEX_STEP_H};
pub use rng::Rng;
pub use scalar::Scalar;
pub use sparse::{spd_factor, spd_refactor, spd_solve, SparseSym, SpdFactorization, SymPattern, Symbolic};
pub use svd::{thin_svd, ThinSvd};
