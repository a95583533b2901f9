//! Cascaded channel estimation for RIS-aided mmWave multi-user uplink.
//!
//! The crate is organised bottom-up:
//!
//! * [`numeric`]: complex dense linear algebra (Kronecker, Khatri-Rao, `vec`,
//!   Hermitian solves) and deterministic RNG streams.
//! * [`special`]: modified Bessel functions of the second kind.
//! * [`channel`]: geometric RIS-BS / UE-RIS channels, the cascaded dictionary
//!   `W_k` and the product-Gaussian gain density.
//! * [`measurement`]: the subblock pilot protocol and the stacked linear model
//!   `y_k = S̄ c_k + n_k`.
//! * [`estimators`]: the complex-adaptive-Laplace variational estimator and the
//!   LS, LMMSE and Student's-t VI baselines.
//! * [`harness`]: scenario configuration, seeded trials, sweeps and CSV output.

pub mod channel;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod measurement;
pub mod numeric;
pub mod special;

pub use error::{Error, Result};
pub use numeric::{CMatrix, CVector, RngStream};
