//! Dense matrices, Cholesky log-determinants, seeded sampling and gradient checking.

mod gradcheck;
mod linalg;
mod matrix;
mod rng;

pub use gradcheck::{grad_check, GradCheckReport};
pub use linalg::{cholesky, cholesky_logdet, gaussian_sample};
pub use matrix::Matrix;
pub use rng::Rng;

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// `ln(2πe)`.
pub const LN_2PI_E: f64 = 2.837_877_066_409_345_5;
