//! Dense linear algebra, quadrature and random streams shared by the rest
//! of the crate.

mod eigen;
mod matrix;
mod quadrature;
mod rng;

pub use eigen::{
    inv_sqrt_psd, inverse_spd, solve_symmetric, solve_weighted_ls, sym_eigen, SymmetricEigen, RCOND_THRESHOLD,
};
pub use matrix::{dot, Matrix};
pub use quadrature::{simpson, trapezoid_integrate, trapezoid_weights};
pub use rng::{spawn_stream, ChiSquareSampler, RngStream};
