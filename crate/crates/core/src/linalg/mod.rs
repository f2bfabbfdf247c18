//! Dense matrix kernel: products, Gram/Jacobi SVD and principal angles.
//!
//! Everything here is a pure function of its inputs. Reductions accumulate
//! left to right in index order so results are bit-reproducible.

mod matrix;
mod svd;

pub use matrix::{dot, frobenius_norm, matmul, matmul_nt, matmul_tn, Matrix};
pub use svd::{orthonormality_error, principal_angle_cosines, svd, symmetric_eigen, SvdResult};
