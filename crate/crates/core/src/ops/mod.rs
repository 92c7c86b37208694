//! Forward and adjoint kernels behind the tape operations.

pub mod conv;
pub mod norm;
pub mod pool;
pub mod resize;
