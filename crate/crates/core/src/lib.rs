//! Disaggregation of third-order tensors observed only through two
//! coarser views: a temporally aggregated one and a contemporaneously
//! aggregated one.

pub mod aggregation;
pub mod baselines;
mod bcd;
pub mod bprema;
pub mod cpd;
pub mod error;
pub mod eval;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod prema;
pub mod report;
pub mod solvers;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Dims, FactorTriple, MaskTensor3, Matrix, Mode, Tensor3};
