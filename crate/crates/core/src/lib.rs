//! Rotation-invariant convolutions (RIConvs): a `K x K` neighbourhood is
//! sampled on a polar lattice, realigned by a non-learnable calibrator, and
//! only then multiplied with learnable weights.

pub mod bench;
pub mod calib;
pub mod data;
pub mod error;
pub mod gemm;
pub mod nn;
pub mod polar;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Precision, Scalar, Shape, Tensor};
