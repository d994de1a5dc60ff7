pub mod autograd;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod heap;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod nn;
pub mod parallel;
pub mod plot;
pub mod rf;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Scalar, Tensor};
