//! Numeric kernels on raw row-major buffers.

pub mod conv;
pub mod gemm;
pub mod resample;
