//! Brute-force reference implementations.
//!
//! Everything here is written with explicit index loops over nested vectors
//! and shares no code with the main implementation. It is slow on purpose.

#![allow(clippy::needless_range_loop)]

pub mod gradcheck;
pub mod mat;
pub mod model;
pub mod real;

pub use gradcheck::{
    finite_diff_grad, finite_diff_grad_with, Coverage, GradCheckReport, NamedArray, ParamCheck, DEFAULT_H, DELTA, H_RANGE,
};
pub use mat::Mat;
pub use real::{Dd, Real};
