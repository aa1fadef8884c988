//! Dense `f64` tensors and reverse-mode differentiation over the small set of
//! operations the model needs.

pub mod kernels;
mod param;
mod tape;
mod tensor;

pub use kernels::{PoolAxis, DEFAULT_LN_EPS};
pub use param::{Binding, Initializer, ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
