//! Tensor math, tape autodiff, Adam, and finite-difference gradient checks.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{finite_diff_gradcheck, GradCheckConfig, GradCheckReport};
pub use tape::{
    cross_entropy_value, Gradients, ParamEntry, ParamId, ParamStore, Tape, TapeFunction, Var,
};
pub use tensor::{matmul, softmax_rows, Tensor};
pub(crate) use tensor::{axpy, dot, softmax_in_place};
