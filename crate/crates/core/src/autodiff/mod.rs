//! Dense two-dimensional tensors and a reverse-mode tape over them.
//!
//! The tape is deliberately small: every operation the encoder needs, each
//! with a hand-written pullback, plus an explicit [`Tape::stop_gradient`]
//! node. A tape and the values on it belong to one thread; independent tapes
//! can run side by side.

mod check;
mod tape;
mod tensor;

pub use check::{
    central_difference, relative_error, relative_error_with_floor, resolution_floor, FD_STEP,
    GRAD_TOLERANCE,
};
pub use tape::{sigmoid, Tape, Unary, Var};
pub use tensor::Tensor;
