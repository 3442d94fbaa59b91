//! Dense `f64` tensors with a reverse-mode tape.

mod gradcheck;
pub mod ops;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use ops::ConvGeometry;
pub use tape::{Gradients, Op, Tape, Var};
pub use tensor::Tensor;
