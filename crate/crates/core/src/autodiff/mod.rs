//! Minimal reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a dense row-major `f64` array; [`Tape`] records a forward
//! computation as a Wengert list of [`Var`] nodes and replays it in reverse
//! to accumulate exact gradients. The graph is dynamic: it is rebuilt for
//! every forward pass. The op set is exactly what the training stack needs —
//! elementwise arithmetic (with scalar broadcast), `exp`/`log`, a
//! max-with-constant primitive (ReLU), reductions, matrix product, bias
//! broadcast, row softmax, and batch normalization in training and eval
//! flavors.

mod tape;
mod tensor;

pub use tape::{Tape, Var};
pub use tensor::Tensor;
