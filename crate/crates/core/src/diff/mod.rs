//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records operations as they execute. Each primitive implements
//! [`Op`], which gives it a forward map and the adjoint of that map; a
//! reverse sweep over the record yields gradients for every leaf. Types
//! outside this module can add their own primitives through
//! [`Tape::apply`].
//!
//! ```
//! use wcr::diff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.input(Tensor::scalar(1.0));
//! let x2 = tape.square(x).unwrap();
//! let y = tape.sin(x2).unwrap();
//! let grads = tape.backward(y, Tensor::scalar(1.0)).unwrap();
//! let dx = grads.get(x).unwrap().item();
//! assert!((dx - 2.0 * 1f64.cos()).abs() < 1e-15);
//! ```

mod gradcheck;
mod image_ops;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradReport};
pub use image_ops::{bilinear_lookup, taps, BilinearSample, Conv2d, Resize, Taps};
pub use ops::{
    sigmoid, softplus, squareplus, Binary, BinaryKind, Concat, GatherRows, MatMul, Reshape,
    SliceCols, SumAll, SumAxis, Unary,
};
pub use tape::{Gradients, Op, Tape, Var};
pub use tensor::Tensor;
