//! Minimal `f32` tensor engine for the change-detection networks.
//!
//! Only the operators the generator and discriminator need are provided:
//! strided 2-D convolution (zero or reflect padding), transposed convolution,
//! instance normalization, pointwise activations, dropout, channel
//! concatenation and the two training losses. Everything runs serially on the
//! CPU, so a forward and backward pass is bitwise reproducible for a fixed
//! seed.
//!
//! ```
//! use cdgan_tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::new(vec![2], vec![2.0, -4.0]).unwrap());
//! let sq = tape.mul(&x, &x).unwrap();
//! let loss = tape.scale(&tape.mean(&sq).unwrap(), 0.5).unwrap();
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.get(&x).unwrap().data(), &[1.0, -2.0]);
//! ```

mod conv;
mod error;
pub mod grad_check;
mod tape;
mod tensor;

pub use conv::{conv_out_size, conv_transpose_out_size, Conv2dSpec, ConvTransposeSpec, PadMode};
pub use error::{Result, TensorError};
pub use grad_check::{compare_gradients, grad_check, GradCheckOptions, GradCheckReport};
pub use tape::{sigmoid, Activation, Gradients, Tape, Var};
pub use tensor::Tensor;
