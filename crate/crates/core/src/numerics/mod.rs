//! Dense numerics: row-major matrices, a tanh MLP encoder with an exact
//! reverse pass, central finite differences, and Adam.

mod adam;
mod encoder;
mod matrix;

pub use adam::{adam_step, AdamState};
pub use encoder::{
    encoder_backward, encoder_forward, finite_diff_gradient, max_relative_error, EncoderParams,
    ForwardCache, Gradients, Layer,
};
pub use matrix::{argmax, dot, softmax_into, softmax_rows, squared_distance, Matrix};
