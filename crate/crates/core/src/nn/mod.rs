//! Stacked LSTM classifier with hand-derived gradients.
//!
//! Layer stack, in order:
//!
//! | layer    | width | notes                              |
//! |----------|-------|------------------------------------|
//! | LSTM     | 128   | returns the hidden state of every step |
//! | Dropout  | 0.3   |                                    |
//! | LSTM     | 64    | returns only the final hidden state |
//! | Dropout  | 0.3   |                                    |
//! | Dense    | 128   | ReLU                               |
//! | Dense    | 64    | ReLU                               |
//! | Dense    | 3     | softmax                            |
//!
//! Sequences inside the network are stored time-major as 2-D arrays of shape
//! `(steps * batch, features)`; row `t * batch + b` holds step `t` of sample
//! `b`. This keeps each per-step slice contiguous for the matrix products.
//!
//! All numeric code is generic over [`Real`], so the same network runs in
//! `f64` (gradient checks) or `f32` (runtime).

mod activation;
mod adam;
mod dense;
mod dropout;
mod init;
mod io;
mod kernel;
mod loss;
mod lstm;
mod network;

pub use adam::{adam_step, AdamState};
pub use dense::{dense_forward, Activation, DenseGrads, DenseLayer};
pub use dropout::dropout_forward;
pub use init::init_network;
pub use io::{load_model, read_model, save_model, write_model, SCHEMA_VERSION};
pub use loss::{batch_cross_entropy, cross_entropy, softmax_rows, PROB_FLOOR};
pub use lstm::{lstm_forward, LstmCache, LstmGrads, LstmLayer, SequenceMode};
pub use network::{
    batch_from_samples, network_backward, network_forward, ForwardCache, Gradients, Network,
    NetworkSpec, TENSOR_NAMES,
};

use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of the network: `f32` or `f64`.
pub trait Real:
    Float
    + num_traits::NumAssign
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn lit(v: f64) -> Self;

    /// Logistic function applied in place.
    fn sigmoid_in_place(xs: &mut [Self]);

    fn tanh_in_place(xs: &mut [Self]);

    /// `acc += x · m` with `m` of shape `(x.len(), acc.len())`, row-major.
    fn vec_mat_acc(acc: &mut [Self], x: &[Self], m: &[Self]) {
        kernel::vec_mat_acc(acc, x, m)
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    fn lit(v: f64) -> Self {
        v as f32
    }

    fn sigmoid_in_place(xs: &mut [Self]) {
        activation::sigmoid_f32(xs)
    }

    fn tanh_in_place(xs: &mut [Self]) {
        activation::tanh_f32(xs)
    }

    fn vec_mat_acc(acc: &mut [Self], x: &[Self], m: &[Self]) {
        kernel::vec_mat_acc_f32(acc, x, m)
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    fn lit(v: f64) -> Self {
        v
    }

    fn sigmoid_in_place(xs: &mut [Self]) {
        activation::sigmoid_f64(xs)
    }

    fn tanh_in_place(xs: &mut [Self]) {
        activation::tanh_f64(xs)
    }
}
