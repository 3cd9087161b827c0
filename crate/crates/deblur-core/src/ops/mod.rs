//! Differentiable operations.
//!
//! Each operation implements [`DiffOp`]: a pure forward pass plus a
//! hand-written backward pass that maps an upstream gradient to per-input
//! gradients (a vector-Jacobian product). There is no tape; composite
//! functions chain these explicitly, and the network builder wires them
//! into a static graph.

pub mod conv;
pub mod elementwise;
pub mod sampling;
pub mod shape;

pub use conv::{conv2d, Conv2d};
pub use elementwise::{
    channel_softmax, sigmoid, Add, Blend, ChannelSoftmax, Charbonnier, LeakyRelu, Sigmoid,
    TanhClamp,
};
pub use sampling::{bilinear_sample, warp, BilinearSample, Warp};
pub use shape::{concat, AvgPool2, Concat2, SliceChannels, UpsampleNearest2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A differentiable operation: forward plus vector-Jacobian backward.
///
/// Contract:
/// * `backward` returns one gradient per input, each with the input's shape;
/// * a zero upstream gradient must map to zero gradients for every input.
pub trait DiffOp<T: Scalar>: Send + Sync {
    fn name(&self) -> String;

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    fn backward(&self, inputs: &[&Tensor<T>], upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>>;
}

pub(crate) fn expect_inputs<T: Scalar>(
    op: &str,
    inputs: &[&Tensor<T>],
    n: usize,
) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::config(format!(
            "{op}: expected {n} inputs, got {}",
            inputs.len()
        )));
    }
    Ok(())
}
