//! Motion-adaptive deblurring engine.
//!
//! The pipeline predicts, per pixel, a motion flow and occlusion mask,
//! aligns the blurred image bidirectionally toward the motion midpoint,
//! then filters it with per-pixel separable kernel pairs applied at learned
//! offset taps with softmax tap weights. A small trainable encoder-decoder
//! supplies the features; synthetic motion-blur generation, training,
//! metrics, and an ablation harness over ten network couplings round out
//! the toolkit.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod ops;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
