//! Device-edge split inference with a learned joint source-channel codec.
//!
//! A VGG-style classifier is cut at one of its pooling layers. The device
//! runs the (optionally pruned) prefix plus a shallow encoder whose output is
//! sent over an AWGN channel; the edge server decodes the noisy symbols and
//! finishes the forward pass.

pub mod channel;
pub mod checkpoint;
pub mod complexity;
pub mod data;
pub mod error;
pub mod harness;
pub mod models;
pub mod nn;
pub mod pruning;
pub mod report;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{no_grad, Rng, Tensor};
