//! Image restoration with selective state space models.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] - a minimal dense N-D tensor with reverse-mode differentiation
//!   over a recorded computation graph.
//! * [`ssm`] - ZOH discretization, the selective scan recurrence (sequential
//!   oracle and chunked fast path) and its analytic backward.
//! * [`oss`] - omni selective scan geometry (six scan directions), the OSS
//!   module, the gated feed-forward network and the composed OSS block.
//! * [`model`] - the full UNet restoration model plus parameter/FLOP
//!   accounting.

pub mod checkpoint;
pub mod error;
pub mod init;
pub mod model;
pub mod nn;
pub mod oss;
pub mod ssm;
pub mod tensor;

pub use error::TensorError;
pub use tensor::{Element, Tensor};
