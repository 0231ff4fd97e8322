//! Very deep character-level CNNs for text classification: the standard
//! VDCNN and its depthwise separable counterpart SVDCNN.
//!
//! The crate carries its own small reverse-mode differentiation engine
//! ([`Tape`]), the layers and full networks built on it, exact parameter and
//! storage accounting, a training loop with checkpoints, and a latency
//! benchmark harness.

pub mod architecture;
pub mod bench;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod ops;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::{Real, Tensor};
