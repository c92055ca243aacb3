//! A small, self-contained CNN stack for handwritten Japanese character
//! recognition: dataset ingestion for the MNIST/Kuzushiji corpus family,
//! deterministic training with transfer learning and frozen stems, three-way
//! ensemble voting by summed class probabilities, per-class metrics, and
//! pixel-attribution maps.
//!
//! Everything runs on CPU from a single `f32` tensor type; every random
//! decision flows from one 64-bit seed, so training runs reproduce
//! bit-for-bit. See the `examples/` directory for one runnable example per
//! capability and the `kuzuflow` binary for the command-line pipeline.

pub mod error;
pub mod parallel;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
