//! Operator regression over aligned and unaligned observation data.
//!
//! `opreg` bundles four operator-learning architectures — DeepONet (dot and
//! Cartesian merges), POD-DeepONet, Decoder-DeepONet, and
//! Multi-Decoder-DeepONet — on top of a self-contained reverse-mode autodiff
//! engine, together with a Darcy-flow data factory and a training/benchmark
//! harness. Everything is 64-bit, deterministic under a master seed, and
//! thread-count invariant.
//!
//! Start with the runnable programs in `examples/`; the `opreg` binary wires
//! the same pieces into `datagen`, `train`, `eval`, `compare`, and `verify`
//! subcommands.

pub mod autodiff;
pub mod error;
pub mod tensor;
pub mod threading;

pub mod adam;
pub mod nn;
pub mod pod;

pub use error::{Error, Result};
pub use tensor::Tensor;
