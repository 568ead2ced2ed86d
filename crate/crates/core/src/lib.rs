//! Spiking-network encoding laboratory.
//!
//! The crate bundles a small reverse-mode tensor engine, soft-reset LIF
//! neuron dynamics with a learnable per-step variant, a unified temporal
//! encoder (direct / rate / phase / time-to-first-spike), an exact analytic
//! oracle for constant-input firing patterns, dataset loaders, and a
//! deterministic training harness for toy-scale ablation studies.

pub mod data;
pub mod encoder;
pub mod error;
pub mod network;
pub mod neuron;
pub mod oracle;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{grad_check, Tape, TensorId};
pub use tensor::{SpikeBackward, Tensor};
