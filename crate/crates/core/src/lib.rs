//! Wavelet-domain feature exchange for multi-agent collaborative perception.
//!
//! Each agent encodes its local observation into a bird's-eye-view feature
//! map, decomposes it with a 2D Haar transform and transmits only the
//! quantized low-frequency band. The receiver rebuilds a full-resolution map
//! (lowpass inverse or a learned generator), warps it into its own frame and
//! fuses it with its local features before detection.
//!
//! Modules, bottom-up:
//!
//! - [`tensorcore`]: dense tensors, layers with manual backward passes, Adam,
//!   finite-difference gradient checking, checkpoints.
//! - [`wavelet`]: multi-level 2D Haar analysis/synthesis.
//! - [`wirecodec`]: binary16 quantization, the message wire format and
//!   communication-volume accounting.
//! - [`distillation`]: generator, discriminator, distillation losses and the
//!   adversarial training step.
//! - [`fusion`]: affine warping and per-cell softmax fusion.
//! - [`perception`]: toy BEV encoder, detection head, loss and AP metric.
//! - [`simharness`]: synthetic scenarios, collaboration episodes, end-to-end
//!   training and the ablation drivers.

pub mod distillation;
pub mod error;
pub mod fusion;
pub mod perception;
pub mod simharness;
pub mod tensorcore;
pub mod wavelet;
pub mod wirecodec;

pub use error::{Error, Result};
pub use tensorcore::Tensor;
