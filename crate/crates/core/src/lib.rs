//! 1D CNN backbones with attention blocks for physiological waveform tasks.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`graph`], [`nn`], [`gradcheck`]: a small deterministic
//!   reverse-mode autodiff engine in `f64`.
//! * [`attention`]: squeeze-and-excitation, non-local, CBAM and multi-head
//!   self-attention blocks.
//! * [`backbones`]: level-truncated VGG / ResNet / Inception backbones, the
//!   stand-alone self-attention model, attention placement and parameter planning.
//! * [`datapipe`]: segment filtering, hypotension labels, SVI targets, a
//!   synthetic waveform generator and the binary dataset container.
//! * [`harness`]: metrics, optimizers, training and multi-seed sweeps.

pub mod attention;
pub mod backbones;
pub mod datapipe;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod harness;
mod kernels;
mod linalg;
pub mod nn;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Activation, Graph, Mode, Padding, PoolKind, Var};
pub use params::{Init, ParamBuilder, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
