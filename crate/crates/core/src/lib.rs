//! Desk-scale training laboratory for double-reverse self-knowledge
//! distillation.

// Index-based loops mirror the written-out math in the layer kernels.
#![allow(clippy::needless_range_loop)]
//!
//! The crate provides a self-contained differentiable network core (dense
//! f64 tensors, an MLP and a small CNN with hand-coded backward passes),
//! the probability-space losses used by distillation-style regularizers,
//! adaptive weight assignment, Adam with step decay, five training
//! procedures (plain cross entropy, label smoothing, teacher-free KD,
//! last-batch self-distillation, and the double-reverse combination of
//! offline and last-batch distillation), and a data layer with an IDX
//! reader plus a synthetic speckled-shape generator for few-shot noisy
//! classification experiments.

pub mod awa;
pub mod data;
pub mod distill;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod optim;
pub mod record;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
