//! Differentially private SGD on a structured two-patch data model.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerical
//! pieces:
//!
//! * [`data`]: orthogonal feature banks, the majority/minority two-patch
//!   distribution, its class/group conditionals and the rotated
//!   pretrain/finetune pair.
//! * [`network`]: the two-layer ReLU CNN with fixed `1/m` second layer,
//!   softmax cross-entropy and closed-form per-sample gradients.
//! * [`optim`]: clipping, subsampling, the noisy update and the training loop,
//!   plus a rough `(epsilon, alpha) -> sigma_n` calibrator.
//! * [`attack`]: projected gradient ascent in the l2 / l-infinity balls.
//! * [`theory`]: feature-to-noise ratios, test-loss bound shapes with unit
//!   constants, and Monte Carlo loss estimates.
//!
//! IO, configuration and the experiment drivers live in the `dpfl-lab` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod attack;
pub mod data;
mod error;
pub mod math;
pub mod network;
pub mod optim;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
