//! Interactive-predictive sequence-to-sequence core.
//!
//! Everything here is allocation-only and IO-free: dense numerics with
//! reverse-mode gradients, the attention encoder–decoder, plain and
//! prefix-constrained beam search, the interactive session state machine,
//! offline and online learning, and the simulated user.
#![no_std]

extern crate alloc;

pub mod decode;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod learn;
pub mod model;
pub mod params;
pub mod session;
pub mod sim;
pub mod tensor;
pub mod vocab;

pub use error::{Error, Result};
