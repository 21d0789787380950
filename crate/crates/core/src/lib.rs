//! Adaptive spiking neurons, analog-to-spiking conversion and clock-driven
//! simulation of converted networks.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arousal;
pub mod data;
pub mod error;
pub mod graph;
pub mod io;
pub mod neuron;
pub mod sim;
pub mod spiking;
pub mod train;
pub mod transfer;

pub use error::{Error, Result};
