//! Deep belief networks on spintronic p-bits and domain-wall synapses.
//!
//! Layers, bottom up: [`pbit`] models the stochastic neuron, [`dwm`] the
//! multi-state weight cell, [`crossbar`] the resistive array that turns cell
//! states into neuron currents, [`rbm`] a single restricted Boltzmann machine
//! trained by contrastive divergence, and [`dbn`] the stacked network with its
//! readout and evaluation. [`dataio`] reads and writes IDX image files and
//! [`checkpoint`] persists trained models.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod crossbar;
pub mod dataio;
pub mod dbn;
pub mod dwm;
pub mod error;
pub mod pbit;
mod quad;
pub mod rbm;
pub mod rng;

pub use error::{Error, Result};
