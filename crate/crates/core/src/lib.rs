//! Fringe-pattern normalisation with V-net style encoder-decoder networks.
//!
//! The crate covers the whole pipeline: deterministic synthetic scenes
//! ([`synth`]), patch datasets ([`dataset`]), the networks and their hand-written
//! backward passes ([`model`], [`ops`], [`nn`]), training ([`train`]),
//! sliding-window reconstruction of full images ([`recon`]) and error metrics
//! ([`metrics`]).

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
pub mod pipeline;
pub mod recon;
pub mod synth;
pub mod tensor;
pub mod threads;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Dtype, Real, Tensor};
