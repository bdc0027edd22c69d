//! EEG-to-text sequence modeling at desk scale.
//!
//! The pipeline: 31-channel EEG preprocessing (band-pass + notch IIR) and
//! windowed statistical features at 100 Hz ([`signal`]), kernel-PCA
//! reduction with delta/delta-delta augmentation ([`reduce`]), a
//! transformer encoder-decoder trained with cross-entropy/Adam on a
//! from-scratch autodiff tape ([`model`], [`numerics`]), beam-search
//! decoding with 4-gram shallow fusion ([`decode`], [`lm`]), and word
//! error rate evaluation over growing vocabulary subsets ([`metrics`],
//! [`pipeline`]).
//!
//! Every capability has a runnable example under `examples/`; the `c2t`
//! binary wires the same functions into a subcommand CLI.

#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod data;
pub mod decode;
pub mod error;
pub mod lm;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod reduce;
pub mod signal;

pub use error::{Error, Result};
