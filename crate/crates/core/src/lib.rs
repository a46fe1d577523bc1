//! Masked autoencoder for multi-sensor pixel timeseries.
//!
//! The crate covers the whole pipeline: the data model and file formats
//! ([`dataio`]), grouping of channels into tokens ([`tokenizer`]), masking
//! strategies ([`masking`]), the encoder-decoder transformer ([`model`]),
//! self-supervised pre-training ([`pretrain`]) and downstream evaluation
//! ([`downstream`]). [`numcore`] is the small autodiff and optimizer core
//! everything is built on.

pub mod cli;
pub mod dataio;
pub mod downstream;
pub mod error;
pub mod masking;
pub mod model;
pub mod numcore;
pub mod pretrain;
pub mod tokenizer;

pub use error::{Error, FormatError, Result};
