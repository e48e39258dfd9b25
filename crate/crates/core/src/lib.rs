//! Trustable LSTM-autoencoder classifiers for aggression detection.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tensor`]),
//! recurrent layers, the baseline and proposed classifiers ([`models`]), a
//! threshold-rejecting softmax head ([`wisdomnet`]), a TRAC-2 style data
//! pipeline with corpus augmentation, and rejection-aware metrics.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod synthetic;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod run;
pub mod tensor;
pub mod text;
pub mod wisdomnet;

pub use error::{Result, TlaError};
