//! Single-word auditory attention decoding toolkit.
//!
//! Surrogate EEG generation, the preprocessing chain, ERP-aware data
//! augmentation, a compact depthwise/separable CNN with its own reverse-mode
//! engine, 8-fold and leave-one-subject-out validation with paired permutation
//! statistics, and a linear envelope-reconstruction baseline.

pub mod data;
pub mod augment;
pub mod baseline;
pub mod dsp;
pub mod eegnet;
pub mod error;
pub mod eval;
pub mod io;
pub mod nn;
pub mod par;
pub mod rng;
pub mod synth;

pub use data::{Epoch, EpochId, EpochSet, Label, Origin, Paradigm};
pub use error::{Error, Result};
pub use rng::RngStream;
