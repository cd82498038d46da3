//! Two-stage prosody-adapting movie dubbing.
//!
//! Stage I trains an acoustic system (text encoder, acoustic style encoder,
//! AdaIN decoder) to reconstruct mel spectrograms from phonemes, ground-truth
//! durations and prosody. Stage II freezes it and trains a prosody-adapting
//! system that reads the script and the silent clip's emotion and lip
//! features, and predicts phoneme pitch, energy, durations and a prosodic
//! style vector sampled by a small conditional diffusion model.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the bottom of this file fix the single-precision types the CLI uses.

pub mod acoustic;
pub mod adapting;
pub mod alignment;
pub mod augment;
pub mod autograd;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod matrix;
pub mod nn;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod signal;
pub mod training;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scalar::Scalar;

/// Single-precision instantiations used by the command-line tool.
pub type Real = f32;
pub type Mat = Matrix<Real>;
pub type Wave = signal::Waveform<Real>;
pub type Mel = signal::MelSpectrogram<Real>;
pub type Acoustic = acoustic::AcousticModel<Real>;
pub type Prosodic = adapting::ProsodyModel<Real>;
pub type DubCheckpoint = training::Checkpoint<Real>;
