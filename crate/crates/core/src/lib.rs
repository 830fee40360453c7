//! Time-frequency motor fault diagnosis, algorithmic core.
//!
//! Everything in this crate is pure computation over owned buffers: window
//! design and spectral transforms ([`dsp`]), the five STFT variants
//! ([`tfr`]), spectrogram rasterization ([`imaging`]), a synthetic
//! motor-current generator ([`motorsim`]), a small convolutional classifier
//! ([`cnn`]) and stratified cross-validation with its metrics ([`eval`]).
//!
//! The crate is `no_std` and only needs `alloc`. File formats, PNG encoding
//! and the command line live in the `tfmd` companion crate.

#![no_std]
#![forbid(unsafe_op_in_unsafe_fn)]

extern crate alloc;

#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod cnn;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod matrix;
pub mod motorsim;
pub mod seed;
pub mod tfr;

pub use error::{Error, Result};
pub use matrix::Matrix;
