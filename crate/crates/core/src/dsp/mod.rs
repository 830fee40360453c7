//! Windows, framing and the discrete Fourier transforms every STFT variant
//! is built from.

mod fourier;
mod frame;
mod window;

pub use fourier::{dft_naive, dft_naive_bin, fft, fft_real, is_power_of_two, Fft};
pub use frame::{frame_count, frame_signal, FrameSet};
pub use window::{make_window, Window, WindowKind};

use alloc::vec::Vec;

use crate::{Error, Result};

pub use num_complex::Complex64;

/// Uniformly sampled real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    samples: Vec<f64>,
    sample_rate_hz: f64,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("time series must hold at least one sample"));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::invalid(alloc::format!(
                "sample rate {sample_rate_hz} is not positive"
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(alloc::format!("time series sample {i}")));
        }
        Ok(TimeSeries {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Sum of squared samples.
pub fn energy(ts: &TimeSeries) -> f64 {
    ts.samples.iter().map(|x| x * x).sum()
}
