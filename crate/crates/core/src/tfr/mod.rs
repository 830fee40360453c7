//! The five STFT variants: plain non-overlapping and overlapping STFT,
//! their reassigned counterparts, and Fourier synchrosqueezing (with its
//! inverse).
//!
//! Conventions shared by every transform here:
//!
//! * frame `m` starts at sample `m * hop` and its time stamp is the window
//!   center, `(m * hop + (L - 1) / 2) / fs`;
//! * the phase of each coefficient is referenced to the window center,
//!   `V[m, k] = Σ_n x[m·hop + n] w[n] e^{-j2πk(n - c)/N}`;
//! * only the one-sided half `k = 0..=N/2` is stored.

mod reassign;
mod sst;
mod stft;

pub use reassign::{reassigned_spectrogram, reassignment_operators, ReassignmentField};
pub use sst::{reconstruct_from_sst, synchrosqueeze};
pub use stft::{spectrogram, stft};

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{make_window, TimeSeries, WindowKind};
use crate::{Error, Matrix, Result};

/// Complex one-sided time-frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TFGrid {
    /// Row-major, frame then bin.
    pub values: Vec<Complex64>,
    pub times_s: Vec<f64>,
    pub freqs_hz: Vec<f64>,
    pub sample_rate_hz: f64,
    pub window_len: usize,
    pub hop: usize,
    pub n_fft: usize,
}

impl TFGrid {
    pub fn n_frames(&self) -> usize {
        self.times_s.len()
    }

    pub fn n_bins(&self) -> usize {
        self.freqs_hz.len()
    }

    #[inline]
    pub fn at(&self, m: usize, k: usize) -> Complex64 {
        self.values[m * self.n_bins() + k]
    }

    pub fn frame(&self, m: usize) -> &[Complex64] {
        let nb = self.n_bins();
        &self.values[m * nb..(m + 1) * nb]
    }
}

/// Nonnegative energy over the same axes as a [`TFGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// `n_frames × n_bins`.
    pub energy: Matrix,
    pub times_s: Vec<f64>,
    pub freqs_hz: Vec<f64>,
    pub sample_rate_hz: f64,
    pub window_len: usize,
    pub hop: usize,
    pub n_fft: usize,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.energy.rows()
    }

    pub fn n_bins(&self) -> usize {
        self.energy.cols()
    }

    pub fn total_energy(&self) -> f64 {
        self.energy.sum()
    }

    /// Energy summed over time for every frequency bin.
    pub fn frequency_marginal(&self) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.n_bins()];
        for m in 0..self.n_frames() {
            for (acc, e) in out.iter_mut().zip(self.energy.row(m)) {
                *acc += e;
            }
        }
        out
    }

    pub(crate) fn like(g: &TFGrid, energy: Matrix) -> Self {
        Spectrogram {
            energy,
            times_s: g.times_s.clone(),
            freqs_hz: g.freqs_hz.clone(),
            sample_rate_hz: g.sample_rate_hz,
            window_len: g.window_len,
            hop: g.hop,
            n_fft: g.n_fft,
        }
    }
}

/// Transform variants, named by their method codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "STFT")]
    Stft,
    #[serde(rename = "STFT-O")]
    StftO,
    #[serde(rename = "STFT-R")]
    StftR,
    #[serde(rename = "STFT-OR")]
    StftOR,
    #[serde(rename = "STFT-S")]
    StftS,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Stft,
        Method::StftO,
        Method::StftR,
        Method::StftOR,
        Method::StftS,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Method::Stft => "STFT",
            Method::StftO => "STFT-O",
            Method::StftR => "STFT-R",
            Method::StftOR => "STFT-OR",
            Method::StftS => "STFT-S",
        }
    }

    /// Lower-case form used on the command line and in directory names.
    pub fn slug(self) -> &'static str {
        match self {
            Method::Stft => "stft",
            Method::StftO => "stft-o",
            Method::StftR => "stft-r",
            Method::StftOR => "stft-or",
            Method::StftS => "stft-s",
        }
    }

    pub fn overlapping(self) -> bool {
        matches!(self, Method::StftO | Method::StftOR | Method::StftS)
    }

    pub fn hop(self, cfg: &TfrConfig) -> usize {
        if self.overlapping() {
            cfg.overlap_hop
        } else {
            cfg.hop
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.code().eq_ignore_ascii_case(s) || m.slug().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(alloc::format!("unknown method {s:?}")))
    }
}

/// Transform parameters. The defaults give 9.77 Hz bins at 10 kHz and 75 %
/// overlap for the overlapping variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TfrConfig {
    pub window: WindowKind,
    pub window_len: usize,
    pub n_fft: usize,
    /// Hop of the non-overlapping variants.
    pub hop: usize,
    /// Hop of the overlapping variants, including synchrosqueezing.
    pub overlap_hop: usize,
    /// Reassignment mask threshold relative to the grid maximum magnitude.
    pub threshold: f64,
}

impl Default for TfrConfig {
    fn default() -> Self {
        TfrConfig {
            window: WindowKind::Hann,
            window_len: 1024,
            n_fft: 1024,
            hop: 1024,
            overlap_hop: 256,
            threshold: 1e-4,
        }
    }
}

/// Compute one of the five variant spectrograms.
pub fn transform(ts: &TimeSeries, method: Method, cfg: &TfrConfig) -> Result<Spectrogram> {
    let window = make_window(cfg.window, cfg.window_len)?;
    let hop = method.hop(cfg);
    match method {
        Method::Stft | Method::StftO => Ok(spectrogram(&stft(ts, &window, hop, cfg.n_fft)?)),
        Method::StftR | Method::StftOR => {
            reassigned_spectrogram(ts, &window, hop, cfg.n_fft, cfg.threshold)
        }
        Method::StftS => Ok(spectrogram(&synchrosqueeze(
            ts,
            &window,
            hop,
            cfg.n_fft,
            cfg.threshold,
        )?)),
    }
}

pub(crate) fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(alloc::format!(
            "threshold {threshold} outside (0, 1)"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::PI;

    fn tone(f: f64, n: usize) -> TimeSeries {
        TimeSeries::new(
            (0..n)
                .map(|i| libm::cos(2.0 * PI * f * i as f64 / 10_000.0))
                .collect(),
            10_000.0,
        )
        .unwrap()
    }

    #[test]
    fn method_codes_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.code().parse::<Method>().unwrap(), m);
            assert_eq!(m.slug().parse::<Method>().unwrap(), m);
        }
        assert!(matches!(
            "stft-x".parse::<Method>(),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn overlap_has_four_times_the_frames() {
        let cfg = TfrConfig::default();
        let ts = tone(300.0, 8192);
        let plain = transform(&ts, Method::Stft, &cfg).unwrap();
        let over = transform(&ts, Method::StftO, &cfg).unwrap();
        assert_eq!(plain.n_frames(), 8);
        assert_eq!(over.n_frames(), 4 * plain.n_frames());
        assert_eq!(plain.n_bins(), 513);
    }

    #[test]
    fn zeros_give_zero_spectrograms() {
        let cfg = TfrConfig::default();
        let ts = TimeSeries::new(vec![0.0; 4096], 10_000.0).unwrap();
        for m in Method::ALL {
            let s = transform(&ts, m, &cfg).unwrap();
            assert!(s.energy.as_slice().iter().all(|&e| e == 0.0), "{m}");
        }
    }

    #[test]
    fn reassigned_shares_axes_with_plain() {
        let cfg = TfrConfig::default();
        let ts = tone(1234.5, 8192);
        let plain = transform(&ts, Method::Stft, &cfg).unwrap();
        let re = transform(&ts, Method::StftR, &cfg).unwrap();
        assert_eq!(plain.times_s, re.times_s);
        assert_eq!(plain.freqs_hz, re.freqs_hz);
    }

    #[test]
    fn transforms_are_bit_deterministic() {
        let cfg = TfrConfig::default();
        let ts = tone(777.7, 6000);
        for m in Method::ALL {
            assert_eq!(
                transform(&ts, m, &cfg).unwrap(),
                transform(&ts, m, &cfg).unwrap()
            );
        }
    }
}
