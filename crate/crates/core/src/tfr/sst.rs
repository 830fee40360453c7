use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use super::reassign::{grid_and_field, nearest_bin};
use super::TFGrid;
use crate::dsp::{TimeSeries, Window};
use crate::{Error, Result};

/// Fourier synchrosqueezing: each masked coefficient is added, as a complex
/// number, to the bin nearest its instantaneous-frequency estimate within
/// the same frame. Unmasked coefficients are dropped.
pub fn synchrosqueeze(
    ts: &TimeSeries,
    window: &Window,
    hop: usize,
    n_fft: usize,
    threshold: f64,
) -> Result<TFGrid> {
    let (grid, field) = grid_and_field(ts, window, hop, n_fft, threshold)?;
    let n_bins = grid.n_bins();
    let mut values = alloc::vec![Complex64::new(0.0, 0.0); grid.values.len()];
    for m in 0..grid.n_frames() {
        for k in 0..n_bins {
            if field.is_masked(m, k) {
                let dk = nearest_bin(&grid, field.omega_hat.get(m, k));
                values[m * n_bins + dk] += grid.at(m, k);
            }
        }
    }
    Ok(TFGrid { values, ..grid })
}

/// Weighted one-sided bin sum that inverts a center-referenced spectrum at
/// the window center: DC and Nyquist count once, every other bin twice.
fn center_sum(frame: &[Complex64]) -> Complex64 {
    let last = frame.len() - 1;
    frame
        .iter()
        .enumerate()
        .map(|(k, &v)| if k == 0 || k == last { v } else { v * 2.0 })
        .sum()
}

/// Invert a synchrosqueezed grid at the frame centers.
///
/// `x̂(t_m) = Re{Σ_k T[m, k]} / Re{Σ_k W[k]}` with the weighted sum of
/// [`center_sum`]. The denominator is the same sum over the window's own
/// spectrum, i.e. its value at the center, which makes a pure tone
/// reconstruct with unit gain. The returned series is sampled at
/// `fs / hop` and its first sample sits at `(L - 1) / 2 / fs` seconds.
pub fn reconstruct_from_sst(g: &TFGrid, window: &Window) -> Result<TimeSeries> {
    if window.len() != g.window_len {
        return Err(Error::invalid(alloc::format!(
            "window length {} does not match grid window length {}",
            window.len(),
            g.window_len
        )));
    }
    let n_fft = g.n_fft;
    let c = window.center();
    let mut w_frame = alloc::vec![Complex64::new(0.0, 0.0); n_fft];
    for (dst, &w) in w_frame.iter_mut().zip(window.coefficients()) {
        dst.re = w;
    }
    crate::dsp::Fft::new(n_fft)?.process(&mut w_frame);
    let w_spec: Vec<Complex64> = (0..g.n_bins())
        .map(|k| {
            let phase = 2.0 * PI * libm::fmod(k as f64 * c, n_fft as f64) / n_fft as f64;
            w_frame[k] * Complex64::new(libm::cos(phase), libm::sin(phase))
        })
        .collect();
    let norm = center_sum(&w_spec).re / n_fft as f64;
    if !(norm.abs() > 1e-12) {
        return Err(Error::InvalidWindow(alloc::string::String::from(
            "window vanishes at its center",
        )));
    }
    let samples = (0..g.n_frames())
        .map(|m| center_sum(g.frame(m)).re / (n_fft as f64 * norm))
        .collect();
    TimeSeries::new(samples, g.sample_rate_hz / g.hop as f64)
}
