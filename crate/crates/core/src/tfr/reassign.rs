use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use super::stft::{make_grid, multi_stft};
use super::{check_threshold, Spectrogram, TFGrid};
use crate::dsp::{TimeSeries, Window};
use crate::{Matrix, Result};

/// Reassignment coordinates for every cell of a grid.
///
/// Cells outside the mask keep their own coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReassignmentField {
    /// Reassigned time in seconds.
    pub t_hat: Matrix,
    /// Reassigned angular frequency in rad/s.
    pub omega_hat: Matrix,
    /// Row-major, frame then bin.
    pub mask: Vec<bool>,
}

impl ReassignmentField {
    pub fn n_frames(&self) -> usize {
        self.t_hat.rows()
    }

    pub fn n_bins(&self) -> usize {
        self.t_hat.cols()
    }

    pub fn is_masked(&self, m: usize, k: usize) -> bool {
        self.mask[m * self.n_bins() + k]
    }
}

/// The plain grid together with its reassignment field.
pub(crate) fn grid_and_field(
    ts: &TimeSeries,
    window: &Window,
    hop: usize,
    n_fft: usize,
    threshold: f64,
) -> Result<(TFGrid, ReassignmentField)> {
    check_threshold(threshold)?;
    let fs = ts.sample_rate_hz();
    let mut stfts = multi_stft(
        ts.samples(),
        &[
            window.coefficients(),
            window.time_weighted(),
            window.derivative(),
        ],
        hop,
        n_fft,
    )?;
    let v_dw = stfts.pop().unwrap_or_default();
    let v_tw = stfts.pop().unwrap_or_default();
    let v_w = stfts.pop().unwrap_or_default();
    let grid = make_grid(ts, v_w, window.len(), hop, n_fft);

    let (n_frames, n_bins) = (grid.n_frames(), grid.n_bins());
    let peak = grid.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let cutoff = threshold * peak;
    let mut t_hat = Matrix::zeros(n_frames, n_bins);
    let mut omega_hat = Matrix::zeros(n_frames, n_bins);
    let mut mask = alloc::vec![false; n_frames * n_bins];
    for m in 0..n_frames {
        let t_m = grid.times_s[m];
        for k in 0..n_bins {
            let i = m * n_bins + k;
            let v = grid.values[i];
            let omega_k = 2.0 * PI * grid.freqs_hz[k];
            if v.norm() > cutoff {
                let (rt, rd): (Complex64, Complex64) = (v_tw[i] / v, v_dw[i] / v);
                t_hat.set(m, k, t_m + rt.re / fs);
                omega_hat.set(m, k, omega_k - rd.im * fs);
                mask[i] = true;
            } else {
                t_hat.set(m, k, t_m);
                omega_hat.set(m, k, omega_k);
            }
        }
    }
    Ok((
        grid,
        ReassignmentField {
            t_hat,
            omega_hat,
            mask,
        },
    ))
}

/// Local time and frequency centroids of the spectrogram energy.
///
/// `t̂ = t_m + Re{V_tw / V_w} / fs` and `ω̂ = ω_k − Im{V_dw / V_w} · fs`
/// wherever `|V_w| > threshold · max|V_w|`.
pub fn reassignment_operators(
    ts: &TimeSeries,
    window: &Window,
    hop: usize,
    n_fft: usize,
    threshold: f64,
) -> Result<ReassignmentField> {
    grid_and_field(ts, window, hop, n_fft, threshold).map(|(_, f)| f)
}

/// Nearest grid cell to a reassigned point, clamped to the grid edges.
pub(crate) fn nearest_cell(g: &TFGrid, t: f64, omega: f64) -> (usize, usize) {
    let fs = g.sample_rate_hz;
    let c = (g.window_len - 1) as f64 / 2.0;
    let frame = libm::round((t * fs - c) / g.hop as f64);
    let bin = libm::round(omega / (2.0 * PI) * g.n_fft as f64 / fs);
    (
        clamp_index(frame, g.n_frames()),
        clamp_index(bin, g.n_bins()),
    )
}

pub(crate) fn nearest_bin(g: &TFGrid, omega: f64) -> usize {
    let bin = libm::round(omega / (2.0 * PI) * g.n_fft as f64 / g.sample_rate_hz);
    clamp_index(bin, g.n_bins())
}

fn clamp_index(x: f64, len: usize) -> usize {
    if x.is_nan() || x <= 0.0 {
        0
    } else if x >= (len - 1) as f64 {
        len - 1
    } else {
        x as usize
    }
}

/// Spectrogram whose masked cells are moved to their reassigned position.
///
/// Energy is scattered in frame-then-bin order, so the result is
/// independent of any parallelism upstream and the total is preserved.
pub fn reassigned_spectrogram(
    ts: &TimeSeries,
    window: &Window,
    hop: usize,
    n_fft: usize,
    threshold: f64,
) -> Result<Spectrogram> {
    let (grid, field) = grid_and_field(ts, window, hop, n_fft, threshold)?;
    let (n_frames, n_bins) = (grid.n_frames(), grid.n_bins());
    let mut out = Matrix::zeros(n_frames, n_bins);
    for m in 0..n_frames {
        for k in 0..n_bins {
            let e = grid.at(m, k).norm_sqr();
            let (dm, dk) = if field.is_masked(m, k) {
                nearest_cell(&grid, field.t_hat.get(m, k), field.omega_hat.get(m, k))
            } else {
                (m, k)
            };
            let cell = &mut out.as_mut_slice()[dm * n_bins + dk];
            *cell += e;
        }
    }
    Ok(Spectrogram::like(&grid, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{make_window, WindowKind};
    use crate::Error;
    use alloc::vec;

    #[test]
    fn threshold_must_be_open_unit_interval() {
        let ts = TimeSeries::new(vec![1.0; 64], 1.0).unwrap();
        let w = make_window(WindowKind::Hann, 16).unwrap();
        for bad in [0.0, 1.0, -0.1, 2.0, f64::NAN] {
            assert!(matches!(
                reassignment_operators(&ts, &w, 4, 16, bad),
                Err(Error::InvalidArgument(_))
            ));
        }
    }

    #[test]
    fn zero_signal_has_empty_mask() {
        let ts = TimeSeries::new(vec![0.0; 256], 100.0).unwrap();
        let w = make_window(WindowKind::Gaussian, 32).unwrap();
        let f = reassignment_operators(&ts, &w, 8, 32, 1e-4).unwrap();
        assert!(f.mask.iter().all(|&m| !m));
        let s = reassigned_spectrogram(&ts, &w, 8, 32, 1e-4).unwrap();
        assert_eq!(s.total_energy(), 0.0);
    }
}
