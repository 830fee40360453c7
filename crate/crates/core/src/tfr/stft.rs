use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use super::{Spectrogram, TFGrid};
use crate::dsp::{frame_count, is_power_of_two, Fft, TimeSeries, Window};
use crate::{Error, Matrix, Result};

pub(crate) fn check_stft_args(window_len: usize, hop: usize, n_fft: usize) -> Result<()> {
    if hop == 0 {
        return Err(Error::invalid("hop must be at least 1"));
    }
    if !is_power_of_two(n_fft) {
        return Err(Error::invalid(alloc::format!(
            "n_fft {n_fft} is not a power of two"
        )));
    }
    if n_fft < window_len {
        return Err(Error::invalid(alloc::format!(
            "n_fft {n_fft} shorter than window {window_len}"
        )));
    }
    Ok(())
}

/// Run the STFT with several tapers of equal length in a single pass over
/// the frames. Returns one row-major `n_frames × n_bins` buffer per taper.
pub(crate) fn multi_stft(
    x: &[f64],
    tapers: &[&[f64]],
    hop: usize,
    n_fft: usize,
) -> Result<Vec<Vec<Complex64>>> {
    let l = tapers[0].len();
    debug_assert!(tapers.iter().all(|t| t.len() == l));
    check_stft_args(l, hop, n_fft)?;
    let plan = Fft::new(n_fft)?;
    let n_frames = frame_count(x.len(), hop);
    let n_bins = n_fft / 2 + 1;
    let c = (l - 1) as f64 / 2.0;
    // e^{+j2πkc/N} moves the phase reference from the frame start to the center
    let rotation: Vec<Complex64> = (0..n_bins)
        .map(|k| {
            let phase = 2.0 * PI * libm::fmod(k as f64 * c, n_fft as f64) / n_fft as f64;
            Complex64::new(libm::cos(phase), libm::sin(phase))
        })
        .collect();

    let mut out: Vec<Vec<Complex64>> = tapers
        .iter()
        .map(|_| alloc::vec![Complex64::new(0.0, 0.0); n_frames * n_bins])
        .collect();
    let mut buf = alloc::vec![Complex64::new(0.0, 0.0); n_fft];
    for m in 0..n_frames {
        let start = m * hop;
        let avail = x.len().saturating_sub(start).min(l);
        for (taper, dst) in tapers.iter().zip(out.iter_mut()) {
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            for n in 0..avail {
                buf[n].re = x[start + n] * taper[n];
            }
            plan.process(&mut buf);
            let row = &mut dst[m * n_bins..(m + 1) * n_bins];
            for k in 0..n_bins {
                row[k] = buf[k] * rotation[k];
            }
        }
    }
    Ok(out)
}

pub(crate) fn grid_axes(
    len: usize,
    fs: f64,
    window_len: usize,
    hop: usize,
    n_fft: usize,
) -> (Vec<f64>, Vec<f64>) {
    let c = (window_len - 1) as f64 / 2.0;
    let times = (0..frame_count(len, hop))
        .map(|m| ((m * hop) as f64 + c) / fs)
        .collect();
    let freqs = (0..n_fft / 2 + 1)
        .map(|k| k as f64 * fs / n_fft as f64)
        .collect();
    (times, freqs)
}

pub(crate) fn make_grid(
    ts: &TimeSeries,
    values: Vec<Complex64>,
    window_len: usize,
    hop: usize,
    n_fft: usize,
) -> TFGrid {
    let (times_s, freqs_hz) = grid_axes(ts.len(), ts.sample_rate_hz(), window_len, hop, n_fft);
    TFGrid {
        values,
        times_s,
        freqs_hz,
        sample_rate_hz: ts.sample_rate_hz(),
        window_len,
        hop,
        n_fft,
    }
}

/// Short-time Fourier transform with center-referenced phase.
pub fn stft(ts: &TimeSeries, window: &Window, hop: usize, n_fft: usize) -> Result<TFGrid> {
    let mut values = multi_stft(ts.samples(), &[window.coefficients()], hop, n_fft)?;
    Ok(make_grid(
        ts,
        values.pop().unwrap_or_default(),
        window.len(),
        hop,
        n_fft,
    ))
}

/// `|V|²` per cell.
pub fn spectrogram(g: &TFGrid) -> Spectrogram {
    let energy = Matrix::from_vec(
        g.n_frames(),
        g.n_bins(),
        g.values.iter().map(|v| v.norm_sqr()).collect(),
    )
    .expect("grid values match its axes");
    Spectrogram::like(g, energy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{make_window, WindowKind};
    use alloc::vec;

    #[test]
    fn rejects_bad_sizes() {
        let ts = TimeSeries::new(vec![1.0; 64], 1.0).unwrap();
        let w = make_window(WindowKind::Hann, 16).unwrap();
        assert!(matches!(
            stft(&ts, &w, 4, 8),
            Err(Error::InvalidArgument(_))
        ));
        assert!(stft(&ts, &w, 4, 24).is_err());
        assert!(stft(&ts, &w, 0, 16).is_err());
        assert!(stft(&ts, &w, 4, 32).is_ok());
    }

    #[test]
    fn spectrogram_of_single_entry() {
        let g = TFGrid {
            values: vec![Complex64::new(3.0, 4.0)],
            times_s: vec![0.0],
            freqs_hz: vec![0.0],
            sample_rate_hz: 1.0,
            window_len: 2,
            hop: 1,
            n_fft: 0,
        };
        assert_eq!(spectrogram(&g).energy.get(0, 0), 25.0);
    }

    #[test]
    fn axes() {
        let ts = TimeSeries::new(vec![0.0; 100], 1000.0).unwrap();
        let w = make_window(WindowKind::Hann, 16).unwrap();
        let g = stft(&ts, &w, 8, 32).unwrap();
        assert_eq!(g.n_bins(), 17);
        assert_eq!(g.n_frames(), 13);
        assert!(g.times_s.windows(2).all(|p| p[1] > p[0]));
        assert_eq!(g.freqs_hz[16], 500.0);
        assert!((g.times_s[0] - 7.5e-3).abs() < 1e-15);
    }
}
