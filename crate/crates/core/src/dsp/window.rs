use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
    Gaussian,
    Rectangular,
}

/// A sampled analysis window with the two auxiliary windows reassignment
/// needs.
///
/// Time is measured in samples relative to the window center
/// `c = (L - 1) / 2`:
///
/// * `time_weighted[n] = (n - c) * w[n]`
/// * `derivative[n] = w'(n)`, the analytic derivative of the window formula
///   in units of 1/sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    kind: WindowKind,
    coefficients: Vec<f64>,
    derivative: Vec<f64>,
    time_weighted: Vec<f64>,
}

impl Window {
    pub fn kind(&self) -> WindowKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn derivative(&self) -> &[f64] {
        &self.derivative
    }

    pub fn time_weighted(&self) -> &[f64] {
        &self.time_weighted
    }

    /// Offset of the window center in samples, `(L - 1) / 2`.
    pub fn center(&self) -> f64 {
        (self.len() - 1) as f64 / 2.0
    }

    /// `Σ w[n]²`.
    pub fn energy(&self) -> f64 {
        self.coefficients.iter().map(|w| w * w).sum()
    }

    /// Window value at the center sample, linearly interpolated for even
    /// lengths.
    pub fn center_value(&self) -> f64 {
        let l = self.len();
        if l % 2 == 1 {
            self.coefficients[l / 2]
        } else {
            0.5 * (self.coefficients[l / 2 - 1] + self.coefficients[l / 2])
        }
    }
}

/// Build a window of the given kind and length.
///
/// Only the first half is evaluated; the second half is mirrored so that
/// `w` is exactly symmetric and `tw`, `dw` exactly antisymmetric.
pub fn make_window(kind: WindowKind, length: usize) -> Result<Window> {
    if length < 2 {
        return Err(Error::invalid(alloc::format!("window length {length} < 2")));
    }
    let l = length;
    let c = (l - 1) as f64 / 2.0;
    let span = (l - 1) as f64;
    let sigma = l as f64 / 6.0;

    let eval = |n: usize| -> (f64, f64) {
        let x = n as f64;
        match kind {
            WindowKind::Hann => {
                let phase = 2.0 * PI * x / span;
                (0.5 - 0.5 * libm::cos(phase), PI / span * libm::sin(phase))
            }
            WindowKind::Gaussian => {
                let u = (x - c) / sigma;
                let w = libm::exp(-0.5 * u * u);
                (w, -(x - c) / (sigma * sigma) * w)
            }
            WindowKind::Rectangular => (1.0, 0.0),
        }
    };

    let mut coefficients = alloc::vec![0.0; l];
    let mut derivative = alloc::vec![0.0; l];
    let mut time_weighted = alloc::vec![0.0; l];
    for n in 0..l.div_ceil(2) {
        let mirror = l - 1 - n;
        let (w, dw) = eval(n);
        let t = n as f64 - c;
        coefficients[n] = w;
        coefficients[mirror] = w;
        derivative[n] = dw;
        time_weighted[n] = t * w;
        if mirror != n {
            derivative[mirror] = -dw;
            time_weighted[mirror] = -t * w;
        } else {
            // odd length: the center sample is its own mirror
            derivative[n] = 0.0;
            time_weighted[n] = 0.0;
        }
    }
    Ok(Window {
        kind,
        coefficients,
        derivative,
        time_weighted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hann_four() {
        let w = make_window(WindowKind::Hann, 4).unwrap();
        let expected = [0.0, 0.75, 0.75, 0.0];
        for (a, b) in w.coefficients().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn rectangular_is_flat() {
        let w = make_window(WindowKind::Rectangular, 8).unwrap();
        assert!(w.coefficients().iter().all(|&v| v == 1.0));
        assert!(w.derivative().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hann_endpoints_vanish() {
        for l in [2, 3, 16, 1023, 1024] {
            let w = make_window(WindowKind::Hann, l).unwrap();
            assert!(w.coefficients()[0].abs() < 1e-15);
            assert!(w.coefficients()[l - 1].abs() < 1e-15);
        }
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            make_window(WindowKind::Hann, 1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(make_window(WindowKind::Gaussian, 0).is_err());
    }

    #[test]
    fn symmetry_and_auxiliary_windows() {
        for kind in [
            WindowKind::Hann,
            WindowKind::Gaussian,
            WindowKind::Rectangular,
        ] {
            for l in [2, 5, 64, 1024, 1025] {
                let w = make_window(kind, l).unwrap();
                let c = w.center();
                for n in 0..l {
                    let m = l - 1 - n;
                    assert!((w.coefficients()[n] - w.coefficients()[m]).abs() <= 1e-12);
                    assert_eq!(w.time_weighted()[n], (n as f64 - c) * w.coefficients()[n]);
                    assert!((w.time_weighted()[n] + w.time_weighted()[m]).abs() <= 1e-12);
                    assert!((w.derivative()[n] + w.derivative()[m]).abs() <= 1e-12);
                }
            }
        }
    }

    // The derivative window must be analytic; compare against a fine central
    // difference of the closed-form window.
    #[test]
    fn derivative_matches_formula_slope() {
        let l = 257;
        let span = (l - 1) as f64;
        let c = span / 2.0;
        let sigma = l as f64 / 6.0;
        let hann = |x: f64| 0.5 - 0.5 * libm::cos(2.0 * PI * x / span);
        let gauss = |x: f64| libm::exp(-0.5 * ((x - c) / sigma).powi(2));
        let h = 1e-5;
        let wh = make_window(WindowKind::Hann, l).unwrap();
        let wg = make_window(WindowKind::Gaussian, l).unwrap();
        for n in 0..l {
            let x = n as f64;
            let fd_h = (hann(x + h) - hann(x - h)) / (2.0 * h);
            let fd_g = (gauss(x + h) - gauss(x - h)) / (2.0 * h);
            assert!((wh.derivative()[n] - fd_h).abs() < 1e-8);
            assert!((wg.derivative()[n] - fd_g).abs() < 1e-8);
        }
    }
}
