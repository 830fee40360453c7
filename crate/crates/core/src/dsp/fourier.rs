use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::{Error, Result};

pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// Direct `O(N²)` evaluation of `X[k] = Σ x[n] e^{-j2πkn/N}`.
///
/// Kept as the reference the fast transform is checked against.
pub fn dft_naive(frame: &[f64]) -> Vec<Complex64> {
    let n = frame.len();
    let table: Vec<Complex64> = (0..n)
        .map(|j| {
            let phase = -2.0 * PI * j as f64 / n as f64;
            Complex64::new(libm::cos(phase), libm::sin(phase))
        })
        .collect();
    (0..n)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut idx = 0usize;
            for &x in frame {
                acc += table[idx] * x;
                idx += k;
                if idx >= n {
                    idx -= n;
                }
            }
            acc
        })
        .collect()
}

/// One (possibly fractional) bin of the naive DFT.
pub fn dft_naive_bin(frame: &[f64], k: f64) -> Complex64 {
    let n = frame.len() as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, &x) in frame.iter().enumerate() {
        // reduce the phase index modulo N before scaling to keep the argument small
        let idx = libm::fmod(k * i as f64, n);
        let phase = -2.0 * PI * idx / n;
        acc += Complex64::new(x * libm::cos(phase), x * libm::sin(phase));
    }
    acc
}

/// Precomputed radix-2 plan for one transform size.
#[derive(Debug, Clone)]
pub struct Fft {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<u32>,
}

impl Fft {
    pub fn new(n: usize) -> Result<Self> {
        if !is_power_of_two(n) {
            return Err(Error::invalid(alloc::format!(
                "FFT length {n} is not a power of two"
            )));
        }
        let twiddles = (0..n / 2)
            .map(|j| {
                let phase = -2.0 * PI * j as f64 / n as f64;
                Complex64::new(libm::cos(phase), libm::sin(phase))
            })
            .collect();
        let bits = n.trailing_zeros();
        let bitrev = (0..n as u32)
            .map(|i| {
                if bits == 0 {
                    0
                } else {
                    i.reverse_bits() >> (32 - bits)
                }
            })
            .collect();
        Ok(Fft {
            n,
            twiddles,
            bitrev,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place forward transform.
    pub fn process(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.n, "buffer length does not match FFT plan");
        for i in 0..self.n {
            let j = self.bitrev[i] as usize;
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= self.n {
            let half = size / 2;
            let stride = self.n / size;
            for start in (0..self.n).step_by(size) {
                for j in 0..half {
                    let w = self.twiddles[j * stride];
                    let a = buf[start + j];
                    let b = buf[start + j + half] * w;
                    buf[start + j] = a + b;
                    buf[start + j + half] = a - b;
                }
            }
            size *= 2;
        }
    }
}

/// Forward transform of a complex sequence whose length is a power of two.
pub fn fft(input: &[Complex64]) -> Result<Vec<Complex64>> {
    let plan = Fft::new(input.len())?;
    let mut buf = input.to_vec();
    plan.process(&mut buf);
    Ok(buf)
}

pub fn fft_real(input: &[f64]) -> Result<Vec<Complex64>> {
    let plan = Fft::new(input.len())?;
    let mut buf: Vec<Complex64> = input.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    plan.process(&mut buf);
    Ok(buf)
}
