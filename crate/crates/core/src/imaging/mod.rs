//! Rasterizing spectrograms into the fixed-size RGB images the classifier
//! consumes.
//!
//! The pipeline is `to_db → crop → orient → normalize01 → resize_bilinear →
//! apply_colormap`. Orientation puts time on the horizontal axis and the
//! highest frequency on the top row.

mod viridis;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tfr::Spectrogram;
use crate::{Error, Matrix, Result};

/// 8-bit RGB raster, row-major, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height * 3 {
            return Err(Error::ShapeMismatch {
                expected: alloc::format!("{width}x{height}x3 bytes"),
                got: alloc::format!("{} bytes", pixels.len()),
            });
        }
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Planar channel-first floats in [0, 1], the classifier's input layout.
    pub fn to_chw<T: num_traits::Float>(&self) -> Vec<T> {
        let plane = self.width * self.height;
        let scale = T::from(1.0 / 255.0).unwrap_or_else(T::zero);
        let mut out = alloc::vec![T::zero(); 3 * plane];
        for (p, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = T::from(px[c]).unwrap_or_else(T::zero) * scale;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageConfig {
    pub width: usize,
    pub height: usize,
    pub floor_db: f64,
    /// Keep only bins at or below this frequency. `None` keeps 0..fs/2.
    /// The default keeps the 64 lowest bins at 10 kHz / 1024, one bin per
    /// image row, which covers every injected signature line.
    pub max_freq_hz: Option<f64>,
}

impl Default for ImageConfig {
    fn default() -> Self {
        ImageConfig {
            width: 64,
            height: 64,
            floor_db: -80.0,
            max_freq_hz: Some(620.0),
        }
    }
}

/// `10·log10(E / max E)` clamped below at `floor_db`.
pub fn to_db(s: &Spectrogram, floor_db: f64) -> Result<Matrix> {
    if !(floor_db < 0.0) {
        return Err(Error::invalid(alloc::format!(
            "dB floor {floor_db} must be negative"
        )));
    }
    let max = s.energy.as_slice().iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok(Matrix::filled(s.n_frames(), s.n_bins(), floor_db));
    }
    Ok(s.energy.map(|e| {
        let db = 10.0 * libm::log10(e / max);
        if db > floor_db {
            db
        } else {
            floor_db
        }
    }))
}

/// Affine map of `[min, max]` onto `[0, 1]`; a constant matrix maps to 0.5.
pub fn normalize01(m: &Matrix) -> Matrix {
    match m.min_max() {
        Some((lo, hi)) if hi > lo => m.map(|v| (v - lo) / (hi - lo)),
        _ => Matrix::filled(m.rows(), m.cols(), 0.5),
    }
}

/// Corner-aligned bilinear resampling to `out_w × out_h` (columns × rows).
pub fn resize_bilinear(m: &Matrix, out_w: usize, out_h: usize) -> Result<Matrix> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(alloc::format!(
            "output size {out_w}x{out_h} has a zero side"
        )));
    }
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::invalid("cannot resize an empty matrix"));
    }
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (libm::floor(pos) as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|x| coord(x, out_w, m.cols())).collect();
    Ok(Matrix::from_fn(out_h, out_w, |y, x| {
        let (r0, r1, fy) = coord(y, out_h, m.rows());
        let (c0, c1, fx) = cols[x];
        let top = m.get(r0, c0) * (1.0 - fx) + m.get(r0, c1) * fx;
        let bottom = m.get(r1, c0) * (1.0 - fx) + m.get(r1, c1) * fx;
        top * (1.0 - fy) + bottom * fy
    }))
}

/// Continuous colormap lookup: linear interpolation between the 256 table
/// entries. `v` must already lie in [0, 1].
pub fn colormap_sample(v: f64) -> [f64; 3] {
    let pos = v * 255.0;
    let lo = (libm::floor(pos) as usize).min(255);
    let hi = (lo + 1).min(255);
    let f = pos - lo as f64;
    let (a, b) = (viridis::VIRIDIS[lo], viridis::VIRIDIS[hi]);
    [
        a[0] + (b[0] - a[0]) * f,
        a[1] + (b[1] - a[1]) * f,
        a[2] + (b[2] - a[2]) * f,
    ]
}

/// Rec. 709 luma of an sRGB triple.
pub fn luminance(rgb: [f64; 3]) -> f64 {
    0.2126 * rgb[0] + 0.7152 * rgb[1] + 0.0722 * rgb[2]
}

/// A colored image plus the number of inputs that had to be clamped into
/// [0, 1] (NaN counts as clamped, to 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Colored {
    pub image: RgbImage,
    pub clamped: usize,
}

pub fn apply_colormap(m: &Matrix) -> Colored {
    let mut clamped = 0;
    let mut pixels = Vec::with_capacity(m.rows() * m.cols() * 3);
    for &v in m.as_slice() {
        let v = if v.is_nan() {
            clamped += 1;
            0.0
        } else if !(0.0..=1.0).contains(&v) {
            clamped += 1;
            v.clamp(0.0, 1.0)
        } else {
            v
        };
        for c in colormap_sample(v) {
            pixels.push(libm::round(c * 255.0) as u8);
        }
    }
    Colored {
        image: RgbImage {
            width: m.cols(),
            height: m.rows(),
            pixels,
        },
        clamped,
    }
}

/// dB image in display orientation (rows = frequency, highest first;
/// columns = time), cropped to the configured band.
fn oriented_db(s: &Spectrogram, cfg: &ImageConfig) -> Result<Matrix> {
    let db = to_db(s, cfg.floor_db)?;
    let n_bins = match cfg.max_freq_hz {
        Some(f) => s.freqs_hz.iter().take_while(|&&hz| hz <= f).count().max(1),
        None => s.n_bins(),
    };
    Ok(Matrix::from_fn(n_bins, s.n_frames(), |r, c| {
        db.get(c, n_bins - 1 - r)
    }))
}

/// Normalized single-channel raster in [0, 1], `height × width`.
pub fn render_intensity(s: &Spectrogram, cfg: &ImageConfig) -> Result<Matrix> {
    let scaled = normalize01(&oriented_db(s, cfg)?);
    resize_bilinear(&scaled, cfg.width, cfg.height)
}

/// Full spectrogram-to-RGB rendering.
pub fn render(s: &Spectrogram, cfg: &ImageConfig) -> Result<RgbImage> {
    Ok(apply_colormap(&render_intensity(s, cfg)?).image)
}
