//! On-disk formats for signals, time-frequency grids, images, checkpoints
//! and training logs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tfmd_core::cnn::{Architecture, Network, TrainingHistory};
use tfmd_core::dsp::TimeSeries;
use tfmd_core::imaging::RgbImage;
use tfmd_core::motorsim::{FaultClass, Load};
use tfmd_core::tfr::{Spectrogram, TFGrid};

use crate::container::{self, write_bytes};
use crate::{Error, Result};

/// JSON sidecar of a raw signal file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSidecar {
    pub sample_rate_hz: f64,
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<FaultClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load: Option<Load>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// `foo.f32` → `foo.json`.
pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

/// Raw little-endian `f32` samples at `raw`, metadata next to it.
pub fn write_timeseries(
    raw: &Path,
    ts: &TimeSeries,
    label: Option<FaultClass>,
    load: Option<Load>,
    seed: Option<u64>,
) -> Result<()> {
    let bytes: Vec<u8> = ts
        .samples()
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    write_bytes(raw, &bytes)?;
    let meta = SignalSidecar {
        sample_rate_hz: ts.sample_rate_hz(),
        n_samples: ts.len(),
        label,
        load,
        seed,
    };
    container::write_json(&sidecar_path(raw), &meta)
}

pub fn read_timeseries(raw: &Path) -> Result<(TimeSeries, SignalSidecar)> {
    let meta: SignalSidecar = container::read_json(&sidecar_path(raw))?;
    let bytes = fs::read(raw).map_err(|e| Error::io(raw, e))?;
    if bytes.len() != 4 * meta.n_samples {
        return Err(Error::format(
            raw,
            format!("{} bytes for {} samples", bytes.len(), meta.n_samples),
        ));
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((TimeSeries::new(samples, meta.sample_rate_hz)?, meta))
}

/// Axes shared by spectrogram and grid exports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub n_frames: usize,
    pub n_bins: usize,
    pub times_s: Vec<f64>,
    pub freqs_hz: Vec<f64>,
    pub sample_rate_hz: f64,
    pub window_len: usize,
    pub hop: usize,
    pub n_fft: usize,
}

/// Energy values, row-major frame then bin.
pub fn write_spectrogram(path: &Path, s: &Spectrogram) -> Result<()> {
    let h = GridHeader {
        n_frames: s.n_frames(),
        n_bins: s.n_bins(),
        times_s: s.times_s.clone(),
        freqs_hz: s.freqs_hz.clone(),
        sample_rate_hz: s.sample_rate_hz,
        window_len: s.window_len,
        hop: s.hop,
        n_fft: s.n_fft,
    };
    let data: Vec<f32> = s.energy.as_slice().iter().map(|&v| v as f32).collect();
    container::write(path, "spectrogram", &h, &data)
}

pub fn read_spectrogram(path: &Path) -> Result<(GridHeader, Vec<f32>)> {
    container::read(path, "spectrogram")
}

/// Interleaved `(re, im)` pairs, row-major frame then bin.
pub fn write_tfgrid(path: &Path, g: &TFGrid) -> Result<()> {
    let h = GridHeader {
        n_frames: g.n_frames(),
        n_bins: g.n_bins(),
        times_s: g.times_s.clone(),
        freqs_hz: g.freqs_hz.clone(),
        sample_rate_hz: g.sample_rate_hz,
        window_len: g.window_len,
        hop: g.hop,
        n_fft: g.n_fft,
    };
    let data: Vec<f32> = g
        .values
        .iter()
        .flat_map(|c| [c.re as f32, c.im as f32])
        .collect();
    container::write(path, "tfgrid", &h, &data)
}

pub fn read_tfgrid(path: &Path) -> Result<(GridHeader, Vec<f32>)> {
    container::read(path, "tfgrid")
}

/// 8-bit RGB, no interlacing, fixed compression, no ancillary chunks, so
/// equal images give equal bytes.
pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Default);
        enc.set_filter(png::FilterType::NoFilter);
        enc.set_adaptive_filter(png::AdaptiveFilterType::NonAdaptive);
        let mut w = enc.write_header().expect("in-memory PNG header");
        w.write_image_data(img.pixels())
            .expect("pixel count matches the header");
    }
    out
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    write_bytes(path, &encode_png(img))
}

pub fn read_png(path: &Path) -> Result<RgbImage> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(std::io::BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| Error::format(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e))?;
    buf.truncate(info.buffer_size());
    let pixels = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf
            .chunks_exact(2)
            .flat_map(|p| [p[0], p[0], p[0]])
            .collect(),
        other => {
            return Err(Error::format(
                path,
                format!("unsupported PNG colour type {other:?}"),
            ))
        }
    };
    Ok(RgbImage::new(
        info.width as usize,
        info.height as usize,
        pixels,
    )?)
}

/// Checkpoint header; the payload is the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    /// Initialization seed.
    pub seed: u64,
    /// Epochs completed when the parameters were captured.
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub fn write_checkpoint(path: &Path, header: &CheckpointHeader, net: &Network<f32>) -> Result<()> {
    container::write(path, "checkpoint", header, net.params())
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Network<f32>)> {
    let (h, params): (CheckpointHeader, Vec<f32>) = container::read(path, "checkpoint")?;
    let net = Network::from_params(h.architecture.clone(), params)?;
    Ok((h, net))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn history_csv(h: &TrainingHistory) -> String {
    let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for r in &h.epochs {
        s += &format!(
            "{},{},{},{},{}\n",
            r.epoch,
            r.train_loss,
            r.train_acc,
            opt(r.val_loss),
            opt(r.val_acc)
        );
    }
    s
}

pub fn write_history(path: &Path, h: &TrainingHistory) -> Result<()> {
    write_bytes(path, history_csv(h).as_bytes())
}

/// `rows` as CSV lines below `header`.
pub fn write_csv<I, R>(path: &Path, header: &str, rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: AsRef<str>,
{
    let mut s = format!("{header}\n");
    for r in rows {
        s += r.as_ref();
        s.push('\n');
    }
    write_bytes(path, s.as_bytes())
}
