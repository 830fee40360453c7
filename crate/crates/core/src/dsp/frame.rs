use alloc::vec::Vec;

use super::TimeSeries;
use crate::{Error, Matrix, Result};

/// Overlapping (or abutting) frames cut from a signal.
///
/// Frame `m` covers samples `[m * hop, m * hop + L)`; samples past the end
/// of the signal read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub frames: Matrix,
    pub hop: usize,
    /// Window-center sample position of each frame, `m * hop + (L - 1) / 2`.
    pub frame_centers: Vec<f64>,
}

impl FrameSet {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn frame(&self, m: usize) -> &[f64] {
        self.frames.row(m)
    }
}

/// `floor((len - 1) / hop) + 1`: every sample starts inside some frame.
pub fn frame_count(len: usize, hop: usize) -> usize {
    (len.max(1) - 1) / hop + 1
}

pub(crate) fn check_framing(len: usize, window_len: usize, hop: usize) -> Result<()> {
    if window_len < 2 {
        return Err(Error::invalid(alloc::format!(
            "window length {window_len} < 2"
        )));
    }
    if hop == 0 || hop > window_len {
        return Err(Error::invalid(alloc::format!(
            "hop {hop} outside 1..={window_len}"
        )));
    }
    if len == 0 {
        return Err(Error::invalid("cannot frame an empty signal"));
    }
    Ok(())
}

pub fn frame_signal(ts: &TimeSeries, window_len: usize, hop: usize) -> Result<FrameSet> {
    let x = ts.samples();
    check_framing(x.len(), window_len, hop)?;
    let n_frames = frame_count(x.len(), hop);
    let mut frames = Matrix::zeros(n_frames, window_len);
    let c = (window_len - 1) as f64 / 2.0;
    let mut frame_centers = Vec::with_capacity(n_frames);
    for m in 0..n_frames {
        let start = m * hop;
        let end = (start + window_len).min(x.len());
        let row = &mut frames.as_mut_slice()[m * window_len..(m + 1) * window_len];
        row[..end - start].copy_from_slice(&x[start..end]);
        frame_centers.push(start as f64 + c);
    }
    Ok(FrameSet {
        frames,
        hop,
        frame_centers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ramp(n: usize) -> TimeSeries {
        TimeSeries::new((1..=n).map(|v| v as f64).collect(), 1.0).unwrap()
    }

    #[test]
    fn non_overlapping_partition() {
        let fs = frame_signal(&ramp(8), 4, 4).unwrap();
        assert_eq!(fs.len(), 2);
        assert_eq!(fs.frame_centers, vec![1.5, 5.5]);
        assert_eq!(fs.frame(1), &[5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn overlapping_tail_is_zero_padded() {
        let fs = frame_signal(&ramp(8), 4, 2).unwrap();
        assert_eq!(fs.len(), 4);
        assert_eq!(fs.frame(0), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(fs.frame(3), &[7.0, 8.0, 0.0, 0.0]);
    }

    #[test]
    fn single_frame_is_identity() {
        let fs = frame_signal(&ramp(4), 4, 4).unwrap();
        assert_eq!(fs.len(), 1);
        assert_eq!(fs.frame(0), ramp(4).samples());
    }

    #[test]
    fn bad_hops() {
        assert!(frame_signal(&ramp(8), 4, 0).is_err());
        assert!(frame_signal(&ramp(8), 4, 5).is_err());
        assert!(frame_signal(&ramp(8), 1, 1).is_err());
    }

    #[test]
    fn round_trip_with_hop_equal_length() {
        for (len, l) in [(17, 4), (64, 8), (5, 5), (1, 3)] {
            let ts = ramp(len);
            let fs = frame_signal(&ts, l, l).unwrap();
            let joined: Vec<f64> = (0..fs.len())
                .flat_map(|m| fs.frame(m).to_vec())
                .take(len)
                .collect();
            assert_eq!(joined, ts.samples());
        }
    }
}
