use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{cell_seed, synth_signal, FaultClass, Load, MotorSpec};
use crate::imaging::{render_intensity, ImageConfig};
use crate::tfr::{transform, Method, TfrConfig};
use crate::{Error, Result};

/// Minimum samples per class for a meaningful spread estimate.
pub const MIN_PER_CLASS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSeparation {
    pub a: FaultClass,
    pub b: FaultClass,
    /// `‖μ_a − μ_b‖ / (σ_a + σ_b)`.
    pub ratio: f64,
    /// `ratio < 1`.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub pairs: Vec<PairSeparation>,
}

impl SeparabilityReport {
    pub fn ratio(&self, a: FaultClass, b: FaultClass) -> Option<f64> {
        self.pairs
            .iter()
            .find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
            .map(|p| p.ratio)
    }

    pub fn flagged(&self) -> impl Iterator<Item = &PairSeparation> {
        self.pairs.iter().filter(|p| p.flagged)
    }
}

struct ClassStats {
    class: FaultClass,
    mean: Vec<f64>,
    /// RMS distance of the class members from their mean.
    spread: f64,
}

/// Distance ratio between class-mean feature vectors (typically flattened
/// spectrogram images), for every pair of classes present.
///
/// The spread `σ` of a class is the RMS Euclidean distance of its members
/// from the class mean, so the ratio compares mean separation against the
/// typical scatter of individual images.
pub fn class_separability(samples: &[(FaultClass, Vec<f64>)]) -> Result<SeparabilityReport> {
    let dim = samples.first().map(|s| s.1.len()).unwrap_or(0);
    if samples.iter().any(|s| s.1.len() != dim) {
        return Err(Error::invalid("feature vectors differ in length"));
    }
    let mut stats = Vec::new();
    for class in FaultClass::ALL {
        let members: Vec<&[f64]> = samples
            .iter()
            .filter(|s| s.0 == class)
            .map(|s| s.1.as_slice())
            .collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < MIN_PER_CLASS {
            return Err(Error::invalid(alloc::format!(
                "class {class} has {} samples, need at least {MIN_PER_CLASS}",
                members.len()
            )));
        }
        let n = members.len() as f64;
        let mut mean = alloc::vec![0.0; dim];
        for m in &members {
            for (acc, v) in mean.iter_mut().zip(m.iter()) {
                *acc += v / n;
            }
        }
        let sq: f64 = members
            .iter()
            .map(|m| {
                m.iter()
                    .zip(&mean)
                    .map(|(v, mu)| (v - mu) * (v - mu))
                    .sum::<f64>()
            })
            .sum();
        stats.push(ClassStats {
            class,
            mean,
            spread: libm::sqrt(sq / n),
        });
    }
    if stats.len() < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    let mut pairs = Vec::new();
    for i in 0..stats.len() {
        for j in i + 1..stats.len() {
            let (a, b) = (&stats[i], &stats[j]);
            let dist = libm::sqrt(
                a.mean
                    .iter()
                    .zip(&b.mean)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>(),
            );
            let spread = a.spread + b.spread;
            let ratio = if dist == 0.0 {
                0.0
            } else if spread == 0.0 {
                f64::INFINITY
            } else {
                dist / spread
            };
            pairs.push(PairSeparation {
                a: a.class,
                b: b.class,
                ratio,
                flagged: ratio < 1.0,
            });
        }
    }
    Ok(SeparabilityReport { pairs })
}

/// Generate `per_class` segments per class at one load, render them with
/// `method`, and report separability of the normalized images.
pub fn generator_separability(
    spec: &MotorSpec,
    method: Method,
    tfr: &TfrConfig,
    image: &ImageConfig,
    load: Load,
    per_class: usize,
    base_seed: u64,
) -> Result<SeparabilityReport> {
    let mut samples = Vec::with_capacity(per_class * FaultClass::COUNT);
    for class in FaultClass::ALL {
        for index in 0..per_class {
            let ts = synth_signal(class, load, spec, cell_seed(base_seed, class, load, index))?;
            let img = render_intensity(&transform(&ts, method, tfr)?, image)?;
            samples.push((class, img.into_vec()));
        }
    }
    class_separability(&samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn identical_classes_have_zero_ratio() {
        let mut samples = Vec::new();
        for i in 0..10 {
            let v = vec![i as f64, (i * i) as f64];
            samples.push((FaultClass::Healthy, v.clone()));
            samples.push((FaultClass::BrokenRotorBar, v));
        }
        let r = class_separability(&samples).unwrap();
        assert_eq!(r.pairs.len(), 1);
        assert_eq!(r.pairs[0].ratio, 0.0);
        assert!(r.pairs[0].flagged);
    }

    #[test]
    fn too_few_samples() {
        let samples: Vec<_> = (0..9)
            .flat_map(|i| {
                [
                    (FaultClass::Healthy, vec![i as f64]),
                    (FaultClass::StatorInterTurn, vec![1.0]),
                ]
            })
            .collect();
        assert!(matches!(
            class_separability(&samples),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn well_separated_clusters() {
        let samples: Vec<_> = (0..10)
            .flat_map(|i| {
                let e = (i as f64 - 4.5) * 0.01;
                [
                    (FaultClass::Healthy, vec![e, 0.0]),
                    (FaultClass::StatorInterTurn, vec![1.0 + e, 0.0]),
                ]
            })
            .collect();
        let r = class_separability(&samples).unwrap();
        assert!(r.pairs[0].ratio > 10.0 && !r.pairs[0].flagged);
    }
}
