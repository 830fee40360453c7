//! Synthetic single-phase stator-current segments for five motor
//! conditions under five load levels.
//!
//! The waveform is a supply-frequency fundamental whose amplitude grows
//! with load, plus class-specific spectral signatures placed by the usual
//! motor-current-signature rules (slip sidebands, rotor-frequency
//! sidebands, bearing defect lines, supply harmonics), plus white Gaussian
//! noise. Every level and ratio lives in [`MotorSpec`].

mod separability;

pub use separability::{
    class_separability, generator_separability, PairSeparation, SeparabilityReport, MIN_PER_CLASS,
};

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::TimeSeries;
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaultClass {
    Healthy,
    BearingMisalignment,
    StatorInterTurn,
    BrokenRotorBar,
    OuterBearingDefect,
}

impl FaultClass {
    pub const ALL: [FaultClass; 5] = [
        FaultClass::Healthy,
        FaultClass::BearingMisalignment,
        FaultClass::StatorInterTurn,
        FaultClass::BrokenRotorBar,
        FaultClass::OuterBearingDefect,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FaultClass::Healthy => "healthy",
            FaultClass::BearingMisalignment => "bearing-misalignment",
            FaultClass::StatorInterTurn => "stator-inter-turn",
            FaultClass::BrokenRotorBar => "broken-rotor-bar",
            FaultClass::OuterBearingDefect => "outer-bearing-defect",
        }
    }
}

impl fmt::Display for FaultClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FaultClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FaultClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(alloc::format!("unknown fault class {s:?}")))
    }
}

/// Mechanical load as a percentage of rated load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Load {
    P0,
    P25,
    P50,
    P75,
    P100,
}

impl Load {
    pub const ALL: [Load; 5] = [Load::P0, Load::P25, Load::P50, Load::P75, Load::P100];

    pub fn percent(self) -> u32 {
        match self {
            Load::P0 => 0,
            Load::P25 => 25,
            Load::P50 => 50,
            Load::P75 => 75,
            Load::P100 => 100,
        }
    }

    pub fn fraction(self) -> f64 {
        self.percent() as f64 / 100.0
    }
}

impl TryFrom<u32> for Load {
    type Error = Error;

    fn try_from(p: u32) -> Result<Self> {
        Load::ALL
            .into_iter()
            .find(|l| l.percent() == p)
            .ok_or_else(|| {
                Error::invalid(alloc::format!("load {p}% is not one of 0, 25, 50, 75, 100"))
            })
    }
}

impl From<Load> for u32 {
    fn from(l: Load) -> u32 {
        l.percent()
    }
}

impl fmt::Display for Load {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.percent())
    }
}

/// Levels of the injected signatures, in dB relative to the fundamental.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Signatures {
    /// Sidebands at `f_s (1 ± 2ks)`, `k = 1..=broken_bar_orders`.
    pub broken_bar_db: f64,
    pub broken_bar_orders: u32,
    /// Sidebands at `f_s ± f_r`.
    pub misalignment_db: f64,
    /// Lines at `|f_s ± m f_bpfo|`, `m = 1..=bearing_orders`.
    pub bearing_db: f64,
    pub bearing_orders: u32,
    /// Outer-race defect frequency as a multiple of rotor frequency.
    pub bpfo_ratio: f64,
    pub stator_third_db: f64,
    pub stator_fifth_db: f64,
    pub healthy_fifth_db: f64,
    pub healthy_seventh_db: f64,
}

impl Default for Signatures {
    fn default() -> Self {
        Signatures {
            broken_bar_db: -25.0,
            broken_bar_orders: 2,
            misalignment_db: -30.0,
            bearing_db: -35.0,
            bearing_orders: 2,
            bpfo_ratio: 3.5,
            stator_third_db: -20.0,
            stator_fifth_db: -30.0,
            healthy_fifth_db: -45.0,
            healthy_seventh_db: -45.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotorSpec {
    pub supply_hz: f64,
    pub pole_pairs: u32,
    pub fs_hz: f64,
    pub segment_len: usize,
    pub snr_db: f64,
    /// Slip is affine in load fraction: `slip_no_load + (slip_full_load -
    /// slip_no_load) * load`.
    pub slip_no_load: f64,
    pub slip_full_load: f64,
    /// Fundamental current amplitude at no load and at full load (A).
    pub amplitude_no_load: f64,
    pub amplitude_full_load: f64,
    /// Relative half-width of the uniform per-component amplitude jitter.
    pub amplitude_jitter: f64,
    /// Scales every fault signature amplitude; 0 leaves fundamental + noise.
    pub signature_gain: f64,
    pub signatures: Signatures,
}

impl Default for MotorSpec {
    fn default() -> Self {
        MotorSpec {
            supply_hz: 60.0,
            pole_pairs: 2,
            fs_hz: 10_000.0,
            segment_len: 8192,
            snr_db: 60.0,
            slip_no_load: 0.01,
            slip_full_load: 0.05,
            amplitude_no_load: 4.0,
            amplitude_full_load: 10.0,
            amplitude_jitter: 0.01,
            signature_gain: 1.0,
            signatures: Signatures::default(),
        }
    }
}

/// One injected sinusoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub freq_hz: f64,
    /// Level relative to the fundamental.
    pub rel_db: f64,
}

impl MotorSpec {
    /// Same generator with every fault signature removed.
    pub fn noise_only() -> Self {
        MotorSpec {
            signature_gain: 0.0,
            ..MotorSpec::default()
        }
    }

    pub fn slip(&self, load: Load) -> f64 {
        self.slip_no_load + (self.slip_full_load - self.slip_no_load) * load.fraction()
    }

    /// Mechanical rotor frequency `(f_s / p)(1 − s)`.
    pub fn rotor_hz(&self, load: Load) -> f64 {
        self.supply_hz / self.pole_pairs as f64 * (1.0 - self.slip(load))
    }

    pub fn fundamental_amplitude(&self, load: Load) -> f64 {
        self.amplitude_no_load
            + (self.amplitude_full_load - self.amplitude_no_load) * load.fraction()
    }

    /// Signature lines of a class at a load, excluding the fundamental.
    pub fn components(&self, class: FaultClass, load: Load) -> Vec<Component> {
        let sig = &self.signatures;
        let f = self.supply_hz;
        let s = self.slip(load);
        let fr = self.rotor_hz(load);
        let mut out = Vec::new();
        let mut push = |freq_hz: f64, rel_db: f64| out.push(Component { freq_hz, rel_db });
        match class {
            FaultClass::Healthy => {
                push(5.0 * f, sig.healthy_fifth_db);
                push(7.0 * f, sig.healthy_seventh_db);
            }
            FaultClass::BearingMisalignment => {
                push(f - fr, sig.misalignment_db);
                push(f + fr, sig.misalignment_db);
            }
            FaultClass::StatorInterTurn => {
                push(3.0 * f, sig.stator_third_db);
                push(5.0 * f, sig.stator_fifth_db);
            }
            FaultClass::BrokenRotorBar => {
                for k in 1..=sig.broken_bar_orders {
                    let offset = 2.0 * k as f64 * s;
                    push(f * (1.0 - offset), sig.broken_bar_db);
                    push(f * (1.0 + offset), sig.broken_bar_db);
                }
            }
            FaultClass::OuterBearingDefect => {
                let bpfo = sig.bpfo_ratio * fr;
                for m in 1..=sig.bearing_orders {
                    push(libm::fabs(f - m as f64 * bpfo), sig.bearing_db);
                    push(f + m as f64 * bpfo, sig.bearing_db);
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidArgument(msg));
        if !(self.fs_hz > 0.0 && self.supply_hz > 0.0) {
            return bad(alloc::format!(
                "fs {} and supply {} must be positive",
                self.fs_hz,
                self.supply_hz
            ));
        }
        if self.pole_pairs == 0 || self.segment_len == 0 {
            return bad(alloc::string::String::from(
                "pole_pairs and segment_len must be positive",
            ));
        }
        for load in Load::ALL {
            let s = self.slip(load);
            if !(s > 0.0 && s < 0.1) {
                return bad(alloc::format!("slip {s} at {load}% load outside (0, 0.1)"));
            }
            for class in FaultClass::ALL {
                for c in self.components(class, load) {
                    if 2.0 * c.freq_hz > self.fs_hz {
                        return bad(alloc::format!(
                            "{class} line at {} Hz exceeds fs/2",
                            c.freq_hz
                        ));
                    }
                }
            }
        }
        if !(0.0..1.0).contains(&self.amplitude_jitter) {
            return bad(alloc::format!(
                "amplitude jitter {} outside [0, 1)",
                self.amplitude_jitter
            ));
        }
        Ok(())
    }
}

/// Seed of the `index`-th segment of a (class, load) cell.
pub fn cell_seed(base_seed: u64, class: FaultClass, load: Load, index: usize) -> u64 {
    seed::derive(
        base_seed,
        &[class.index() as u64, load.percent() as u64, index as u64],
    )
}

/// Generate one labelled segment. Fully determined by its arguments.
pub fn synth_signal(
    class: FaultClass,
    load: Load,
    spec: &MotorSpec,
    seed: u64,
) -> Result<TimeSeries> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = spec.amplitude_jitter;
    let mut draw_tone = |freq_hz: f64, amplitude: f64| -> (f64, f64, f64) {
        let phase = rng.gen_range(0.0..2.0 * PI);
        let gain = if jitter > 0.0 {
            1.0 + rng.gen_range(-jitter..jitter)
        } else {
            1.0
        };
        (2.0 * PI * freq_hz / spec.fs_hz, amplitude * gain, phase)
    };

    let a = spec.fundamental_amplitude(load);
    let mut tones = Vec::new();
    tones.push(draw_tone(spec.supply_hz, a));
    for c in spec.components(class, load) {
        tones.push(draw_tone(
            c.freq_hz,
            a * spec.signature_gain * libm::pow(10.0, c.rel_db / 20.0),
        ));
    }
    let noise_sigma = a / libm::sqrt(2.0) * libm::pow(10.0, -spec.snr_db / 20.0);

    let samples = (0..spec.segment_len)
        .map(|n| {
            let t = n as f64;
            let clean: f64 = tones
                .iter()
                .map(|&(w, amp, ph)| amp * libm::sin(w * t + ph))
                .sum();
            let z: f64 = rng.sample(StandardNormal);
            clean + noise_sigma * z
        })
        .collect();
    TimeSeries::new(samples, spec.fs_hz)
}

/// One planned dataset entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedSegment {
    pub class: FaultClass,
    pub load: Load,
    pub index: usize,
    pub seed: u64,
}

/// Balanced plan: `per_cell` segments for every (class, load) pair, in
/// class, load, index order.
pub fn dataset_plan(per_cell: usize, base_seed: u64) -> Result<Vec<PlannedSegment>> {
    if per_cell == 0 {
        return Err(Error::invalid("per_cell must be at least 1"));
    }
    let mut plan = Vec::with_capacity(per_cell * 25);
    for class in FaultClass::ALL {
        for load in Load::ALL {
            for index in 0..per_cell {
                plan.push(PlannedSegment {
                    class,
                    load,
                    index,
                    seed: cell_seed(base_seed, class, load, index),
                });
            }
        }
    }
    Ok(plan)
}
