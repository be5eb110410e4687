//! Frequency-modulated carrier synthesis.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::modgen::ModulationSignal;
use crate::orthoseq::SetDescriptor;

pub const OUTPUT_PEAK: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PhaseMode {
    Sine,
    Cosine,
    Alternating,
    Random {
        seed: u64,
    },
    /// `-pi k (k - 1) / K`, or its negation when `ascending`.
    Schroeder {
        #[serde(default)]
        ascending: bool,
    },
}

impl PhaseMode {
    /// Parses `sine`, `cosine`, `alternating`, `random:<seed>`, `schroeder`
    /// and `schroeder-up`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "sine" => Ok(Self::Sine),
            "cosine" => Ok(Self::Cosine),
            "alternating" => Ok(Self::Alternating),
            "schroeder" | "schroeder-down" => Ok(Self::Schroeder { ascending: false }),
            "schroeder-up" => Ok(Self::Schroeder { ascending: true }),
            "random" => Ok(Self::Random { seed: 0 }),
            _ => match s.strip_prefix("random:") {
                Some(seed) => seed
                    .parse()
                    .map(|seed| Self::Random { seed })
                    .map_err(|_| Error::param(format!("bad random phase seed {seed:?}"))),
                None => Err(Error::param(format!("unknown phase mode {s:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarrierSpec {
    pub f_target: f64,
    pub harmonics: Vec<u32>,
    /// Per-component amplitudes; empty means all ones.
    #[serde(default)]
    pub amplitudes: Vec<f64>,
    pub phase_mode: PhaseMode,
}

impl CarrierSpec {
    pub fn harmonic_complex(f_target: f64, harmonics: Vec<u32>, phase_mode: PhaseMode) -> Self {
        Self { f_target, harmonics, amplitudes: Vec::new(), phase_mode }
    }

    pub fn sine(f_target: f64) -> Self {
        Self::harmonic_complex(f_target, vec![1], PhaseMode::Sine)
    }

    pub fn lowest_harmonic(&self) -> u32 {
        self.harmonics.iter().copied().min().unwrap_or(1)
    }

    fn amplitude_list(&self) -> Vec<f64> {
        if self.amplitudes.is_empty() {
            vec![1.0; self.harmonics.len()]
        } else {
            self.amplitudes.clone()
        }
    }

    /// Checks the component list and the alias-free condition for a
    /// modulation reaching `max_cents`.
    pub fn validate(&self, rate: f64, max_cents: f64) -> Result<()> {
        if !(self.f_target.is_finite() && self.f_target > 0.0) {
            return Err(Error::param(format!("target frequency must be positive, got {}", self.f_target)));
        }
        if self.harmonics.is_empty() {
            return Err(Error::param("carrier needs at least one harmonic"));
        }
        if self.harmonics.contains(&0) {
            return Err(Error::param("harmonic indices start at 1"));
        }
        let mut sorted = self.harmonics.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.harmonics.len() {
            return Err(Error::param("harmonic indices must be distinct"));
        }
        if !self.amplitudes.is_empty() {
            if self.amplitudes.len() != self.harmonics.len() {
                return Err(Error::param(format!(
                    "{} amplitudes given for {} harmonics",
                    self.amplitudes.len(),
                    self.harmonics.len()
                )));
            }
            if self.amplitudes.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                return Err(Error::param("amplitudes must be positive"));
            }
        }
        let top = *sorted.last().unwrap() as f64 * self.f_target * 2f64.powf(max_cents.max(0.0) / 1200.0);
        if top >= rate / 2.0 {
            return Err(Error::param(format!(
                "highest component reaches {top:.1} Hz, at or above Nyquist ({} Hz)",
                rate / 2.0
            )));
        }
        Ok(())
    }
}

/// Parses component lists such as `1-20`, `2-20` or `1,3,5-7`.
pub fn parse_harmonics(spec: &str) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            return Err(Error::param(format!("empty item in harmonic list {spec:?}")));
        }
        let num = |s: &str| -> Result<u32> {
            let v: u32 = s.trim().parse().map_err(|_| Error::param(format!("bad harmonic index {s:?}")))?;
            if v == 0 {
                return Err(Error::param("harmonic indices start at 1"));
            }
            Ok(v)
        };
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(Error::param(format!("descending range {part:?}")));
                }
                if b - a > 10_000 {
                    return Err(Error::param(format!("range {part:?} too large")));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

pub fn phase_offsets(mode: PhaseMode, harmonics: &[u32]) -> Vec<f64> {
    let count = harmonics.len() as f64;
    match mode {
        PhaseMode::Sine => vec![0.0; harmonics.len()],
        PhaseMode::Cosine => vec![PI / 2.0; harmonics.len()],
        PhaseMode::Alternating => {
            harmonics.iter().map(|&k| if k % 2 == 1 { 0.0 } else { PI / 2.0 }).collect()
        }
        PhaseMode::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            harmonics.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect()
        }
        PhaseMode::Schroeder { ascending } => {
            let sign = if ascending { 1.0 } else { -1.0 };
            harmonics
                .iter()
                .map(|&k| {
                    let k = k as f64;
                    sign * PI * k * (k - 1.0) / count
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestStimulus {
    pub audio: AudioBuffer,
    pub modulation: ModulationSignal,
    pub carrier: CarrierSpec,
    pub set_metadata: Option<SetDescriptor>,
}

/// Unwrapped fundamental phase for a cents trajectory.
pub fn fundamental_phase(cents: &[f64], f_target: f64, rate: f64) -> Vec<f64> {
    let mut phase = Vec::with_capacity(cents.len());
    let mut acc = 0.0f64;
    for (n, c) in cents.iter().enumerate() {
        if n > 0 {
            acc += 2.0 * PI * f_target * 2f64.powf(c / 1200.0) / rate;
        }
        phase.push(acc);
    }
    phase
}

/// Harmonic complex following `cents`, not yet normalized.
pub fn render_carrier(cents: &[f64], carrier: &CarrierSpec, rate: f64) -> Vec<f64> {
    let phase = fundamental_phase(cents, carrier.f_target, rate);
    let offsets = phase_offsets(carrier.phase_mode, &carrier.harmonics);
    let amps = carrier.amplitude_list();
    let comps: Vec<(f64, f64, f64)> = carrier
        .harmonics
        .iter()
        .zip(&offsets)
        .zip(&amps)
        .map(|((&k, &p), &a)| (k as f64, p, a))
        .collect();
    phase
        .iter()
        .map(|&ph| comps.iter().map(|&(k, p, a)| a * (k * ph + p).sin()).sum())
        .collect()
}

pub(crate) fn normalize_peak(samples: &mut [f64]) {
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = OUTPUT_PEAK / peak;
        samples.iter_mut().for_each(|v| *v *= g);
    }
}

pub fn synthesize(modulation: &ModulationSignal, carrier: &CarrierSpec, rate: f64) -> Result<TestStimulus> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::param("sampling rate must be positive"));
    }
    if modulation.is_empty() {
        return Err(Error::param("modulation signal is empty"));
    }
    let max_cents = modulation.cents.iter().cloned().fold(f64::MIN, f64::max);
    carrier.validate(rate, max_cents)?;
    let mut audio = render_carrier(&modulation.cents, carrier, rate);
    normalize_peak(&mut audio);
    Ok(TestStimulus {
        audio: AudioBuffer::new(audio, rate)?,
        modulation: modulation.clone(),
        carrier: carrier.clone(),
        set_metadata: None,
    })
}
